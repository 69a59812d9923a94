#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edgefool/image.hpp"
#include "edgefool/packed_weights.hpp"
#include "edgefool/tensor.hpp"

namespace edgefool {

struct LabeledImage {
  Image image;
  int label = 0;
};

enum class LayerKind { Conv, Activation, Pool, Dense };

struct ClassifierLayer {
  LayerKind kind = LayerKind::Conv;
  ConvSpec conv;   // Conv
  Tensor weights;  // Conv, Dense
  Tensor bias;     // Conv, Dense
  double slope = 0.0;  // Activation
};

/// Frozen image classifier. Inputs are [0,1] RGB images of the stored size,
/// standardized per channel with the training-set mean/std before the first layer.
struct ClassifierModel {
  std::string architecture;
  std::size_t num_classes = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
  std::vector<ClassifierLayer> layers;

  friend bool operator==(const ClassifierModel&, const ClassifierModel&);
};

// "cnn-a": three conv(3x3)+leaky-ReLU+avgpool blocks (16, 32, 32 maps) and a linear head.
// "cnn-b": conv(5x5, 8)+pool, conv(3x3, 16)+pool and a linear head.
const std::vector<std::string>& known_architectures();
ClassifierModel make_classifier(const std::string& architecture, std::size_t num_classes, std::size_t height,
                                std::size_t width, std::uint64_t seed);

struct Prediction {
  std::vector<double> logits;
  std::vector<double> probs;
  int label = 0;
};

// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);
// Lowest index among maxima.
int argmax(std::span<const double> values);
Prediction make_prediction(std::vector<double> logits);

struct ClassifierCache {
  const ClassifierModel* model = nullptr;
  std::vector<Tensor> inputs;  // input of each layer (index 0: standardized image)
};

Tensor classifier_logits(const ClassifierModel& model, const Image& img, ClassifierCache* cache = nullptr);
Prediction classify(const ClassifierModel& model, const Image& img);

struct ClassifierGrads {
  Image input;
  std::vector<Tensor> params;  // weights, bias for each Conv/Dense layer in order
};

ClassifierGrads classifier_backward(const ClassifierModel& model, const ClassifierCache& cache,
                                    const Tensor& logit_cotangent, bool want_params = true);
// d(logits . cotangent)/d(image); never touches the model.
Image classifier_backward_to_input(const ClassifierModel& model, const ClassifierCache& cache,
                                   const Tensor& logit_cotangent);

/// Margin loss on logits: z_y - max_{i != y} z_i. Negative exactly when
/// the argmax differs from y.
struct MarginLoss {
  double value = 0.0;
  int runner_up = 0;
  Tensor gradient;  // +1 at y, -1 at runner_up
};

MarginLoss margin_loss(std::span<const double> logits, int label);

// Cross-entropy of softmax(logits) against `label`, with gradient p - onehot.
double cross_entropy(std::span<const double> logits, int label, Tensor* grad = nullptr);

struct TrainConfig {
  std::size_t epochs = 12;
  std::size_t batch_size = 32;
  double lr = 2e-3;
  bool random_flips = true;
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct TrainResult {
  ClassifierModel model;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

TrainResult train_classifier(const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& test,
                             const std::string& architecture, std::size_t num_classes, const TrainConfig& cfg);

double accuracy(const ClassifierModel& model, const std::vector<LabeledImage>& data);

PackedWeights classifier_to_packed(const ClassifierModel& model);
ClassifierModel classifier_from_packed(const PackedWeights& packed);

void save_model(const std::string& path, const ClassifierModel& model);
// Throws FormatError when `expected_architecture` is given and differs from the file.
ClassifierModel load_model(const std::string& path,
                           const std::optional<std::string>& expected_architecture = std::nullopt);

// FNV-1a over the packed encoding; used to verify that attacks leave models untouched.
std::uint64_t weights_hash(const ClassifierModel& model);

}  // namespace edgefool
