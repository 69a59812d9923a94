#include "edgefool/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "edgefool/error.hpp"
#include "edgefool/random.hpp"

namespace edgefool {

namespace {

constexpr double kClassifierSlope = 0.1;

ClassifierLayer conv_layer(std::size_t in, std::size_t out, std::size_t k, Rng& rng) {
  ClassifierLayer l;
  l.kind = LayerKind::Conv;
  l.conv = ConvSpec::same(in, out, k);
  l.weights = Tensor(l.conv.weight_shape());
  const double bound = std::sqrt(6.0 / static_cast<double>(l.conv.fan_in()));
  for (double& w : l.weights.values()) w = rng.uniform(-bound, bound);
  l.bias = Tensor({out});
  return l;
}

ClassifierLayer dense_layer(std::size_t in, std::size_t out, Rng& rng) {
  ClassifierLayer l;
  l.kind = LayerKind::Dense;
  l.weights = Tensor({out, in});
  const double bound = std::sqrt(3.0 / static_cast<double>(in));
  for (double& w : l.weights.values()) w = rng.uniform(-bound, bound);
  l.bias = Tensor({out});
  return l;
}

ClassifierLayer activation() {
  ClassifierLayer l;
  l.kind = LayerKind::Activation;
  l.slope = kClassifierSlope;
  return l;
}

ClassifierLayer pool() {
  ClassifierLayer l;
  l.kind = LayerKind::Pool;
  return l;
}

Tensor flip_horizontal(const Tensor& img) {
  Tensor out(img.shape());
  const std::size_t w = img.dim(2);
  for (std::size_t c = 0; c < img.dim(0); ++c) {
    for (std::size_t y = 0; y < img.dim(1); ++y) {
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y, w - 1 - x);
    }
  }
  return out;
}

std::vector<Tensor*> trainable(ClassifierModel& m) {
  std::vector<Tensor*> out;
  for (ClassifierLayer& l : m.layers) {
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::Dense) {
      out.push_back(&l.weights);
      out.push_back(&l.bias);
    }
  }
  return out;
}

}  // namespace

bool operator==(const ClassifierModel& a, const ClassifierModel& b) {
  return encode_packed(classifier_to_packed(a)) == encode_packed(classifier_to_packed(b));
}

const std::vector<std::string>& known_architectures() {
  static const std::vector<std::string> names{"cnn-a", "cnn-b"};
  return names;
}

ClassifierModel make_classifier(const std::string& architecture, std::size_t num_classes, std::size_t height,
                                std::size_t width, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("make_classifier: need at least 2 classes");
  ClassifierModel m;
  m.architecture = architecture;
  m.num_classes = num_classes;
  m.height = height;
  m.width = width;
  Rng rng(seed);
  if (architecture == "cnn-a") {
    if (height % 8 != 0 || width % 8 != 0 || height == 0 || width == 0) {
      throw ConfigError("cnn-a: input size must be a positive multiple of 8");
    }
    m.layers = {conv_layer(3, 16, 3, rng), activation(), pool(),
                conv_layer(16, 32, 3, rng), activation(), pool(),
                conv_layer(32, 32, 3, rng), activation(), pool()};
    m.layers.push_back(dense_layer(32 * (height / 8) * (width / 8), num_classes, rng));
  } else if (architecture == "cnn-b") {
    if (height % 4 != 0 || width % 4 != 0 || height == 0 || width == 0) {
      throw ConfigError("cnn-b: input size must be a positive multiple of 4");
    }
    m.layers = {conv_layer(3, 8, 5, rng), activation(), pool(),
                conv_layer(8, 16, 3, rng), activation(), pool()};
    m.layers.push_back(dense_layer(16 * (height / 4) * (width / 4), num_classes, rng));
  } else {
    throw ConfigError("unknown classifier architecture '" + architecture + "'");
  }
  return m;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

int argmax(std::span<const double> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

Prediction make_prediction(std::vector<double> logits) {
  Prediction p;
  p.probs = softmax(logits);
  p.label = argmax(logits);
  p.logits = std::move(logits);
  return p;
}

Tensor classifier_logits(const ClassifierModel& model, const Image& img, ClassifierCache* cache) {
  require_image(img, "classify");
  if (img.dim(1) != model.height || img.dim(2) != model.width) {
    throw ShapeError("classify: image is " + std::to_string(img.dim(1)) + "x" + std::to_string(img.dim(2)) +
                     ", model '" + model.architecture + "' expects " + std::to_string(model.height) + "x" +
                     std::to_string(model.width));
  }
  const std::size_t n = img.dim(1) * img.dim(2);
  Tensor x(img.shape());
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i) x[c * n + i] = (img[c * n + i] - model.mean[c]) / model.stddev[c];
  }
  if (cache) {
    cache->model = &model;
    cache->inputs.clear();
  }
  for (const ClassifierLayer& l : model.layers) {
    if (cache) cache->inputs.push_back(x);
    switch (l.kind) {
      case LayerKind::Conv: x = conv2d_forward(x, l.conv, l.weights, l.bias); break;
      case LayerKind::Activation: x = leaky_relu_forward(x, l.slope); break;
      case LayerKind::Pool: x = avg_pool2_forward(x); break;
      case LayerKind::Dense: x = dense_forward(x, l.weights, l.bias); break;
    }
  }
  return x;
}

Prediction classify(const ClassifierModel& model, const Image& img) {
  const Tensor z = classifier_logits(model, img);
  return make_prediction({z.values().begin(), z.values().end()});
}

ClassifierGrads classifier_backward(const ClassifierModel& model, const ClassifierCache& cache,
                                    const Tensor& logit_cotangent, bool want_params) {
  if (cache.model != &model || cache.inputs.size() != model.layers.size()) {
    throw Error("classifier backward: activation cache is stale or belongs to another model");
  }
  if (logit_cotangent.size() != model.num_classes) {
    throw ShapeError("classifier backward: cotangent has " + std::to_string(logit_cotangent.size()) +
                     " entries, model has " + std::to_string(model.num_classes) + " classes");
  }
  ClassifierGrads out;
  std::vector<std::pair<Tensor, Tensor>> param_grads;
  Tensor g({model.num_classes}, {logit_cotangent.values().begin(), logit_cotangent.values().end()});
  for (std::size_t k = model.layers.size(); k-- > 0;) {
    const ClassifierLayer& l = model.layers[k];
    const Tensor& in = cache.inputs[k];
    switch (l.kind) {
      case LayerKind::Conv: {
        ConvGrads cg = conv2d_backward(g, in, l.conv, l.weights);
        if (want_params) param_grads.emplace_back(std::move(cg.weights), std::move(cg.bias));
        g = std::move(cg.input);
        break;
      }
      case LayerKind::Activation: g = leaky_relu_backward(g, in, l.slope); break;
      case LayerKind::Pool: g = avg_pool2_backward(g, in.shape()); break;
      case LayerKind::Dense: {
        DenseGrads dg = dense_backward(g, in, l.weights);
        if (want_params) param_grads.emplace_back(std::move(dg.weights), std::move(dg.bias));
        g = std::move(dg.input);
        break;
      }
    }
  }
  const std::size_t n = g.dim(1) * g.dim(2);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i) g[c * n + i] /= model.stddev[c];
  }
  out.input = std::move(g);
  for (auto it = param_grads.rbegin(); it != param_grads.rend(); ++it) {
    out.params.push_back(std::move(it->first));
    out.params.push_back(std::move(it->second));
  }
  return out;
}

Image classifier_backward_to_input(const ClassifierModel& model, const ClassifierCache& cache,
                                   const Tensor& logit_cotangent) {
  return classifier_backward(model, cache, logit_cotangent, false).input;
}

MarginLoss margin_loss(std::span<const double> logits, int label) {
  const std::size_t d = logits.size();
  if (d < 2) throw ConfigError("margin_loss: need at least 2 classes");
  if (label < 0 || static_cast<std::size_t>(label) >= d) throw ConfigError("margin_loss: label out of range");
  int runner = -1;
  for (std::size_t i = 0; i < d; ++i) {
    if (static_cast<int>(i) == label) continue;
    if (runner < 0 || logits[i] > logits[static_cast<std::size_t>(runner)]) runner = static_cast<int>(i);
  }
  MarginLoss out;
  out.runner_up = runner;
  out.value = logits[static_cast<std::size_t>(label)] - logits[static_cast<std::size_t>(runner)];
  out.gradient = Tensor({d});
  out.gradient[static_cast<std::size_t>(label)] = 1.0;
  out.gradient[static_cast<std::size_t>(runner)] = -1.0;
  return out;
}

double cross_entropy(std::span<const double> logits, int label, Tensor* grad) {
  const std::vector<double> p = softmax(logits);
  const std::size_t y = static_cast<std::size_t>(label);
  if (grad) {
    *grad = Tensor({logits.size()}, p);
    (*grad)[y] -= 1.0;
  }
  // log-sum-exp form avoids log(0) for saturated predictions
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - mx);
  return mx + std::log(total) - logits[y];
}

double accuracy(const ClassifierModel& model, const std::vector<LabeledImage>& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const LabeledImage& item : data) correct += classify(model, item.image).label == item.label;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train_classifier(const std::vector<LabeledImage>& train, const std::vector<LabeledImage>& test,
                             const std::string& architecture, std::size_t num_classes, const TrainConfig& cfg) {
  if (train.empty()) throw ConfigError("train_classifier: empty training set");
  if (cfg.batch_size == 0) throw ConfigError("train_classifier: batch_size must be positive");
  for (const auto* set : {&train, &test}) {
    for (const LabeledImage& item : *set) {
      if (item.label < 0 || static_cast<std::size_t>(item.label) >= num_classes) {
        throw ConfigError("train_classifier: label " + std::to_string(item.label) + " outside [0," +
                          std::to_string(num_classes) + ")");
      }
    }
  }
  const std::size_t h = train.front().image.dim(1);
  const std::size_t w = train.front().image.dim(2);
  ClassifierModel model = make_classifier(architecture, num_classes, h, w, mix_seed(cfg.seed, 0));

  // Per-channel standardization statistics of the training set.
  const std::size_t n = h * w;
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0;
    double s2 = 0.0;
    for (const LabeledImage& item : train) {
      for (std::size_t i = 0; i < n; ++i) {
        const double v = item.image[c * n + i];
        s += v;
        s2 += v * v;
      }
    }
    const double count = static_cast<double>(train.size() * n);
    model.mean[c] = s / count;
    model.stddev[c] = std::sqrt(std::max(s2 / count - model.mean[c] * model.mean[c], 1e-12));
  }

  std::vector<Tensor*> params = trainable(model);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  std::vector<AdamState> states;
  for (Tensor* p : params) states.push_back(AdamState::for_params(*p, adam_cfg));

  Rng rng(mix_seed(cfg.seed, 1));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  ClassifierCache cache;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Tensor> acc;
      for (const Tensor* p : params) acc.push_back(Tensor::zeros_like(*p));
      for (std::size_t b = start; b < end; ++b) {
        const LabeledImage& item = train[order[b]];
        const bool flip = cfg.random_flips && rng.uniform() < 0.5;
        const Tensor z = classifier_logits(model, flip ? flip_horizontal(item.image) : item.image, &cache);
        Tensor gz;
        epoch_loss += cross_entropy(z.values(), item.label, &gz);
        ClassifierGrads g = classifier_backward(model, cache, gz);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g.params[i];
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = 0; i < params.size(); ++i) {
        acc[i] *= scale;
        adam_step(*params[i], acc[i], states[i]);
      }
    }
    if (!std::isfinite(epoch_loss)) throw NumericError("train_classifier: non-finite loss", static_cast<std::ptrdiff_t>(epoch));
    if (cfg.verbose) {
      std::cerr << "epoch " << epoch + 1 << "/" << cfg.epochs << " mean loss "
                << epoch_loss / static_cast<double>(train.size()) << "\n";
    }
  }
  TrainResult result;
  result.train_accuracy = accuracy(model, train);
  result.test_accuracy = accuracy(model, test);
  result.model = std::move(model);
  return result;
}

PackedWeights classifier_to_packed(const ClassifierModel& model) {
  PackedWeights p;
  p.metadata = {{"kind", "classifier"},
                {"architecture", model.architecture},
                {"num_classes", model.num_classes},
                {"input_height", model.height},
                {"input_width", model.width},
                {"mean", model.mean},
                {"std", model.stddev}};
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const ClassifierLayer& l = model.layers[i];
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::Dense) {
      p.tensors.push_back({"layer" + std::to_string(i) + ".weight", l.weights});
      p.tensors.push_back({"layer" + std::to_string(i) + ".bias", l.bias});
    }
  }
  return p;
}

ClassifierModel classifier_from_packed(const PackedWeights& packed) {
  ClassifierModel m;
  try {
    if (packed.metadata.value("kind", std::string()) != "classifier") {
      throw FormatError("packed weights do not describe a classifier");
    }
    m = make_classifier(packed.metadata.at("architecture").get<std::string>(),
                        packed.metadata.at("num_classes").get<std::size_t>(),
                        packed.metadata.at("input_height").get<std::size_t>(),
                        packed.metadata.at("input_width").get<std::size_t>(), 0);
    m.mean = packed.metadata.at("mean").get<std::array<double, 3>>();
    m.stddev = packed.metadata.at("std").get<std::array<double, 3>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("classifier manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("classifier manifest: ") + e.what());
  }
  std::vector<Tensor*> params = trainable(m);
  if (params.size() != packed.tensors.size()) {
    throw FormatError("classifier '" + m.architecture + "': expected " + std::to_string(params.size()) +
                      " tensors, file has " + std::to_string(packed.tensors.size()));
  }
  std::size_t t = 0;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    ClassifierLayer& l = m.layers[i];
    if (l.kind != LayerKind::Conv && l.kind != LayerKind::Dense) continue;
    for (Tensor* dst : {&l.weights, &l.bias}) {
      const NamedTensor& src = packed.tensors[t++];
      const std::string expected = "layer" + std::to_string(i) + (dst == &l.weights ? ".weight" : ".bias");
      if (src.name != expected || src.tensor.shape() != dst->shape()) {
        throw FormatError("classifier '" + m.architecture + "': tensor '" + src.name + "' " +
                          shape_string(src.tensor.shape()) + " does not match expected '" + expected + "' " +
                          shape_string(dst->shape()));
      }
      *dst = src.tensor;
    }
  }
  return m;
}

void save_model(const std::string& path, const ClassifierModel& model) {
  write_packed(path, classifier_to_packed(model));
}

ClassifierModel load_model(const std::string& path, const std::optional<std::string>& expected_architecture) {
  const PackedWeights packed = read_packed(path);
  if (expected_architecture) {
    const std::string found = packed.metadata.value("architecture", std::string());
    if (found != *expected_architecture) {
      throw FormatError("architecture mismatch: '" + path + "' holds '" + found + "', expected '" +
                        *expected_architecture + "'");
    }
  }
  return classifier_from_packed(packed);
}

std::uint64_t weights_hash(const ClassifierModel& model) {
  const std::string bytes = encode_packed(classifier_to_packed(model));
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace edgefool
