#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "edgefool/classifier.hpp"
#include "edgefool/error.hpp"
#include "test_util.hpp"

using namespace edgefool;
using edgefool::testing::random_image;
using edgefool::testing::random_tensor;

namespace {

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

// Two separable classes: a dark reddish blob versus a bright bluish blob on noise.
std::vector<LabeledImage> blob_dataset(std::size_t per_class, std::uint64_t seed) {
  std::vector<LabeledImage> out;
  Rng rng(seed);
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = static_cast<int>(i % 2);
    Image img = make_image(16, 16);
    const double cx = rng.uniform(5, 11), cy = rng.uniform(5, 11), r = rng.uniform(3, 5);
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) {
        const bool in = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
        for (std::size_t c = 0; c < 3; ++c) {
          double v = 0.5 + 0.1 * rng.normal();
          if (in) v = label == 0 ? (c == 0 ? 0.6 : 0.15) : (c == 2 ? 0.95 : 0.7);
          img.at(c, y, x) = std::clamp(v, 0.0, 1.0);
        }
      }
    out.push_back({img, label});
  }
  return out;
}

}  // namespace

TEST_CASE("softmax and prediction") {
  const std::vector<double> equal{0.7, 0.7, 0.7, 0.7};
  for (double p : softmax(equal)) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));

  // 40-digit references.
  const std::vector<double> z{1.0, 2.0, 3.0};
  const double want[3] = {0.090030573170380457998, 0.24472847105479765247, 0.66524095577482188953};
  const auto p = softmax(z);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(p[i] - want[i]) < 1e-9);

  const std::vector<double> z4{1.0, 2.0, 3.0, -1.0};
  const double want4[4] = {0.088946817297404296163, 0.24178251715880078251, 0.65723302283185546986,
                           0.012037642711939451463};
  const auto p4 = softmax(z4);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(p4[i] - want4[i]) < 1e-9);

  const std::vector<double> big{1001.0, 1002.0, 1003.0};
  const auto pb = softmax(big);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(pb[i] - want[i]) < 1e-9);

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> logits(7);
    for (double& v : logits) v = rng.uniform(-30, 30);
    const Prediction a = make_prediction(logits);
    double s = 0.0;
    for (double v : a.probs) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
    for (double& v : logits) v += 12.5;
    const Prediction b = make_prediction(logits);
    CHECK(a.label == b.label);
    for (std::size_t i = 0; i < 7; ++i) CHECK(std::abs(a.probs[i] - b.probs[i]) < 1e-12);
    CHECK(a.label == argmax(a.probs));
  }
  const std::vector<double> tie{1.0, 4.0, 4.0};
  CHECK(argmax(tie) == 1);
}

TEST_CASE("margin loss") {
  const std::vector<double> a{3.0, 1.0};
  const MarginLoss la = margin_loss(a, 0);
  CHECK(la.value == 2.0);
  CHECK(la.gradient[0] == 1.0);
  CHECK(la.gradient[1] == -1.0);

  const std::vector<double> b{1.0, 3.0};
  CHECK(margin_loss(b, 0).value == -2.0);

  const std::vector<double> c{0.5, 2.0, 2.0, -1.0};
  const MarginLoss lc = margin_loss(c, 0);
  CHECK(lc.value == -1.5);
  CHECK(lc.runner_up == 1);
  CHECK(lc.gradient == Tensor({4}, std::vector<double>{1.0, -1.0, 0.0, 0.0}));

  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> z(5);
    for (double& v : z) v = std::round(rng.uniform(-3, 3));  // integers make ties common
    const int y = static_cast<int>(rng.index(5));
    const double m = margin_loss(z, y).value;
    double best_other = -1e9;
    for (int i = 0; i < 5; ++i)
      if (i != y) best_other = std::max(best_other, z[i]);
    if (m < 0.0) CHECK(argmax(z) != y);
    if (m > 0.0) CHECK(argmax(z) == y);
    if (m == 0.0) CHECK(z[y] == best_other);  // a tie; the lowest index wins the argmax
  }

  const std::vector<double> one{1.0};
  CHECK_THROWS_AS(margin_loss(one, 0), ConfigError);
  CHECK_THROWS_AS(margin_loss(a, 2), ConfigError);
}

TEST_CASE("cross entropy gradient") {
  const std::vector<double> z{0.3, -1.2, 2.0};
  Tensor g;
  const double ce = cross_entropy(z, 2, &g);
  const auto p = softmax(z);
  CHECK(ce == doctest::Approx(-std::log(p[2])));
  CHECK(g[0] == doctest::Approx(p[0]));
  CHECK(g[2] == doctest::Approx(p[2] - 1.0));
}

TEST_CASE("backward passes on 8x8 models over 10 seeds") {
  for (const std::string arch : {"cnn-a", "cnn-b"}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      ClassifierModel model = make_classifier(arch, 4, 8, 8, seed);
      model.mean = {0.4, 0.5, 0.6};
      model.stddev = {0.2, 0.3, 0.25};
      const Image img = random_image(8, 8, 20 + seed);
      const Tensor cot = random_tensor({4}, 30 + seed);
      ClassifierCache cache;
      classifier_logits(model, img, &cache);
      const ClassifierGrads g = classifier_backward(model, cache, cot);
      CAPTURE(arch);
      CAPTURE(seed);
      CHECK(finite_diff_check([&](const Tensor& x) { return dot(classifier_logits(model, x), cot); }, img, g.input)
                .max_rel_error < 1e-4);
      CHECK(max_abs_diff(classifier_backward_to_input(model, cache, cot), g.input) == 0.0);

      std::size_t k = 0;
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& layer = model.layers[l];
        if (layer.kind != LayerKind::Conv && layer.kind != LayerKind::Dense) continue;
        for (Tensor* param : {&layer.weights, &layer.bias}) {
          ClassifierModel probe = model;
          Tensor* target = param == &layer.weights ? &probe.layers[l].weights : &probe.layers[l].bias;
          CHECK(finite_diff_check(
                    [&](const Tensor& x) {
                      *target = x;
                      return dot(classifier_logits(probe, img), cot);
                    },
                    *param, g.params[k++])
                    .max_rel_error < 1e-4);
        }
      }
      CHECK(k == g.params.size());
    }
  }

  const ClassifierModel model = make_classifier("cnn-a", 3, 8, 8, 1);
  ClassifierCache cache;
  classifier_logits(model, random_image(8, 8, 1), &cache);
  CHECK(max_abs(classifier_backward_to_input(model, cache, Tensor({3}))) == 0.0);
  const ClassifierModel other = make_classifier("cnn-a", 3, 8, 8, 1);
  CHECK_THROWS_AS(classifier_backward_to_input(other, cache, Tensor({3})), Error);
  CHECK_THROWS_AS(classify(model, random_image(16, 8, 1)), ShapeError);
}

TEST_CASE("architectures") {
  CHECK(known_architectures() == std::vector<std::string>{"cnn-a", "cnn-b"});
  CHECK_THROWS_AS(make_classifier("resnet", 10, 32, 32, 0), ConfigError);
  CHECK_THROWS_AS(make_classifier("cnn-a", 1, 32, 32, 0), ConfigError);
  CHECK(classifier_logits(make_classifier("cnn-a", 10, 32, 32, 0), random_image(32, 32, 0)).size() == 10);
  CHECK(classifier_logits(make_classifier("cnn-b", 10, 32, 32, 0), random_image(32, 32, 0)).size() == 10);
}

TEST_CASE("training") {
  const auto train = blob_dataset(100, 1);
  const auto test = blob_dataset(50, 2);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 3;
  const TrainResult a = train_classifier(train, test, "cnn-b", 2, cfg);
  CHECK(a.test_accuracy >= 0.99);
  CHECK(accuracy(a.model, test) == a.test_accuracy);

  const TrainResult b = train_classifier(train, test, "cnn-b", 2, cfg);
  CHECK(a.model == b.model);
  CHECK(weights_hash(a.model) == weights_hash(b.model));

  // Input gradient of the margin is nonzero for a correctly classified image.
  const Image& img = test[0].image;
  ClassifierCache cache;
  const Tensor logits = classifier_logits(a.model, img, &cache);
  const MarginLoss m = margin_loss(logits.values(), test[0].label);
  CHECK(max_abs(classifier_backward_to_input(a.model, cache, m.gradient)) > 0.0);

  CHECK_THROWS_AS(train_classifier({}, test, "cnn-b", 2, cfg), ConfigError);
  auto bad = train;
  bad[0].label = 5;
  CHECK_THROWS_AS(train_classifier(bad, test, "cnn-b", 2, cfg), ConfigError);
}

TEST_CASE("serialization") {
  ClassifierModel model = make_classifier("cnn-a", 10, 32, 32, 5);
  model.mean = {0.1, 0.2, 0.3};
  const auto path = temp_file("edgefool_classifier_roundtrip.dfw");
  save_model(path.string(), model);
  const ClassifierModel back = load_model(path.string());
  CHECK(back == model);
  CHECK(weights_hash(back) == weights_hash(model));
  CHECK(encode_packed(classifier_to_packed(back)) == encode_packed(classifier_to_packed(model)));
  CHECK(load_model(path.string(), std::string("cnn-a")) == model);
  CHECK_THROWS_AS(load_model(path.string(), std::string("cnn-b")), FormatError);

  std::string bytes;
  {
    std::ifstream f(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(f), {});
  }
  for (std::size_t pos : {0u, 3u, 9u, 20u}) {
    std::string corrupt = bytes;
    corrupt[pos] = static_cast<char>(corrupt[pos] ^ 0x5a);
    CAPTURE(pos);
    CHECK_THROWS_AS(classifier_from_packed(decode_packed(corrupt)), FormatError);
  }
  CHECK_THROWS_AS(decode_packed(std::string_view(bytes).substr(0, bytes.size() - 8)), FormatError);
  CHECK_THROWS_AS(decode_packed(std::string_view(bytes).substr(0, 10)), FormatError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_model(path.string()), Error);
}
