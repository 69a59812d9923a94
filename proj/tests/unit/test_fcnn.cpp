#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "edgefool/attack.hpp"
#include "edgefool/error.hpp"
#include "edgefool/fcnn.hpp"
#include "edgefool/smoothing.hpp"
#include "edgefool/synthetic.hpp"
#include "test_util.hpp"

using namespace edgefool;
using edgefool::testing::random_image;
using edgefool::testing::random_tensor;

namespace {

std::vector<std::size_t> sample_coords(std::size_t n, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(rng.index(n));
  return out;
}

// One Adam step on every tensor of `params`.
void adam_update(FcnnParams& params, const FcnnGrads& grads, std::vector<AdamState>& states) {
  auto tensors = params.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) adam_step(*tensors[i], grads[i], states[i]);
  ++params.revision;
}

}  // namespace

TEST_CASE("architecture defaults") {
  const FcnnArchitecture arch;
  CHECK(arch.dilations == std::vector<std::size_t>{1, 2, 4, 8, 16, 32, 1, 1});
  CHECK(arch.width == 24);
  const FcnnParams p = fcnn_init(arch, 0);
  REQUIRE(p.layers.size() == 8);
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(p.layers[i].normalized);
    CHECK(p.layers[i].spec.kernel_h == 3);
    CHECK(p.layers[i].spec.dilation == arch.dilations[i]);
    CHECK(p.layers[i].spec.out_channels == 24);
  }
  CHECK_FALSE(p.layers[7].normalized);
  CHECK(p.layers[7].spec.kernel_h == 1);
  CHECK(p.layers[7].spec.out_channels == 3);

  FcnnArchitecture bad;
  bad.dilations = {1, 2, 4};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.dilations = {1, 0, 1};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("initialization") {
  const FcnnArchitecture arch;
  const FcnnParams a = fcnn_init(arch, 17);
  const FcnnParams b = fcnn_init(arch, 17);
  const FcnnParams c = fcnn_init(arch, 18);
  for (std::size_t i = 0; i < a.tensors().size(); ++i) CHECK(*a.tensors()[i] == *b.tensors()[i]);
  CHECK_FALSE(*a.tensors()[0] == *c.tensors()[0]);

  for (const auto& layer : a.layers) {
    if (layer.normalized) {
      CHECK(layer.gain == Tensor(layer.gain.shape(), 1.0));
      CHECK(max_abs(layer.shift) == 0.0);
      CHECK(layer.bias.empty());
    } else {
      CHECK(max_abs(layer.bias) == 0.0);
    }
  }

  SUBCASE("weight variance is 2/fan_in per layer over 100 seeds") {
    std::vector<double> sum_sq(arch.num_layers(), 0.0);
    std::vector<double> count(arch.num_layers(), 0.0);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const FcnnParams p = fcnn_init(arch, 1000 + seed);
      for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const Tensor& w = p.layers[l].weights;
        for (std::size_t i = 0; i < w.size(); ++i) sum_sq[l] += w[i] * w[i];
        count[l] += static_cast<double>(w.size());
      }
    }
    const FcnnParams p = fcnn_init(arch, 0);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      const double want = 2.0 / static_cast<double>(p.layers[l].spec.fan_in());
      CAPTURE(l);
      CHECK(sum_sq[l] / count[l] == doctest::Approx(want).epsilon(0.2));
    }
  }
}

TEST_CASE("forward") {
  const FcnnArchitecture arch;
  const FcnnParams p = fcnn_init(arch, 3);

  SUBCASE("fresh network output range") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Image out = fcnn_forward(random_image(32, 32, seed), fcnn_init(arch, seed));
      CHECK(out.all_finite());
      CHECK(max_abs(out) <= 3.0);
    }
  }
  SUBCASE("deterministic and same size") {
    const Image img = random_image(9, 13, 4);
    const Image a = fcnn_forward(img, p);
    CHECK(a == fcnn_forward(img, p));
    CHECK(a.shape() == img.shape());
    for (auto [h, w] : {std::pair{1, 2}, {2, 1}, {3, 3}, {16, 5}, {40, 40}}) {
      CHECK(fcnn_forward(random_image(h, w, 5), p).shape() == Shape{3, std::size_t(h), std::size_t(w)});
    }
  }
  SUBCASE("a single pixel has no normalization statistics") {
    CHECK_THROWS_AS(fcnn_forward(make_image(1, 1, 0.5), p), ShapeError);
  }
  SUBCASE("wrong channel count") {
    CHECK_THROWS_AS(fcnn_forward(Tensor({1, 4, 4}), p), ShapeError);
  }
}

TEST_CASE("backward") {
  const FcnnArchitecture arch;

  SUBCASE("zero cotangent gives zero gradients") {
    const FcnnParams p = fcnn_init(arch, 1);
    FcnnCache cache;
    fcnn_forward(random_image(6, 6, 1), p, &cache);
    for (const Tensor& g : fcnn_backward(Tensor({3, 6, 6}), cache, p)) CHECK(max_abs(g) == 0.0);
  }

  SUBCASE("stale cache is rejected") {
    FcnnParams p = fcnn_init(arch, 2);
    FcnnCache cache;
    fcnn_forward(random_image(6, 6, 2), p, &cache);
    ++p.revision;
    CHECK_THROWS_AS(fcnn_backward(Tensor({3, 6, 6}), cache, p), Error);
    const FcnnParams other = fcnn_init(arch, 2);
    FcnnCache cache2;
    fcnn_forward(random_image(6, 6, 2), other, &cache2);
    CHECK_THROWS_AS(fcnn_backward(Tensor({3, 6, 6}), cache2, p), Error);
  }

  SUBCASE("finite differences at 8x8 over 10 seeds, every tensor") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      FcnnParams p = fcnn_init(arch, 50 + seed);
      // Move off the initial zero shifts and unit gains.
      for (auto& layer : p.layers) {
        if (layer.normalized) {
          layer.gain = random_tensor(layer.gain.shape(), 60 + seed, 0.5, 1.5);
          layer.shift = random_tensor(layer.shift.shape(), 70 + seed, -0.3, 0.3);
        } else {
          layer.bias = random_tensor(layer.bias.shape(), 80 + seed, -0.3, 0.3);
        }
      }
      const Image img = random_image(8, 8, 90 + seed);
      const Tensor cot = random_tensor({3, 8, 8}, 100 + seed);
      FcnnCache cache;
      fcnn_forward(img, p, &cache);
      const FcnnGrads grads = fcnn_backward(cot, cache, p);
      const auto names = p.tensor_names();
      for (std::size_t t = 0; t < grads.size(); ++t) {
        FcnnParams probe = p;
        const auto coords = sample_coords(grads[t].size(), 12, 110 + seed * 31 + t);
        // A small step keeps the probe from crossing leaky-ReLU kinks downstream.
        const auto report = finite_diff_check(
            [&](const Tensor& x) {
              *probe.tensors()[t] = x;
              return dot(fcnn_forward(img, probe), cot);
            },
            *p.tensors()[t], grads[t], coords, 1e-7);
        CAPTURE(seed);
        CAPTURE(names[t]);
        CHECK(report.max_rel_error < 1e-4);
      }
    }
  }
}

TEST_CASE("packed snapshot roundtrip") {
  FcnnArchitecture arch;
  arch.width = 6;
  arch.dilations = {1, 2, 1};
  const FcnnParams p = fcnn_init(arch, 77);
  const FcnnParams q = fcnn_from_packed(decode_packed(encode_packed(fcnn_to_packed(p))));
  CHECK(q.seed == 77);
  CHECK(q.arch.dilations == arch.dilations);
  for (std::size_t i = 0; i < p.tensors().size(); ++i) CHECK(*p.tensors()[i] == *q.tensors()[i]);

  const auto path = std::filesystem::temp_directory_path() / "edgefool_fcnn_roundtrip.dfw";
  save_fcnn(path.string(), p);
  const FcnnParams r = load_fcnn(path.string());
  const Image img = random_image(5, 5, 1);
  CHECK(fcnn_forward(img, p) == fcnn_forward(img, r));
  std::filesystem::remove(path);

  PackedWeights bad = fcnn_to_packed(p);
  bad.tensors[0].tensor = Tensor({1, 1, 1, 1});
  CHECK_THROWS_AS(fcnn_from_packed(bad), FormatError);
  PackedWeights wrong_kind = fcnn_to_packed(p);
  wrong_kind.metadata["kind"] = "classifier";
  CHECK_THROWS_AS(fcnn_from_packed(wrong_kind), FormatError);
}

TEST_CASE("training on the smoothing loss alone reaches tau") {
  const Image img = render_synthetic(4, 32, 11);
  const Image guidance = l0_smooth(img);
  FcnnParams p = fcnn_init(FcnnArchitecture{}, 5);
  std::vector<AdamState> states;
  for (const Tensor* t : p.tensors()) states.push_back(AdamState::for_params(*t, AdamConfig{}));
  double loss = 1.0;
  std::size_t steps = 0;
  for (; steps < 2000; ++steps) {
    FcnnCache cache;
    const Image s = fcnn_forward(img, p, &cache);
    const SmoothingLoss l = smoothing_loss(s, guidance);
    loss = l.value;
    if (loss < 5e-4) break;
    adam_update(p, fcnn_backward(l.gradient, cache, p), states);
  }
  MESSAGE("smoothing loss " << loss << " after " << steps << " steps");
  CHECK(loss < 5e-4);
}

TEST_CASE("gradients stay finite over 100 attack iterations") {
  const Image img = render_synthetic(2, 32, 3);
  const ClassifierModel model = make_classifier("cnn-b", 10, 32, 32, 9);
  AttackConfig cfg;
  cfg.tau = 1e-12;  // never stop early
  cfg.max_iters = 100;
  cfg.seed = 4;
  const AttackResult r = edgefool_attack(img, model, cfg);
  CHECK(r.iterations == 100);
  FcnnCache cache;
  const Image s = fcnn_forward(img, r.fcnn, &cache);
  CHECK(s.all_finite());
  const SmoothingLoss l = smoothing_loss(s, l0_smooth(img));
  for (const Tensor& g : fcnn_backward(l.gradient, cache, r.fcnn)) CHECK(g.all_finite());
  for (const Tensor* t : r.fcnn.tensors()) CHECK(t->all_finite());
}
