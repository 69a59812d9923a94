#include <cmath>

#include "doctest.h"
#include "edgefool/enhancement.hpp"
#include "edgefool/error.hpp"
#include "test_util.hpp"

using namespace edgefool;
using edgefool::testing::random_image;
using edgefool::testing::random_tensor;

namespace {

// Gray level whose lightness is `L`, by bisection on the forward conversion.
double gray_with_lightness(double L) {
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (rgb_to_lab({mid, mid, mid})[0] < L ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Mild random perturbation of `img` kept inside [0.05, 0.95].
Image perturbed(const Image& img, std::uint64_t seed, double scale) {
  Image out = img;
  const Tensor noise = random_tensor(img.shape(), seed, -scale, scale);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i] + noise[i], 0.05, 0.95);
  return out;
}

}  // namespace

TEST_CASE("sigmoid remap values") {
  CHECK(sigmoid_remap(0.0, 3.0) == 0.0);
  CHECK(sigmoid_remap(0.0, 0.1) == 0.0);
  CHECK(sigmoid_remap(50.0, 20.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sigmoid_remap(-50.0, 20.0) == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(std::isfinite(sigmoid_remap(700.0, 1.0)));
  CHECK(std::isfinite(sigmoid_remap(-800.0, 1.0)));
  // References evaluated at 40 digits.
  CHECK(std::abs(sigmoid_remap(1.0, 1.0) - 0.23105857863000487925) < 1e-9);
  CHECK(std::abs(sigmoid_remap(0.1, 15.0) * 100.0 - 31.757447619364365961) < 1e-3);
  CHECK(std::abs(sigmoid_remap(-0.3, 1.0) * 100.0 + 56.0 - 48.555748318834101285) < 1e-9);
  for (double a : {0.01, 0.3, 2.0}) CHECK(sigmoid_remap(-a, 2.5) == -sigmoid_remap(a, 2.5));
  CHECK(sigmoid_remap_slope(0.0, 15.0) == doctest::Approx(15.0 / 4.0));
}

TEST_CASE("enhance_L") {
  const EnhancementParams p;
  const Tensor mid({1}, 56.0);
  const Tensor zero({1}, 0.0);
  CHECK(enhance_L(mid, zero, p)[0] == doctest::Approx(56.0).epsilon(1e-15));
  CHECK(enhance_L(mid, Tensor({1}, 10.0), p)[0] - 56.0 == doctest::Approx(31.757447619364366).epsilon(1e-12));

  double prev = -1e9;
  for (int i = -100; i <= 100; ++i) {
    const double v = enhance_L(Tensor({1}, 40.0), Tensor({1}, i * 0.5), p)[0];
    CHECK(v > prev);
    prev = v;
  }

  SUBCASE("detail amplification over |detail| <= 10") {
    for (int i = -1000; i <= 1000; ++i) {
      const double d = i * 0.01;
      CHECK(std::abs(sigmoid_remap(d / 100.0, p.v3) * 100.0) >= std::abs(d));
    }
  }
}

TEST_CASE("enhance_L backward") {
  const EnhancementParams p;
  const EnhanceLGrads zero = enhance_L_backward(Tensor({2, 2}), Tensor({2, 2}, 30.0), Tensor({2, 2}, 3.0), p);
  CHECK(max_abs(zero.structure_L) == 0.0);
  CHECK(max_abs(zero.detail_L) == 0.0);

  const EnhanceLGrads origin = enhance_L_backward(Tensor({1}, 1.0), Tensor({1}, 56.0), Tensor({1}, 0.0), p);
  CHECK(origin.detail_L[0] == doctest::Approx(15.0 / 4.0).epsilon(1e-14));
  CHECK(origin.structure_L[0] == doctest::Approx(1.0 / 4.0).epsilon(1e-14));

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor s = random_tensor({3, 4}, 10 + seed, 0.0, 100.0);
    const Tensor d = random_tensor({3, 4}, 20 + seed, -20.0, 20.0);
    const Tensor cot = random_tensor({3, 4}, 30 + seed);
    const EnhanceLGrads g = enhance_L_backward(cot, s, d, p);
    CAPTURE(seed);
    CHECK(finite_diff_check([&](const Tensor& x) { return dot(enhance_L(x, d, p), cot); }, s, g.structure_L)
              .max_rel_error < 1e-4);
    CHECK(finite_diff_check([&](const Tensor& x) { return dot(enhance_L(s, x, p), cot); }, d, g.detail_L)
              .max_rel_error < 1e-4);
  }
}

TEST_CASE("compose_adversarial") {
  const EnhancementParams p;

  SUBCASE("fixed point at the midpoint") {
    const double g = gray_with_lightness(56.0);
    const Image img = make_image(4, 5, g);
    const Composition c = compose_adversarial(img, img, p);
    CHECK(max_abs_diff(c.adversarial, img) < 1e-9);
  }

  SUBCASE("decomposition reconstructs the lightness") {
    const Image img = random_image(6, 6, 1);
    const Image structure = perturbed(img, 2, 0.1);
    const LabImage lab = rgb_to_lab(img);
    const Composition c = compose_adversarial(lab, structure, p);
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 6; ++x)
        CHECK(std::abs(c.structure_L[y * 6 + x] + c.detail_L[y * 6 + x] - lab.L(y, x)) <= 1e-12);
  }

  SUBCASE("a and b channels are preserved") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Image img = random_image(8, 8, 100 + seed, 0.05, 0.95);
      const Image structure = perturbed(img, 200 + seed, 0.2);
      const LabImage lab = rgb_to_lab(img);
      const Composition c = compose_adversarial(lab, structure, p);
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) {
          CHECK(c.enhanced_lab.a(y, x) == lab.a(y, x));
          CHECK(c.enhanced_lab.b(y, x) == lab.b(y, x));
          bool clamped = false;
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const double v = c.pre_clamp.at(ch, y, x);
            clamped |= v < 0.0 || v > 1.0;
          }
          if (clamped) continue;
          Triple rgb{c.adversarial.at(0, y, x), c.adversarial.at(1, y, x), c.adversarial.at(2, y, x)};
          const Triple back = rgb_to_lab(rgb);
          CHECK(std::abs(back[1] - lab.a(y, x)) < 1e-9);
          CHECK(std::abs(back[2] - lab.b(y, x)) < 1e-9);
        }
      CHECK(c.clamp_fraction >= 0.0);
      CHECK(c.clamp_fraction <= 1.0);
    }
  }

  SUBCASE("backward against finite differences on 10 seeds") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Image img = random_image(4, 5, 300 + seed, 0.4, 0.65);
      const LabImage lab = rgb_to_lab(img);
      // Low-contrast input and a structure close to it keep the composite in gamut.
      const Image structure = perturbed(img, 400 + seed, 0.01);
      const Composition c = compose_adversarial(lab, structure, p);
      REQUIRE(c.clamp_fraction == 0.0);
      const Tensor cot = random_tensor(img.shape(), 500 + seed);
      const Image g = compose_adversarial_backward(cot, c, p);
      CAPTURE(seed);
      CHECK(finite_diff_check([&](const Tensor& s) { return dot(compose_adversarial(lab, s, p).adversarial, cot); },
                              structure, g, 1e-6)
                .max_rel_error < 1e-4);
    }
  }

  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(compose_adversarial(make_image(3, 3, 0.5), make_image(3, 4, 0.5), p), ShapeError);
  }
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS((EnhancementParams{56, 0, 15}.validate()), ConfigError);
  CHECK_THROWS_AS((EnhancementParams{56, 1, -1}.validate()), ConfigError);
  CHECK_THROWS_AS((EnhancementParams{120, 1, 15}.validate()), ConfigError);
  CHECK_NOTHROW(EnhancementParams{}.validate());
}
