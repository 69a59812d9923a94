#include "edgefool/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "edgefool/error.hpp"
#include "edgefool/random.hpp"

namespace edgefool {

namespace {

bool inside(std::size_t shape, double u, double v) {
  const double au = std::abs(u);
  const double av = std::abs(v);
  const double r = std::sqrt(u * u + v * v);
  const double box = std::max(au, av);
  switch (shape) {
    case 0: return r <= 1.0;                                                   // disk
    case 1: return box <= 0.85;                                                // square
    case 2: return v <= 0.8 && v >= -1.0 && au <= (v + 1.0) / 1.8;             // triangle
    case 3: return (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0);      // plus
    case 4: return r >= 0.55 && r <= 1.0;                                      // ring
    case 5: return au <= 1.1 && av <= 0.35;                                    // horizontal bar
    case 6: return av <= 1.1 && au <= 0.35;                                    // vertical bar
    case 7: return au + av <= 1.05;                                            // diamond
    case 8: return (std::abs(u - v) <= 0.35 || std::abs(u + v) <= 0.35) && box <= 0.95;  // x
    case 9: return box <= 0.95 && box >= 0.6;                                  // frame
    default: return false;
  }
}

using Color = std::array<double, 3>;

double luminance(const Color& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

Color random_color(Rng& rng) { return {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)}; }

struct Grating {
  double fx, fy, phase, amp;
  double at(double x, double y) const { return amp * std::sin(fx * x + fy * y + phase); }
};

Grating random_grating(Rng& rng, double amp_lo, double amp_hi) {
  const double freq = rng.uniform(0.4, 1.4);
  const double angle = rng.uniform(0.0, std::numbers::pi);
  return {freq * std::cos(angle), freq * std::sin(angle), rng.uniform(0.0, 2.0 * std::numbers::pi),
          rng.uniform(amp_lo, amp_hi)};
}

}  // namespace

const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names{"c0_disk", "c1_square", "c2_triangle", "c3_plus", "c4_ring",
                                              "c5_hbar", "c6_vbar",   "c7_diamond",  "c8_x",    "c9_frame"};
  return names;
}

Image render_synthetic(std::size_t label, std::size_t size, std::uint64_t seed) {
  if (label >= synthetic_class_names().size()) throw ConfigError("render_synthetic: label out of range");
  if (size < 8) throw ConfigError("render_synthetic: size must be >= 8");
  Rng rng(seed);
  const double s = static_cast<double>(size);
  const double cx = rng.uniform(0.38, 0.62) * s;
  const double cy = rng.uniform(0.38, 0.62) * s;
  const double radius = rng.uniform(0.22, 0.32) * s;

  Color bg = random_color(rng);
  Color fg = random_color(rng);
  while (std::abs(luminance(fg) - luminance(bg)) < 0.2) fg = random_color(rng);
  const Grating bg_tex = random_grating(rng, 0.03, 0.08);
  const Grating fg_tex = random_grating(rng, 0.02, 0.06);
  const double noise = rng.uniform(0.005, 0.02);

  Image img = make_image(size, size);
  constexpr int kSuper = 3;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      double coverage = 0.0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = static_cast<double>(x) + (sx + 0.5) / kSuper;
          const double py = static_cast<double>(y) + (sy + 0.5) / kSuper;
          coverage += inside(label, (px - cx) / radius, (py - cy) / radius);
        }
      }
      coverage /= kSuper * kSuper;
      const double fx = static_cast<double>(x);
      const double fy = static_cast<double>(y);
      const double tb = bg_tex.at(fx, fy);
      const double tf = fg_tex.at(fx, fy);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = coverage * (fg[c] + tf) + (1.0 - coverage) * (bg[c] + tb) + noise * rng.normal();
        img.at(c, y, x) = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
      }
    }
  }
  return img;
}

std::vector<LabeledImage> generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.num_classes < 2 || cfg.num_classes > synthetic_class_names().size()) {
    throw ConfigError("generate_synthetic: num_classes must lie in [2," +
                      std::to_string(synthetic_class_names().size()) + "]");
  }
  std::vector<LabeledImage> out;
  out.reserve(cfg.num_classes * cfg.per_class);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    for (std::size_t i = 0; i < cfg.per_class; ++i) {
      out.push_back({render_synthetic(c, cfg.size, mix_seed(cfg.seed, c * cfg.per_class + i)), static_cast<int>(c)});
    }
  }
  return out;
}

}  // namespace edgefool
