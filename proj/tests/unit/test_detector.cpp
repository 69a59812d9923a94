#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "edgefool/detector.hpp"
#include "edgefool/error.hpp"
#include "edgefool/image_io.hpp"
#include "test_util.hpp"

using namespace edgefool;
using edgefool::testing::random_image;

namespace {

// Brute-force rank filter: gather each window with replicated borders and sort it.
Image naive_median(const Image& img, int k) {
  const long H = static_cast<long>(image_height(img)), W = static_cast<long>(image_width(img));
  const long lo = -(k / 2), hi = (k - 1) / 2;
  Image out = make_image(H, W);
  for (std::size_t c = 0; c < 3; ++c)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        std::vector<double> win;
        for (long dy = lo; dy <= hi; ++dy)
          for (long dx = lo; dx <= hi; ++dx)
            win.push_back(img.at(c, std::clamp(y + dy, 0L, H - 1), std::clamp(x + dx, 0L, W - 1)));
        std::sort(win.begin(), win.end());
        out.at(c, y, x) = win[(win.size() - 1) / 2];
      }
  return out;
}

std::vector<Image> random_images(std::size_t n, std::uint64_t seed) {
  std::vector<Image> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_image(8, 8, seed + i));
  return out;
}

}  // namespace

TEST_CASE("bit depth reduction") {
  Image img = make_image(1, 2);
  img[0] = 0.6;
  img[1] = 0.4;
  const Image one = bit_depth_reduce(img, 1);
  CHECK(one[0] == 1.0);
  CHECK(one[1] == 0.0);

  const Image r = random_image(7, 9, 3);
  const Image four = bit_depth_reduce(r, 4);
  for (std::size_t i = 0; i < four.size(); ++i) {
    const double level = four[i] * 15.0;
    CHECK(std::abs(level - std::round(level)) < 1e-12);
  }
  for (int b = 1; b <= 8; ++b) {
    const Image once = bit_depth_reduce(r, b);
    CHECK(bit_depth_reduce(once, b) == once);
  }
  // Half-up at the midpoint between levels 0 and 1 of a 1-bit grid.
  Image half = make_image(1, 1, 0.5);
  CHECK(bit_depth_reduce(half, 1)[0] == 1.0);

  const Image eight_bit = quantize8(r);
  CHECK(bit_depth_reduce(eight_bit, 8) == eight_bit);
  CHECK_THROWS_AS(bit_depth_reduce(r, 0), ConfigError);
  CHECK_THROWS_AS(bit_depth_reduce(r, 9), ConfigError);
}

TEST_CASE("median filter") {
  const Image c = make_image(5, 6, 0.3);
  CHECK(median_filter(c, 2) == c);
  CHECK(median_filter(c, 3) == c);

  Image impulse = make_image(5, 5, 0.0);
  impulse.at(1, 2, 2) = 1.0;
  CHECK(median_filter(impulse, 3).at(1, 2, 2) == 0.0);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Image r = random_image(6, 6, 40 + seed);
    for (int k : {1, 2, 3, 4, 5}) {
      CAPTURE(k);
      CHECK(median_filter(r, k) == naive_median(r, k));
    }
  }
  CHECK(median_filter(random_image(1, 1, 1), 3).shape() == Shape{3, 1, 1});
  CHECK_THROWS_AS(median_filter(c, 0), ConfigError);
}

TEST_CASE("squeezer names") {
  const auto defaults = default_squeezers();
  std::vector<std::string> names;
  for (const auto& s : defaults) names.push_back(s.name());
  CHECK(names == std::vector<std::string>{"bits4", "bits5", "bits6", "bits7", "median2", "median3"});
  for (const auto& s : defaults) CHECK(Squeezer::parse(s.name()) == s);
  CHECK(Squeezer::parse("identity") == Squeezer::identity());
  CHECK_THROWS_AS(Squeezer::parse("bits"), ConfigError);
  CHECK_THROWS_AS(Squeezer::parse("blur3"), ConfigError);
  CHECK_THROWS_AS(Squeezer::parse("bits12"), ConfigError);
}

TEST_CASE("scores") {
  const ClassifierModel model = make_classifier("cnn-b", 5, 8, 8, 2);
  std::vector<Squeezer> sq = default_squeezers();
  sq.insert(sq.begin(), Squeezer::identity());
  for (const Image& img : random_images(20, 300)) {
    const auto s = squeeze_scores(model, img, sq);
    REQUIRE(s.size() == sq.size());
    CHECK(s[0] == 0.0);
    for (double v : s) {
      CHECK(v >= 0.0);
      CHECK(v <= 2.0);
    }
  }
}

TEST_CASE("quantile threshold") {
  CHECK(quantile_threshold(std::vector<double>(100, 0.0), 0.05) == 0.0);

  std::vector<double> uniform;
  for (int i = 0; i < 100; ++i) uniform.push_back((i * 37 % 100) / 100.0);  // a permutation of i/100
  const double t = quantile_threshold(uniform, 0.05);
  CHECK(t == 0.94);
  CHECK(std::count_if(uniform.begin(), uniform.end(), [t](double v) { return v > t; }) == 5);

  Rng rng(5);
  for (std::size_t n : {100u, 137u, 1000u}) {
    std::vector<double> s(n);
    for (double& v : s) v = rng.uniform();
    for (double fpr : {0.01, 0.05, 0.2}) {
      const double th = quantile_threshold(s, fpr);
      const auto flagged = std::count_if(s.begin(), s.end(), [th](double v) { return v > th; });
      CHECK(static_cast<double>(flagged) <= fpr * n + 1e-9);
      // Lowest such threshold: the next lower sample would flag too many.
      std::vector<double> sorted = s;
      std::sort(sorted.begin(), sorted.end());
      const auto pos = std::lower_bound(sorted.begin(), sorted.end(), th) - sorted.begin();
      if (pos > 0) {
        const double lower = sorted[pos - 1];
        CHECK(static_cast<double>(std::count_if(s.begin(), s.end(), [lower](double v) { return v > lower; })) >
              fpr * n);
      }
    }
  }
}

TEST_CASE("calibration and detection") {
  const ClassifierModel model = make_classifier("cnn-b", 5, 8, 8, 7);
  const auto clean = random_images(120, 1000);
  CHECK_THROWS_AS(calibrate(model, random_images(99, 1), default_squeezers()), ConfigError);

  const DetectorCalibration cal = calibrate(model, clean, default_squeezers(), 0.05, true);
  CHECK(cal.sample_size == 120);
  REQUIRE(cal.thresholds.size() == 6);
  REQUIRE(cal.joint_threshold.has_value());
  for (std::size_t s = 0; s < 6; ++s) {
    std::size_t flagged = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) flagged += is_adversarial(cal, model, clean[i])[s];
    CHECK(static_cast<double>(flagged) / 120.0 <= 0.05 + 1.0 / 120.0);
  }

  // The clean image whose score equals the threshold is not flagged.
  for (std::size_t s = 0; s < 6; ++s) {
    const auto& scores = cal.clean_scores[s];
    const auto it = std::find(scores.begin(), scores.end(), cal.thresholds[s]);
    REQUIRE(it != scores.end());
    const DetectionResult d = detect(cal, model, clean[static_cast<std::size_t>(it - scores.begin())]);
    CHECK(d.scores[s] == cal.thresholds[s]);
    CHECK_FALSE(d.flags[s]);
  }

  SUBCASE("json roundtrip") {
    const auto path = std::filesystem::temp_directory_path() / "edgefool_calibration.json";
    save_calibration(path.string(), cal);
    const DetectorCalibration back = load_calibration(path.string());
    CHECK(back.squeezers == cal.squeezers);
    CHECK(back.thresholds == cal.thresholds);
    CHECK(back.target_fpr == cal.target_fpr);
    CHECK(back.sample_size == cal.sample_size);
    CHECK(back.clean_scores == cal.clean_scores);
    CHECK(back.joint_threshold == cal.joint_threshold);
    std::filesystem::remove(path);

    nlohmann::json bad = calibration_to_json(cal);
    bad["squeezers"][0].erase("threshold");
    CHECK_THROWS_AS(calibration_from_json(bad), FormatError);
    bad = calibration_to_json(cal);
    bad["squeezers"][1]["clean_scores"].erase(0);
    CHECK_THROWS_AS(calibration_from_json(bad), FormatError);
    bad = calibration_to_json(cal);
    bad["squeezers"][2]["name"] = "sharpen";
    CHECK_THROWS(calibration_from_json(bad));
  }
}
