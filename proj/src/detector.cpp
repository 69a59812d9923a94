#include "edgefool/detector.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "edgefool/error.hpp"

namespace edgefool {

std::string Squeezer::name() const {
  switch (kind) {
    case SqueezerKind::Identity: return "identity";
    case SqueezerKind::BitDepth: return "bits" + std::to_string(param);
    case SqueezerKind::Median: return "median" + std::to_string(param);
  }
  return "unknown";
}

Squeezer Squeezer::parse(const std::string& name) {
  auto number = [&](std::size_t prefix) {
    const std::string digits = name.substr(prefix);
    if (digits.empty() || digits.size() > 3 || !std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c) != 0; })) {
      throw ConfigError("unknown squeezer '" + name + "'");
    }
    return std::stoi(digits);
  };
  Squeezer s;
  if (name == "identity") {
    s = identity();
  } else if (name.rfind("bits", 0) == 0) {
    s = bit_depth(number(4));
  } else if (name.rfind("median", 0) == 0) {
    s = median(number(6));
  } else {
    throw ConfigError("unknown squeezer '" + name + "' (expected identity, bitsN or medianK)");
  }
  s.validate();
  return s;
}

void Squeezer::validate() const {
  if (kind == SqueezerKind::BitDepth && (param < 1 || param > 8)) {
    throw ConfigError("bit-depth squeezer: bits must lie in [1,8], got " + std::to_string(param));
  }
  if (kind == SqueezerKind::Median && param < 1) {
    throw ConfigError("median squeezer: window must be >= 1, got " + std::to_string(param));
  }
}

Image Squeezer::apply(const Image& img) const {
  switch (kind) {
    case SqueezerKind::Identity: return img;
    case SqueezerKind::BitDepth: return bit_depth_reduce(img, param);
    case SqueezerKind::Median: return median_filter(img, param);
  }
  return img;
}

std::vector<Squeezer> default_squeezers() {
  return {Squeezer::bit_depth(4), Squeezer::bit_depth(5), Squeezer::bit_depth(6), Squeezer::bit_depth(7),
          Squeezer::median(2), Squeezer::median(3)};
}

Image bit_depth_reduce(const Image& img, int bits) {
  if (bits < 1 || bits > 8) throw ConfigError("bit_depth_reduce: bits must lie in [1,8]");
  const double levels = std::ldexp(1.0, bits) - 1.0;
  Image out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) {
    out[i] = std::floor(std::clamp(img[i], 0.0, 1.0) * levels + 0.5) / levels;
  }
  return out;
}

Image median_filter(const Image& img, int k) {
  require_image(img, "median_filter");
  if (k < 1) throw ConfigError("median_filter: window must be >= 1");
  const auto h = static_cast<std::ptrdiff_t>(img.dim(1));
  const auto w = static_cast<std::ptrdiff_t>(img.dim(2));
  const std::ptrdiff_t lo = -(k / 2);
  const std::ptrdiff_t hi = (k - 1) / 2;
  const std::size_t mid = (static_cast<std::size_t>(k * k) - 1) / 2;
  Image out(img.shape());
  std::vector<double> window(static_cast<std::size_t>(k * k));
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        std::size_t n = 0;
        for (std::ptrdiff_t dy = lo; dy <= hi; ++dy) {
          const auto yy = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(y + dy, 0, h - 1));
          for (std::ptrdiff_t dx = lo; dx <= hi; ++dx) {
            const auto xx = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(x + dx, 0, w - 1));
            window[n++] = img.at(c, yy, xx);
          }
        }
        std::nth_element(window.begin(), window.begin() + static_cast<std::ptrdiff_t>(mid), window.end());
        out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = window[mid];
      }
    }
  }
  return out;
}

std::vector<double> squeeze_scores(const ClassifierModel& model, const Image& img,
                                   const std::vector<Squeezer>& squeezers) {
  const Prediction base = classify(model, img);
  std::vector<double> scores;
  scores.reserve(squeezers.size());
  for (const Squeezer& s : squeezers) {
    const Prediction p = classify(model, s.apply(img));
    double l1 = 0.0;
    for (std::size_t d = 0; d < p.probs.size(); ++d) l1 += std::abs(base.probs[d] - p.probs[d]);
    scores.push_back(l1);
  }
  return scores;
}

double quantile_threshold(std::vector<double> scores, double target_fpr) {
  if (scores.empty()) throw ConfigError("quantile_threshold: no scores");
  if (!(target_fpr >= 0.0 && target_fpr < 1.0)) throw ConfigError("quantile_threshold: target_fpr must lie in [0,1)");
  std::sort(scores.begin(), scores.end());
  const std::size_t n = scores.size();
  // Tolerance guards products such as 0.05 * 100 landing just below an integer.
  const auto allowed = static_cast<std::size_t>(std::floor(target_fpr * static_cast<double>(n) + 1e-9));
  return scores[n - std::min(allowed, n - 1) - 1];
}

DetectorCalibration calibrate(const ClassifierModel& model, const std::vector<Image>& clean,
                              const std::vector<Squeezer>& squeezers, double target_fpr, bool joint) {
  if (clean.size() < kMinCalibrationImages) {
    throw ConfigError("calibrate: need at least " + std::to_string(kMinCalibrationImages) + " clean images, got " +
                      std::to_string(clean.size()));
  }
  if (squeezers.empty()) throw ConfigError("calibrate: no squeezers");
  for (const Squeezer& s : squeezers) s.validate();
  DetectorCalibration cal;
  cal.squeezers = squeezers;
  cal.target_fpr = target_fpr;
  cal.sample_size = clean.size();
  cal.clean_scores.assign(squeezers.size(), {});
  std::vector<double> joint_scores;
  for (const Image& img : clean) {
    const std::vector<double> s = squeeze_scores(model, img, squeezers);
    for (std::size_t k = 0; k < s.size(); ++k) cal.clean_scores[k].push_back(s[k]);
    joint_scores.push_back(*std::max_element(s.begin(), s.end()));
  }
  for (const std::vector<double>& column : cal.clean_scores) {
    cal.thresholds.push_back(quantile_threshold(column, target_fpr));
  }
  if (joint) cal.joint_threshold = quantile_threshold(joint_scores, target_fpr);
  return cal;
}

DetectionResult detect(const DetectorCalibration& calibration, const ClassifierModel& model, const Image& img) {
  if (calibration.thresholds.size() != calibration.squeezers.size()) {
    throw ConfigError("detect: calibration has mismatched squeezer and threshold lists");
  }
  DetectionResult r;
  r.scores = squeeze_scores(model, img, calibration.squeezers);
  for (std::size_t k = 0; k < r.scores.size(); ++k) r.flags.push_back(r.scores[k] > calibration.thresholds[k]);
  if (calibration.joint_threshold) {
    r.joint_flag = *std::max_element(r.scores.begin(), r.scores.end()) > *calibration.joint_threshold;
  }
  return r;
}

std::vector<bool> is_adversarial(const DetectorCalibration& calibration, const ClassifierModel& model,
                                 const Image& img) {
  return detect(calibration, model, img).flags;
}

nlohmann::json calibration_to_json(const DetectorCalibration& calibration) {
  nlohmann::json j;
  j["target_fpr"] = calibration.target_fpr;
  j["sample_size"] = calibration.sample_size;
  j["squeezers"] = nlohmann::json::array();
  for (std::size_t k = 0; k < calibration.squeezers.size(); ++k) {
    nlohmann::json entry{{"name", calibration.squeezers[k].name()}, {"threshold", calibration.thresholds.at(k)}};
    if (k < calibration.clean_scores.size()) entry["clean_scores"] = calibration.clean_scores[k];
    j["squeezers"].push_back(std::move(entry));
  }
  j["joint_threshold"] = calibration.joint_threshold ? nlohmann::json(*calibration.joint_threshold) : nlohmann::json();
  return j;
}

DetectorCalibration calibration_from_json(const nlohmann::json& j) {
  DetectorCalibration cal;
  try {
    cal.target_fpr = j.at("target_fpr").get<double>();
    cal.sample_size = j.at("sample_size").get<std::size_t>();
    for (const nlohmann::json& s : j.at("squeezers")) {
      cal.squeezers.push_back(Squeezer::parse(s.at("name").get<std::string>()));
      cal.thresholds.push_back(s.at("threshold").get<double>());
      if (s.contains("clean_scores")) {
        cal.clean_scores.push_back(s["clean_scores"].get<std::vector<double>>());
        if (cal.clean_scores.back().size() != cal.sample_size) {
          throw FormatError("detector calibration: clean score count differs from sample_size");
        }
      }
    }
    if (!cal.clean_scores.empty() && cal.clean_scores.size() != cal.squeezers.size()) {
      throw FormatError("detector calibration: clean scores missing for some squeezers");
    }
    if (j.contains("joint_threshold") && !j["joint_threshold"].is_null()) {
      cal.joint_threshold = j["joint_threshold"].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("detector calibration: ") + e.what());
  }
  return cal;
}

void save_calibration(const std::string& path, const DetectorCalibration& calibration) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write '" + path + "'");
  os << calibration_to_json(calibration).dump(2) << '\n';
  if (!os) throw Error("failed writing '" + path + "'");
}

DetectorCalibration load_calibration(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
  return calibration_from_json(j);
}

}  // namespace edgefool
