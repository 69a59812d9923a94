#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "edgefool/classifier.hpp"
#include "edgefool/image.hpp"

namespace edgefool {

enum class SqueezerKind { Identity, BitDepth, Median };

struct Squeezer {
  SqueezerKind kind = SqueezerKind::Identity;
  int param = 0;  // bits for BitDepth, window size for Median

  static Squeezer identity() { return {SqueezerKind::Identity, 0}; }
  static Squeezer bit_depth(int bits) { return {SqueezerKind::BitDepth, bits}; }
  static Squeezer median(int k) { return {SqueezerKind::Median, k}; }

  // "identity", "bits4", "median2", ...
  std::string name() const;
  static Squeezer parse(const std::string& name);
  void validate() const;
  Image apply(const Image& img) const;

  friend bool operator==(const Squeezer&, const Squeezer&) = default;
};

// Bit depths 4..7 followed by 2x2 and 3x3 medians.
std::vector<Squeezer> default_squeezers();

// round(x * (2^b - 1)) / (2^b - 1), halves rounded up.
Image bit_depth_reduce(const Image& img, int bits);

// Per-channel k x k rank filter with replicated borders. The window spans
// offsets -(k/2) .. (k-1)/2; even windows take the lower middle value.
Image median_filter(const Image& img, int k);

// L1 distance between the probability vectors of img and each squeezed copy.
std::vector<double> squeeze_scores(const ClassifierModel& model, const Image& img,
                                   const std::vector<Squeezer>& squeezers);

inline constexpr std::size_t kMinCalibrationImages = 100;

struct DetectorCalibration {
  std::vector<Squeezer> squeezers;
  std::vector<double> thresholds;
  double target_fpr = 0.05;
  std::size_t sample_size = 0;
  std::vector<std::vector<double>> clean_scores;  // [squeezer][image]
  // Threshold on the max score over squeezers; set when calibrated with joint = true.
  std::optional<double> joint_threshold;
};

// Smallest clean score t with #(score > t) <= floor(target_fpr * n).
double quantile_threshold(std::vector<double> scores, double target_fpr);

DetectorCalibration calibrate(const ClassifierModel& model, const std::vector<Image>& clean,
                              const std::vector<Squeezer>& squeezers = default_squeezers(),
                              double target_fpr = 0.05, bool joint = false);

struct DetectionResult {
  std::vector<double> scores;
  std::vector<bool> flags;  // score > threshold, per squeezer
  std::optional<bool> joint_flag;
};

DetectionResult detect(const DetectorCalibration& calibration, const ClassifierModel& model, const Image& img);

// Per-squeezer flags only.
std::vector<bool> is_adversarial(const DetectorCalibration& calibration, const ClassifierModel& model,
                                 const Image& img);

nlohmann::json calibration_to_json(const DetectorCalibration& calibration);
DetectorCalibration calibration_from_json(const nlohmann::json& j);
void save_calibration(const std::string& path, const DetectorCalibration& calibration);
DetectorCalibration load_calibration(const std::string& path);

}  // namespace edgefool
