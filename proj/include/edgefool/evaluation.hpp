#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "edgefool/attack.hpp"
#include "edgefool/detector.hpp"

namespace edgefool {

struct FgsmSettings {
  bool enabled = true;
  double epsilon = kDefaultFgsmEpsilon;
};

struct ExperimentConfig {
  std::string dataset;              // images to attack
  std::string calibration_dataset;  // clean detector calibration set; empty: use `dataset`
  std::string target_model;
  std::vector<std::string> transfer_models;
  AttackConfig attack;
  FgsmSettings fgsm;
  std::vector<Squeezer> squeezers = default_squeezers();  // empty: no detection
  double target_fpr = 0.05;
  bool joint_detection = false;
  std::size_t max_images = 0;  // cap on attacked images, 0 for no cap
  std::string output_dir;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
  bool save_images = true;
  bool save_traces = false;

  void validate() const;
  // Throws ConfigError naming the first referenced path that does not exist.
  void check_paths() const;
};

nlohmann::json attack_config_to_json(const AttackConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
AttackConfig attack_config_from_json(const nlohmann::json& j, AttackConfig base = {});

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
// Relative paths are resolved against `base_dir`.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::string& base_dir = "");
ExperimentConfig load_experiment_config(const std::string& path);

struct MethodOutcome {
  bool ran = false;
  bool success = false;
  std::size_t iterations = 0;
  double smooth = 0.0;
  double adversarial = 0.0;
  int label = -1;            // target prediction on the adversarial image
  int label_quantized = -1;  // same after 8-bit quantization
  double mean_abs_perturbation = 0.0;
  std::vector<int> transfer_labels;  // per transfer model
  std::vector<double> scores;        // per squeezer, on the quantized image
  std::vector<bool> flags;
  std::optional<bool> joint_flag;
};

enum class RowStatus { Attacked, Skipped, Error };

std::string to_string(RowStatus status);

struct ImageRow {
  std::size_t index = 0;
  std::string file;
  int label = 0;
  int predicted = 0;
  RowStatus status = RowStatus::Skipped;
  std::string reason;                      // skip or error reason
  std::vector<int> transfer_clean_labels;  // per transfer model, on the clean image
  MethodOutcome edgefool;
  MethodOutcome fgsm;
};

struct MethodSummary {
  std::size_t attacked = 0;
  std::size_t misled = 0;
  std::size_t misled_quantized = 0;
  std::size_t succeeded = 0;
  // Rates are empty when nothing was attacked (or nothing misled, for detectability).
  std::optional<double> misleading_rate;            // misled / attacked
  std::optional<double> misleading_rate_quantized;  // after 8-bit quantization
  std::optional<double> success_rate;               // attack's own success flag
  std::optional<double> mean_iterations;
  std::optional<double> mean_abs_perturbation;
  std::vector<std::optional<double>> transferability;  // per transfer model
  std::vector<std::optional<double>> detectability;    // per squeezer
  std::optional<double> joint_detectability;
};

struct RowCounts {
  std::size_t total = 0;
  std::size_t attacked = 0;
  std::size_t skipped = 0;
  std::size_t errors = 0;
};

// Transferability to model k: fraction of attacked images whose adversarial
// changes model k's prediction on the clean image. Detectability per squeezer:
// fraction of adversarials that still mislead the target after quantization
// and are flagged.
MethodSummary summarize(const std::vector<ImageRow>& rows, bool fgsm, std::size_t num_transfer,
                        std::size_t num_squeezers);
RowCounts count_rows(const std::vector<ImageRow>& rows);

struct EvalReport {
  std::vector<std::string> transfer_names;
  std::vector<std::string> squeezer_names;
  bool fgsm_enabled = true;
  bool joint_detection = false;
  std::vector<ImageRow> rows;
  RowCounts counts;
  MethodSummary edgefool;
  MethodSummary fgsm;
  std::optional<DetectorCalibration> calibration;
  nlohmann::json config;  // echo
  std::string target_hash;
  std::string timestamp;  // UTC, ISO 8601

  nlohmann::json to_json() const;
};

// Logging callback for progress lines; may be empty.
using ProgressFn = std::function<void(const std::string&)>;

// Sees every EdgeFool result with its (partly filled) row. Workers may call it
// concurrently.
using AttackObserver = std::function<void(const ImageRow&, const AttackResult&)>;

// Attacks every correctly classified image (up to max_images) and writes
// report.json, images.csv and, when enabled, adversarial PNGs and loss traces
// into cfg.output_dir (skipped when output_dir is empty).
EvalReport run_evaluation(const ExperimentConfig& cfg, const ProgressFn& progress = {},
                          const AttackObserver& on_attack = {});

// Per-image table; column order is fixed, see the README.
std::string rows_to_csv(const EvalReport& report);
// Rebuilds rows and summaries from a table written by rows_to_csv.
EvalReport report_from_csv(const std::string& csv_text);

// Metrics only (no rows, config or timestamp); used by `report`.
nlohmann::json summary_json(const EvalReport& report);

// FNV-1a over the report JSON with the timestamp removed.
std::string report_digest(const nlohmann::json& report);

}  // namespace edgefool
