#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "edgefool/classifier.hpp"
#include "edgefool/enhancement.hpp"
#include "edgefool/fcnn.hpp"
#include "edgefool/smoothing.hpp"

namespace edgefool {

struct AttackConfig {
  double alpha = 10.0;  // weight of the smoothing loss
  double tau = 5e-4;    // smoothing loss threshold of the stopping rule
  EnhancementParams enhancement;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
  // Upper bound on the L2 norm of the loss gradient w.r.t. the structure
  // image; 0 disables clipping.
  double grad_clip = 0.05;
  std::size_t max_iters = 500;
  L0Config l0;
  FcnnArchitecture fcnn;
  std::uint64_t seed = 0;
  // Margin below which the adversarial term stops contributing gradient
  // (hinge at -kappa). Infinity keeps the raw margin gradient throughout.
  double adv_kappa = 0.0;
  // false: train on the smoothing loss only.
  bool adversarial_gradient = true;
  bool record_trace = false;

  void validate() const;
};

/// total = alpha * smooth + adversarial.
struct LossBreakdown {
  double total = 0.0;
  double smooth = 0.0;
  double adversarial = 0.0;
};

struct IterationRecord {
  std::size_t iteration = 0;
  LossBreakdown loss;
  int label = 0;
};

enum class AttackStatus { Success, NotConverged, AlreadyMisled };

std::string to_string(AttackStatus status);

struct AttackResult {
  Image adversarial;
  AttackStatus status = AttackStatus::NotConverged;
  bool success = false;  // misled AND final smooth < tau
  std::size_t iterations = 0;
  LossBreakdown final_loss;
  int original_label = 0;
  int adversarial_label = 0;
  double mean_abs_perturbation = 0.0;
  double clamp_fraction = 0.0;
  std::vector<IterationRecord> trace;
  FcnnParams fcnn;  // trained network (empty for FGSM or skipped images)

  bool misled() const { return adversarial_label != original_label; }
};

struct SmoothingLoss {
  double value = 0.0;
  Image gradient;
};

// Mean squared difference over all pixels and channels; gradient 2 (s - g) / N.
SmoothingLoss smoothing_loss(const Image& structure, const Image& guidance);

struct AttackOptions {
  // Ground-truth label; when the model already gets it wrong the attack is skipped.
  std::optional<int> true_label;
  // Precomputed L0-smoothed guidance image (computed from the input otherwise).
  std::optional<Image> guidance;
};

/// Trains a fresh FCNN on `img` until the enhanced image misleads `model`
/// with the smoothing loss under tau, or max_iters is reached.
AttackResult edgefool_attack(const Image& img, const ClassifierModel& model, const AttackConfig& cfg,
                             const AttackOptions& options = {});

inline constexpr double kDefaultFgsmEpsilon = 8.0 / 255.0;

// One signed-gradient step on the cross-entropy of the original prediction.
AttackResult fgsm_attack(const Image& img, const ClassifierModel& model, double epsilon = kDefaultFgsmEpsilon,
                         std::optional<int> true_label = std::nullopt);

// Loss trace as CSV: iteration,total,smooth,adversarial,label
std::string trace_csv(const std::vector<IterationRecord>& trace);

}  // namespace edgefool
