#include "edgefool/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "edgefool/error.hpp"

namespace edgefool {

void AttackConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("AttackConfig: alpha must be > 0");
  if (!(tau > 0.0)) throw ConfigError("AttackConfig: tau must be > 0");
  if (max_iters < 1) throw ConfigError("AttackConfig: max_iters must be >= 1");
  if (!(adam.lr > 0.0)) throw ConfigError("AttackConfig: learning rate must be > 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("AttackConfig: grad_clip must be >= 0");
  if (std::isnan(adv_kappa)) throw ConfigError("AttackConfig: adv_kappa must not be NaN");
  enhancement.validate();
  l0.validate();
  fcnn.validate();
}

std::string to_string(AttackStatus status) {
  switch (status) {
    case AttackStatus::Success: return "success";
    case AttackStatus::NotConverged: return "not_converged";
    case AttackStatus::AlreadyMisled: return "already_misled";
  }
  return "unknown";
}

SmoothingLoss smoothing_loss(const Image& structure, const Image& guidance) {
  require_same_shape(structure, guidance, "smoothing_loss");
  SmoothingLoss out;
  out.gradient = Image(structure.shape());
  const double n = static_cast<double>(structure.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < structure.size(); ++i) {
    const double d = structure[i] - guidance[i];
    acc += d * d;
    out.gradient[i] = 2.0 * d / n;
  }
  out.value = acc / n;
  return out;
}

namespace {

AttackResult already_misled(const Image& img, int predicted) {
  AttackResult r;
  r.status = AttackStatus::AlreadyMisled;
  r.adversarial = img;
  r.original_label = predicted;
  r.adversarial_label = predicted;
  return r;
}

}  // namespace

AttackResult edgefool_attack(const Image& img, const ClassifierModel& model, const AttackConfig& cfg,
                             const AttackOptions& options) {
  require_image(img, "edgefool_attack");
  cfg.validate();
  const Prediction original = classify(model, img);
  const int y = original.label;
  if (options.true_label && *options.true_label != y) return already_misled(img, y);

  const Image guidance = options.guidance ? *options.guidance : l0_smooth(img, cfg.l0);
  require_same_shape(img, guidance, "edgefool_attack (guidance)");
  const LabImage original_lab = rgb_to_lab(img);

  FcnnParams params = fcnn_init(cfg.fcnn, cfg.seed);
  std::vector<Tensor*> tensors = params.tensors();
  std::vector<AdamState> states;
  states.reserve(tensors.size());
  for (const Tensor* t : tensors) states.push_back(AdamState::for_params(*t, cfg.adam));

  AttackResult result;
  result.original_label = y;
  FcnnCache fcache;
  ClassifierCache ccache;
  for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
    const Image structure = fcnn_forward(img, params, &fcache);
    SmoothingLoss smooth = smoothing_loss(structure, guidance);
    const Composition comp = compose_adversarial(original_lab, structure, cfg.enhancement);
    const Tensor logits = classifier_logits(model, comp.adversarial, &ccache);
    const MarginLoss margin = margin_loss(logits.values(), y);
    const int label = argmax(logits.values());

    LossBreakdown loss{cfg.alpha * smooth.value + margin.value, smooth.value, margin.value};
    if (!std::isfinite(loss.total)) {
      throw NumericError("edgefool_attack: non-finite loss", static_cast<std::ptrdiff_t>(iter));
    }
    if (cfg.record_trace) result.trace.push_back({iter, loss, label});

    result.iterations = iter + 1;
    result.final_loss = loss;
    result.adversarial = comp.adversarial;
    result.adversarial_label = label;
    result.clamp_fraction = comp.clamp_fraction;

    if (label != y && smooth.value < cfg.tau) break;
    if (iter + 1 == cfg.max_iters) break;

    Image grad_structure = std::move(smooth.gradient);
    grad_structure *= cfg.alpha;
    if (cfg.adversarial_gradient && margin.value > -cfg.adv_kappa) {
      const Image grad_adv = classifier_backward_to_input(model, ccache, margin.gradient);
      grad_structure += compose_adversarial_backward(grad_adv, comp, cfg.enhancement);
    }
    if (cfg.grad_clip > 0.0) {
      const double norm = std::sqrt(dot(grad_structure, grad_structure));
      if (norm > cfg.grad_clip) grad_structure *= cfg.grad_clip / norm;
    }
    const FcnnGrads grads = fcnn_backward(grad_structure, fcache, params);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (!grads[i].all_finite()) {
        throw NumericError("edgefool_attack: non-finite gradient", static_cast<std::ptrdiff_t>(iter));
      }
      adam_step(*tensors[i], grads[i], states[i]);
    }
    ++params.revision;
  }

  result.success = result.adversarial_label != y && result.final_loss.smooth < cfg.tau;
  result.status = result.success ? AttackStatus::Success : AttackStatus::NotConverged;
  result.mean_abs_perturbation = mean_abs_diff(result.adversarial, img);
  result.fcnn = std::move(params);
  return result;
}

AttackResult fgsm_attack(const Image& img, const ClassifierModel& model, double epsilon,
                         std::optional<int> true_label) {
  require_image(img, "fgsm_attack");
  if (!(epsilon >= 0.0)) throw ConfigError("fgsm_attack: epsilon must be >= 0");
  ClassifierCache cache;
  const Tensor logits = classifier_logits(model, img, &cache);
  const int y = argmax(logits.values());
  if (true_label && *true_label != y) return already_misled(img, y);

  Tensor grad_logits;
  cross_entropy(logits.values(), y, &grad_logits);
  const Image grad = classifier_backward_to_input(model, cache, grad_logits);
  Image adv = img;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
    adv[i] = std::clamp(img[i] + epsilon * s, 0.0, 1.0);
  }

  const Tensor adv_logits = classifier_logits(model, adv);
  const MarginLoss margin = margin_loss(adv_logits.values(), y);
  AttackResult r;
  r.adversarial = std::move(adv);
  r.original_label = y;
  r.adversarial_label = argmax(adv_logits.values());
  r.iterations = 1;
  r.final_loss = {margin.value, 0.0, margin.value};
  r.success = r.adversarial_label != y;
  r.status = r.success ? AttackStatus::Success : AttackStatus::NotConverged;
  r.mean_abs_perturbation = mean_abs_diff(r.adversarial, img);
  return r;
}

std::string trace_csv(const std::vector<IterationRecord>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,total,smooth,adversarial,label\n";
  for (const IterationRecord& r : trace) {
    os << r.iteration << ',' << r.loss.total << ',' << r.loss.smooth << ',' << r.loss.adversarial << ','
       << r.label << '\n';
  }
  return os.str();
}

}  // namespace edgefool
