#include "edgefool/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "edgefool/dataset.hpp"
#include "edgefool/error.hpp"
#include "edgefool/image_io.hpp"
#include "edgefool/random.hpp"
#include "edgefool/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace edgefool {

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": key '" + key + "' has the wrong type");
  }
}

std::string resolve(const std::string& path, const std::string& base_dir) {
  if (path.empty() || base_dir.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base_dir) / path).lexically_normal().string();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::vector<std::string> model_names(const std::vector<std::string>& paths) {
  std::vector<std::string> names;
  std::map<std::string, int> seen;
  for (const std::string& p : paths) {
    std::string name = fs::path(p).stem().string();
    const int n = seen[name]++;
    if (n > 0) name += "#" + std::to_string(n);
    names.push_back(name);
  }
  return names;
}

}  // namespace

// ---- configuration ---------------------------------------------------------

json attack_config_to_json(const AttackConfig& c) {
  json dilations = c.fcnn.dilations;
  return {{"alpha", c.alpha},
          {"tau", c.tau},
          {"v1", c.enhancement.v1},
          {"v2", c.enhancement.v2},
          {"v3", c.enhancement.v3},
          {"lr", c.adam.lr},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"adam_epsilon", c.adam.epsilon},
          {"grad_clip", c.grad_clip},
          {"max_iters", c.max_iters},
          {"l0_lambda", c.l0.lambda},
          {"l0_kappa", c.l0.kappa},
          {"l0_beta_max", c.l0.beta_max},
          {"dilations", dilations},
          {"fcnn_width", c.fcnn.width},
          {"adv_kappa", std::isinf(c.adv_kappa) ? json(nullptr) : json(c.adv_kappa)},
          {"adversarial_gradient", c.adversarial_gradient}};
}

AttackConfig attack_config_from_json(const json& j, AttackConfig c) {
  const std::string where = "attack config";
  reject_unknown(j,
                 {"alpha", "tau", "v1", "v2", "v3", "lr", "beta1", "beta2", "adam_epsilon", "grad_clip", "max_iters",
                  "l0_lambda", "l0_kappa", "l0_beta_max", "dilations", "fcnn_width", "adv_kappa",
                  "adversarial_gradient"},
                 where);
  read_opt(j, "alpha", c.alpha, where);
  read_opt(j, "tau", c.tau, where);
  read_opt(j, "v1", c.enhancement.v1, where);
  read_opt(j, "v2", c.enhancement.v2, where);
  read_opt(j, "v3", c.enhancement.v3, where);
  read_opt(j, "lr", c.adam.lr, where);
  read_opt(j, "beta1", c.adam.beta1, where);
  read_opt(j, "beta2", c.adam.beta2, where);
  read_opt(j, "adam_epsilon", c.adam.epsilon, where);
  read_opt(j, "grad_clip", c.grad_clip, where);
  read_opt(j, "max_iters", c.max_iters, where);
  read_opt(j, "l0_lambda", c.l0.lambda, where);
  read_opt(j, "l0_kappa", c.l0.kappa, where);
  read_opt(j, "l0_beta_max", c.l0.beta_max, where);
  read_opt(j, "dilations", c.fcnn.dilations, where);
  read_opt(j, "fcnn_width", c.fcnn.width, where);
  if (j.contains("adv_kappa")) {
    if (j["adv_kappa"].is_null()) {
      c.adv_kappa = std::numeric_limits<double>::infinity();
    } else {
      read_opt(j, "adv_kappa", c.adv_kappa, where);
    }
  }
  read_opt(j, "adversarial_gradient", c.adversarial_gradient, where);
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (dataset.empty()) throw ConfigError("experiment config: 'dataset' is required");
  if (target_model.empty()) throw ConfigError("experiment config: 'target_model' is required");
  if (jobs < 1) throw ConfigError("experiment config: 'jobs' must be >= 1");
  if (!(target_fpr >= 0.0 && target_fpr < 1.0)) throw ConfigError("experiment config: 'target_fpr' must lie in [0,1)");
  if (fgsm.enabled && !(fgsm.epsilon > 0.0)) throw ConfigError("experiment config: FGSM epsilon must be > 0");
  for (const Squeezer& s : squeezers) s.validate();
  attack.validate();
}

void ExperimentConfig::check_paths() const {
  std::vector<std::string> paths{dataset, target_model};
  if (!calibration_dataset.empty()) paths.push_back(calibration_dataset);
  paths.insert(paths.end(), transfer_models.begin(), transfer_models.end());
  for (const std::string& p : paths) {
    std::error_code ec;
    if (!fs::exists(p, ec)) throw ConfigError("path does not exist: '" + p + "'");
  }
}

json experiment_config_to_json(const ExperimentConfig& c) {
  json squeezers = json::array();
  for (const Squeezer& s : c.squeezers) squeezers.push_back(s.name());
  return {{"schema_version", kConfigSchemaVersion},
          {"dataset", c.dataset},
          {"calibration_dataset", c.calibration_dataset},
          {"target_model", c.target_model},
          {"transfer_models", c.transfer_models},
          {"attack", attack_config_to_json(c.attack)},
          {"fgsm", {{"enabled", c.fgsm.enabled}, {"epsilon", c.fgsm.epsilon}}},
          {"squeezers", squeezers},
          {"target_fpr", c.target_fpr},
          {"joint_detection", c.joint_detection},
          {"max_images", c.max_images},
          {"output_dir", c.output_dir},
          {"jobs", c.jobs},
          {"seed", c.seed},
          {"save_images", c.save_images},
          {"save_traces", c.save_traces}};
}

ExperimentConfig experiment_config_from_json(const json& j, const std::string& base_dir) {
  const std::string where = "experiment config";
  reject_unknown(j,
                 {"schema_version", "dataset", "calibration_dataset", "target_model", "transfer_models", "attack",
                  "fgsm", "squeezers", "target_fpr", "joint_detection", "max_images", "output_dir", "jobs", "seed",
                  "save_images", "save_traces"},
                 where);
  int version = kConfigSchemaVersion;
  read_opt(j, "schema_version", version, where);
  if (version != kConfigSchemaVersion) {
    throw ConfigError(where + ": unsupported schema_version " + std::to_string(version));
  }
  ExperimentConfig c;
  read_opt(j, "dataset", c.dataset, where);
  read_opt(j, "calibration_dataset", c.calibration_dataset, where);
  read_opt(j, "target_model", c.target_model, where);
  read_opt(j, "transfer_models", c.transfer_models, where);
  if (j.contains("attack")) c.attack = attack_config_from_json(j["attack"]);
  if (j.contains("fgsm")) {
    reject_unknown(j["fgsm"], {"enabled", "epsilon"}, "fgsm config");
    read_opt(j["fgsm"], "enabled", c.fgsm.enabled, "fgsm config");
    read_opt(j["fgsm"], "epsilon", c.fgsm.epsilon, "fgsm config");
  }
  if (j.contains("squeezers")) {
    std::vector<std::string> names;
    read_opt(j, "squeezers", names, where);
    c.squeezers.clear();
    for (const std::string& n : names) c.squeezers.push_back(Squeezer::parse(n));
  }
  read_opt(j, "target_fpr", c.target_fpr, where);
  read_opt(j, "joint_detection", c.joint_detection, where);
  read_opt(j, "max_images", c.max_images, where);
  read_opt(j, "output_dir", c.output_dir, where);
  read_opt(j, "jobs", c.jobs, where);
  read_opt(j, "seed", c.seed, where);
  read_opt(j, "save_images", c.save_images, where);
  read_opt(j, "save_traces", c.save_traces, where);

  c.dataset = resolve(c.dataset, base_dir);
  c.calibration_dataset = resolve(c.calibration_dataset, base_dir);
  c.target_model = resolve(c.target_model, base_dir);
  for (std::string& p : c.transfer_models) p = resolve(p, base_dir);
  c.output_dir = resolve(c.output_dir, base_dir);
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config '" + path + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j, fs::path(path).parent_path().string());
}

// ---- summaries -------------------------------------------------------------

std::string to_string(RowStatus status) {
  switch (status) {
    case RowStatus::Attacked: return "attacked";
    case RowStatus::Skipped: return "skipped";
    case RowStatus::Error: return "error";
  }
  return "unknown";
}

RowCounts count_rows(const std::vector<ImageRow>& rows) {
  RowCounts c;
  c.total = rows.size();
  for (const ImageRow& r : rows) {
    switch (r.status) {
      case RowStatus::Attacked: ++c.attacked; break;
      case RowStatus::Skipped: ++c.skipped; break;
      case RowStatus::Error: ++c.errors; break;
    }
  }
  return c;
}

MethodSummary summarize(const std::vector<ImageRow>& rows, bool fgsm, std::size_t num_transfer,
                        std::size_t num_squeezers) {
  MethodSummary s;
  std::vector<std::size_t> transferred(num_transfer, 0);
  std::vector<std::size_t> flagged(num_squeezers, 0);
  std::size_t joint_flagged = 0;
  bool any_joint = false;
  double iterations = 0.0;
  double mad = 0.0;
  for (const ImageRow& r : rows) {
    if (r.status != RowStatus::Attacked) continue;
    const MethodOutcome& m = fgsm ? r.fgsm : r.edgefool;
    if (!m.ran) continue;
    ++s.attacked;
    const bool misled = m.label != r.predicted;
    const bool misled_q = m.label_quantized != r.predicted;
    s.misled += misled;
    s.misled_quantized += misled_q;
    s.succeeded += m.success;
    iterations += static_cast<double>(m.iterations);
    mad += m.mean_abs_perturbation;
    for (std::size_t k = 0; k < num_transfer; ++k) {
      transferred[k] += m.transfer_labels.at(k) != r.transfer_clean_labels.at(k);
    }
    if (misled_q) {
      for (std::size_t k = 0; k < num_squeezers; ++k) flagged[k] += m.flags.at(k);
      if (m.joint_flag) {
        any_joint = true;
        joint_flagged += *m.joint_flag;
      }
    }
  }
  s.misleading_rate = ratio(s.misled, s.attacked);
  s.misleading_rate_quantized = ratio(s.misled_quantized, s.attacked);
  s.success_rate = ratio(s.succeeded, s.attacked);
  if (s.attacked > 0) {
    s.mean_iterations = iterations / static_cast<double>(s.attacked);
    s.mean_abs_perturbation = mad / static_cast<double>(s.attacked);
  }
  for (std::size_t k = 0; k < num_transfer; ++k) s.transferability.push_back(ratio(transferred[k], s.attacked));
  for (std::size_t k = 0; k < num_squeezers; ++k) s.detectability.push_back(ratio(flagged[k], s.misled_quantized));
  if (any_joint) s.joint_detectability = ratio(joint_flagged, s.misled_quantized);
  return s;
}

namespace {

json summary_to_json(const MethodSummary& s, const EvalReport& r) {
  json transfer = json::object();
  for (std::size_t k = 0; k < r.transfer_names.size(); ++k) transfer[r.transfer_names[k]] = opt_json(s.transferability[k]);
  json detect = json::object();
  for (std::size_t k = 0; k < r.squeezer_names.size(); ++k) detect[r.squeezer_names[k]] = opt_json(s.detectability[k]);
  json out = {{"attacked", s.attacked},
              {"misled", s.misled},
              {"misled_quantized", s.misled_quantized},
              {"succeeded", s.succeeded},
              {"misleading_rate", opt_json(s.misleading_rate)},
              {"misleading_rate_quantized", opt_json(s.misleading_rate_quantized)},
              {"success_rate", opt_json(s.success_rate)},
              {"mean_iterations", opt_json(s.mean_iterations)},
              {"mean_abs_perturbation", opt_json(s.mean_abs_perturbation)},
              {"transferability", transfer},
              {"detectability", detect}};
  if (r.joint_detection) out["joint_detectability"] = opt_json(s.joint_detectability);
  return out;
}

json comparison_json(const EvalReport& r) {
  json per = json::object();
  int not_higher = 0;
  int compared = 0;
  for (std::size_t k = 0; k < r.squeezer_names.size(); ++k) {
    const std::optional<double>& e = r.edgefool.detectability[k];
    const std::optional<double>& f = r.fgsm.detectability[k];
    json entry = {{"edgefool", opt_json(e)}, {"fgsm", opt_json(f)}};
    if (e && f) {
      entry["edgefool_not_higher"] = *e <= *f;
      if (r.squeezer_names[k].rfind("bits", 0) == 0) {
        ++compared;
        not_higher += *e <= *f;
      }
    } else {
      entry["edgefool_not_higher"] = nullptr;
    }
    per[r.squeezer_names[k]] = entry;
  }
  return {{"per_squeezer", per}, {"bit_depth_compared", compared}, {"bit_depth_edgefool_not_higher", not_higher}};
}

json outcome_json(const MethodOutcome& m, const EvalReport& r) {
  json scores = json::object();
  json flags = json::object();
  for (std::size_t k = 0; k < r.squeezer_names.size() && k < m.scores.size(); ++k) {
    scores[r.squeezer_names[k]] = m.scores[k];
    flags[r.squeezer_names[k]] = static_cast<bool>(m.flags[k]);
  }
  json transfer = json::object();
  for (std::size_t k = 0; k < r.transfer_names.size() && k < m.transfer_labels.size(); ++k) {
    transfer[r.transfer_names[k]] = m.transfer_labels[k];
  }
  json out = {{"success", m.success},
              {"iterations", m.iterations},
              {"smooth_loss", m.smooth},
              {"adversarial_loss", m.adversarial},
              {"label", m.label},
              {"label_quantized", m.label_quantized},
              {"mean_abs_perturbation", m.mean_abs_perturbation},
              {"transfer_labels", transfer},
              {"scores", scores},
              {"flags", flags}};
  if (m.joint_flag) out["joint_flag"] = *m.joint_flag;
  return out;
}

}  // namespace

nlohmann::json summary_json(const EvalReport& r) {
  json counts = {{"total", r.counts.total},
                 {"attacked", r.counts.attacked},
                 {"skipped", r.counts.skipped},
                 {"errors", r.counts.errors}};
  json out = {{"counts", counts}, {"edgefool", summary_to_json(r.edgefool, r)}};
  if (r.fgsm_enabled) {
    out["fgsm"] = summary_to_json(r.fgsm, r);
    out["comparison"] = comparison_json(r);
  } else {
    out["fgsm"] = nullptr;
  }
  return out;
}

json EvalReport::to_json() const {
  json out = summary_json(*this);
  out["schema_version"] = kReportSchemaVersion;
  out["tool_version"] = kVersion;
  out["timestamp"] = timestamp;
  out["config"] = config;
  out["target_weights_hash"] = target_hash;
  out["detector"] = calibration ? calibration_to_json(*calibration) : json(nullptr);
  json table = json::array();
  for (const ImageRow& row : rows) {
    json j = {{"index", row.index},
              {"file", row.file},
              {"label", row.label},
              {"predicted", row.predicted},
              {"status", to_string(row.status)},
              {"reason", row.reason}};
    if (row.status == RowStatus::Attacked) {
      json clean = json::object();
      for (std::size_t k = 0; k < transfer_names.size(); ++k) clean[transfer_names[k]] = row.transfer_clean_labels[k];
      j["transfer_clean_labels"] = clean;
      j["edgefool"] = outcome_json(row.edgefool, *this);
      j["fgsm"] = row.fgsm.ran ? outcome_json(row.fgsm, *this) : json(nullptr);
    }
    table.push_back(j);
  }
  out["rows"] = table;
  return out;
}

std::string report_digest(const nlohmann::json& report) {
  json copy = report;
  copy.erase("timestamp");
  const std::string text = copy.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return hex64(h);
}

// ---- CSV -------------------------------------------------------------------

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw FormatError("CSV: unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

const char* const kFixedColumns[] = {"index",       "file",        "label",       "predicted",   "status",
                                     "reason",      "ef_success",  "ef_iterations", "ef_smooth", "ef_adversarial",
                                     "ef_label",    "ef_label_q",  "ef_mad",      "fgsm_ran",    "fgsm_label",
                                     "fgsm_label_q", "fgsm_mad"};

}  // namespace

std::string rows_to_csv(const EvalReport& r) {
  std::ostringstream os;
  std::vector<std::string> header(std::begin(kFixedColumns), std::end(kFixedColumns));
  for (const std::string& t : r.transfer_names) {
    header.push_back("clean@" + t);
    header.push_back("ef@" + t);
    header.push_back("fgsm@" + t);
  }
  for (const std::string& s : r.squeezer_names) {
    header.push_back("ef_score@" + s);
    header.push_back("ef_flag@" + s);
    header.push_back("fgsm_score@" + s);
    header.push_back("fgsm_flag@" + s);
  }
  if (r.joint_detection) {
    header.push_back("ef_flag@joint");
    header.push_back("fgsm_flag@joint");
  }
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << csv_field(header[i]);
  os << '\n';
  for (const ImageRow& row : r.rows) {
    const bool attacked = row.status == RowStatus::Attacked;
    const MethodOutcome& e = row.edgefool;
    const MethodOutcome& f = row.fgsm;
    std::vector<std::string> cells{std::to_string(row.index), row.file, std::to_string(row.label),
                                   std::to_string(row.predicted), to_string(row.status), row.reason};
    if (attacked) {
      cells.insert(cells.end(), {e.success ? "1" : "0", std::to_string(e.iterations), num(e.smooth),
                                 num(e.adversarial), std::to_string(e.label), std::to_string(e.label_quantized),
                                 num(e.mean_abs_perturbation), f.ran ? "1" : "0"});
      if (f.ran) {
        cells.insert(cells.end(), {std::to_string(f.label), std::to_string(f.label_quantized),
                                   num(f.mean_abs_perturbation)});
      } else {
        cells.insert(cells.end(), {"", "", ""});
      }
      for (std::size_t k = 0; k < r.transfer_names.size(); ++k) {
        cells.push_back(std::to_string(row.transfer_clean_labels[k]));
        cells.push_back(std::to_string(e.transfer_labels[k]));
        cells.push_back(f.ran ? std::to_string(f.transfer_labels[k]) : "");
      }
      for (std::size_t k = 0; k < r.squeezer_names.size(); ++k) {
        cells.push_back(num(e.scores[k]));
        cells.push_back(e.flags[k] ? "1" : "0");
        cells.push_back(f.ran ? num(f.scores[k]) : "");
        cells.push_back(f.ran ? (f.flags[k] ? "1" : "0") : "");
      }
      if (r.joint_detection) {
        cells.push_back(e.joint_flag ? (*e.joint_flag ? "1" : "0") : "");
        cells.push_back(f.joint_flag ? (*f.joint_flag ? "1" : "0") : "");
      }
    } else {
      cells.resize(header.size());
    }
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << csv_field(cells[i]);
    os << '\n';
  }
  return os.str();
}

EvalReport report_from_csv(const std::string& csv_text) {
  const std::vector<std::vector<std::string>> table = parse_csv(csv_text);
  if (table.empty()) throw FormatError("CSV: empty table");
  const std::vector<std::string>& header = table[0];
  const std::size_t fixed = std::size(kFixedColumns);
  if (header.size() < fixed || !std::equal(header.begin(), header.begin() + fixed, std::begin(kFixedColumns))) {
    throw FormatError("CSV: header does not match the per-image table layout");
  }
  EvalReport r;
  std::size_t col = fixed;
  while (col + 2 < header.size() && header[col].rfind("clean@", 0) == 0) {
    r.transfer_names.push_back(header[col].substr(6));
    col += 3;
  }
  while (col + 3 < header.size() && header[col].rfind("ef_score@", 0) == 0) {
    r.squeezer_names.push_back(header[col].substr(9));
    col += 4;
  }
  if (col < header.size() && header[col] == "ef_flag@joint") {
    r.joint_detection = true;
    col += 2;
  }
  if (col != header.size()) throw FormatError("CSV: unexpected column '" + header[col] + "'");

  auto to_int = [](const std::string& s, std::size_t line) {
    try {
      std::size_t pos = 0;
      const long v = std::stol(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return static_cast<int>(v);
    } catch (const std::exception&) {
      throw FormatError("CSV line " + std::to_string(line) + ": bad integer '" + s + "'");
    }
  };
  auto to_double = [](const std::string& s, std::size_t line) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw FormatError("CSV line " + std::to_string(line) + ": bad number '" + s + "'");
    }
  };

  r.fgsm_enabled = false;
  for (std::size_t li = 1; li < table.size(); ++li) {
    const std::vector<std::string>& c = table[li];
    const std::size_t line = li + 1;
    if (c.size() != header.size()) {
      throw FormatError("CSV line " + std::to_string(line) + ": expected " + std::to_string(header.size()) +
                        " fields, found " + std::to_string(c.size()));
    }
    ImageRow row;
    row.index = static_cast<std::size_t>(to_int(c[0], line));
    row.file = c[1];
    row.label = to_int(c[2], line);
    row.predicted = to_int(c[3], line);
    if (c[4] == "attacked") {
      row.status = RowStatus::Attacked;
    } else if (c[4] == "skipped") {
      row.status = RowStatus::Skipped;
    } else if (c[4] == "error") {
      row.status = RowStatus::Error;
    } else {
      throw FormatError("CSV line " + std::to_string(line) + ": unknown status '" + c[4] + "'");
    }
    row.reason = c[5];
    if (row.status == RowStatus::Attacked) {
      MethodOutcome& e = row.edgefool;
      MethodOutcome& f = row.fgsm;
      e.ran = true;
      e.success = c[6] == "1";
      e.iterations = static_cast<std::size_t>(to_int(c[7], line));
      e.smooth = to_double(c[8], line);
      e.adversarial = to_double(c[9], line);
      e.label = to_int(c[10], line);
      e.label_quantized = to_int(c[11], line);
      e.mean_abs_perturbation = to_double(c[12], line);
      f.ran = c[13] == "1";
      if (f.ran) {
        r.fgsm_enabled = true;
        f.label = to_int(c[14], line);
        f.label_quantized = to_int(c[15], line);
        f.mean_abs_perturbation = to_double(c[16], line);
        f.success = f.label != row.predicted;
        f.iterations = 1;
      }
      std::size_t k = fixed;
      for (std::size_t t = 0; t < r.transfer_names.size(); ++t, k += 3) {
        row.transfer_clean_labels.push_back(to_int(c[k], line));
        e.transfer_labels.push_back(to_int(c[k + 1], line));
        if (f.ran) f.transfer_labels.push_back(to_int(c[k + 2], line));
      }
      for (std::size_t s = 0; s < r.squeezer_names.size(); ++s, k += 4) {
        e.scores.push_back(to_double(c[k], line));
        e.flags.push_back(c[k + 1] == "1");
        if (f.ran) {
          f.scores.push_back(to_double(c[k + 2], line));
          f.flags.push_back(c[k + 3] == "1");
        }
      }
      if (r.joint_detection) {
        if (!c[k].empty()) e.joint_flag = c[k] == "1";
        if (!c[k + 1].empty()) f.joint_flag = c[k + 1] == "1";
      }
    }
    r.rows.push_back(std::move(row));
  }
  r.counts = count_rows(r.rows);
  r.edgefool = summarize(r.rows, false, r.transfer_names.size(), r.squeezer_names.size());
  r.fgsm = summarize(r.rows, true, r.transfer_names.size(), r.squeezer_names.size());
  return r;
}

// ---- run -------------------------------------------------------------------

namespace {

struct Models {
  ClassifierModel target;
  std::vector<ClassifierModel> transfer;
};

void finish_outcome(MethodOutcome& m, const Image& adversarial, const Models& models,
                    const std::optional<DetectorCalibration>& cal) {
  const Image quantized = quantize8(adversarial);
  m.label_quantized = classify(models.target, quantized).label;
  for (const ClassifierModel& t : models.transfer) m.transfer_labels.push_back(classify(t, adversarial).label);
  if (cal) {
    DetectionResult d = detect(*cal, models.target, quantized);
    m.scores = std::move(d.scores);
    m.flags = std::move(d.flags);
    m.joint_flag = d.joint_flag;
  }
}

void attack_row(ImageRow& row, const Image& img, const ExperimentConfig& cfg, const Models& models,
                const std::optional<DetectorCalibration>& cal, const AttackObserver& on_attack) {
  for (const ClassifierModel& t : models.transfer) row.transfer_clean_labels.push_back(classify(t, img).label);

  AttackConfig acfg = cfg.attack;
  acfg.seed = mix_seed(cfg.seed, row.index);
  acfg.record_trace = cfg.save_traces;
  const AttackResult ef = edgefool_attack(img, models.target, acfg);
  MethodOutcome& e = row.edgefool;
  e.ran = true;
  e.success = ef.success;
  e.iterations = ef.iterations;
  e.smooth = ef.final_loss.smooth;
  e.adversarial = ef.final_loss.adversarial;
  e.label = ef.adversarial_label;
  e.mean_abs_perturbation = ef.mean_abs_perturbation;
  finish_outcome(e, ef.adversarial, models, cal);
  if (on_attack) on_attack(row, ef);

  std::optional<AttackResult> fg;
  if (cfg.fgsm.enabled) {
    fg = fgsm_attack(img, models.target, cfg.fgsm.epsilon);
    MethodOutcome& f = row.fgsm;
    f.ran = true;
    f.success = fg->success;
    f.iterations = fg->iterations;
    f.smooth = fg->final_loss.smooth;
    f.adversarial = fg->final_loss.adversarial;
    f.label = fg->adversarial_label;
    f.mean_abs_perturbation = fg->mean_abs_perturbation;
    finish_outcome(f, fg->adversarial, models, cal);
  }

  if (!cfg.output_dir.empty()) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%06zu", row.index);
    const fs::path out(cfg.output_dir);
    if (cfg.save_images) {
      write_png((out / "adversarial" / (std::string(stem) + "_edgefool.png")).string(), ef.adversarial);
      if (fg) write_png((out / "adversarial" / (std::string(stem) + "_fgsm.png")).string(), fg->adversarial);
    }
    if (cfg.save_traces) {
      std::ofstream os(out / "traces" / (std::string(stem) + ".csv"));
      os << trace_csv(ef.trace);
      if (!os) throw Error("cannot write loss trace for image " + std::string(stem));
    }
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw Error("cannot write '" + path.string() + "'");
}

}  // namespace

EvalReport run_evaluation(const ExperimentConfig& cfg, const ProgressFn& progress, const AttackObserver& on_attack) {
  cfg.validate();
  cfg.check_paths();
  auto log = [&](const std::string& msg) {
    if (progress) progress(msg);
  };

  Models models;
  models.target = load_model(cfg.target_model);
  for (const std::string& p : cfg.transfer_models) models.transfer.push_back(load_model(p));
  const Dataset data = load_dataset(cfg.dataset);
  log("loaded " + std::to_string(data.items.size()) + " images from " + cfg.dataset);

  EvalReport report;
  report.config = experiment_config_to_json(cfg);
  report.transfer_names = model_names(cfg.transfer_models);
  for (const Squeezer& s : cfg.squeezers) report.squeezer_names.push_back(s.name());
  report.fgsm_enabled = cfg.fgsm.enabled;
  report.joint_detection = cfg.joint_detection && !cfg.squeezers.empty();
  report.target_hash = hex64(weights_hash(models.target));

  if (!cfg.squeezers.empty()) {
    const std::vector<Image> clean =
        cfg.calibration_dataset.empty() ? data.images() : load_dataset(cfg.calibration_dataset).images();
    report.calibration = calibrate(models.target, clean, cfg.squeezers, cfg.target_fpr, cfg.joint_detection);
    log("calibrated detector on " + std::to_string(clean.size()) + " clean images");
  }

  std::vector<std::size_t> to_attack;
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    if (cfg.max_images > 0 && to_attack.size() == cfg.max_images) break;
    ImageRow row;
    row.index = i;
    row.file = data.items[i].path;
    row.label = data.items[i].label;
    try {
      row.predicted = classify(models.target, data.items[i].image).label;
      if (row.predicted != row.label) {
        row.status = RowStatus::Skipped;
        row.reason = "misclassified";
      } else {
        row.status = RowStatus::Attacked;
        to_attack.push_back(report.rows.size());
      }
    } catch (const std::exception& e) {
      row.status = RowStatus::Error;
      row.reason = e.what();
    }
    report.rows.push_back(std::move(row));
  }

  if (!cfg.output_dir.empty()) {
    fs::create_directories(cfg.output_dir);
    if (cfg.save_images) fs::create_directories(fs::path(cfg.output_dir) / "adversarial");
    if (cfg.save_traces) fs::create_directories(fs::path(cfg.output_dir) / "traces");
  }

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t k = next++; k < to_attack.size(); k = next++) {
      ImageRow& row = report.rows[to_attack[k]];
      try {
        attack_row(row, data.items[row.index].image, cfg, models, report.calibration, on_attack);
      } catch (const std::exception& e) {
        const int predicted = row.predicted;
        row = ImageRow{row.index, row.file, row.label, predicted, RowStatus::Error, e.what(), {}, {}, {}};
      }
      const std::size_t n = ++done;
      std::lock_guard<std::mutex> lock(log_mutex);
      log("image " + std::to_string(row.index) + " (" + std::to_string(n) + "/" + std::to_string(to_attack.size()) +
          "): " + (row.status == RowStatus::Error ? "error: " + row.reason
                                                 : "edgefool " + std::string(row.edgefool.success ? "success" : "failed") +
                                                       " after " + std::to_string(row.edgefool.iterations) + " iterations"));
    }
  };
  const std::size_t jobs = std::min(cfg.jobs, std::max<std::size_t>(to_attack.size(), 1));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  report.counts = count_rows(report.rows);
  report.edgefool = summarize(report.rows, false, report.transfer_names.size(), report.squeezer_names.size());
  report.fgsm = summarize(report.rows, true, report.transfer_names.size(), report.squeezer_names.size());
  report.timestamp = utc_timestamp();

  if (!cfg.output_dir.empty()) {
    const fs::path out(cfg.output_dir);
    write_text(out / "report.json", report.to_json().dump(2) + "\n");
    write_text(out / "images.csv", rows_to_csv(report));
  }
  return report;
}

}  // namespace edgefool
