#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "edgefool/attack.hpp"
#include "edgefool/dataset.hpp"
#include "edgefool/detector.hpp"
#include "edgefool/error.hpp"
#include "edgefool/evaluation.hpp"
#include "edgefool/image_io.hpp"
#include "edgefool/random.hpp"
#include "edgefool/synthetic.hpp"
#include "edgefool/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace edgefool;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

// Image files given directly, or the sorted image files of a directory.
std::vector<std::string> collect_inputs(const std::vector<std::string>& inputs) {
  std::vector<std::string> files;
  for (const std::string& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<std::string> found;
      for (const fs::directory_entry& e : fs::directory_iterator(in)) {
        if (e.is_regular_file() && is_image_path(e.path().string())) found.push_back(e.path().string());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(in);
    }
  }
  if (files.empty()) throw ConfigError("no input images");
  return files;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream os(path);
  os << j.dump(2) << '\n';
  if (!os) throw Error("cannot write '" + path + "'");
}

json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read '" + path + "'");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

// Runs fn(i) for i in [0, n) on `jobs` threads.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) return worker();
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
}

struct GenDataOptions {
  std::string out;
  std::size_t per_class = 100;
  std::size_t classes = 10;
  std::size_t size = 32;
  std::uint64_t seed = 0;
};

int run_gen_data(const GenDataOptions& o) {
  SyntheticConfig cfg{o.classes, o.size, o.per_class, o.seed};
  const std::vector<LabeledImage> items = generate_synthetic(cfg);
  const std::vector<std::string>& all = synthetic_class_names();
  save_dataset(o.out, {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(o.classes)}, items);
  std::cout << "wrote " << items.size() << " images to " << o.out << '\n';
  return 0;
}

struct TrainOptions {
  std::string data;
  std::string test;
  std::string arch = "cnn-a";
  std::string out;
  TrainConfig cfg;
};

int run_train(TrainOptions o) {
  const Dataset train = load_dataset(o.data);
  std::vector<LabeledImage> test;
  if (!o.test.empty()) {
    const Dataset t = load_dataset(o.test);
    if (t.class_names != train.class_names) throw ConfigError("train and test sets have different class directories");
    test = t.labeled();
  }
  o.cfg.verbose = true;
  const TrainResult r = train_classifier(train.labeled(), test, o.arch, train.class_names.size(), o.cfg);
  save_model(o.out, r.model);
  std::cout << "architecture " << o.arch << "\ntrain_accuracy " << r.train_accuracy << '\n';
  if (!test.empty()) std::cout << "test_accuracy " << r.test_accuracy << '\n';
  std::cout << "saved " << o.out << '\n';
  return 0;
}

struct SmoothOptions {
  std::vector<std::string> inputs;
  std::string out;
  L0Config l0;
};

int run_smooth(const SmoothOptions& o) {
  const std::vector<std::string> files = collect_inputs(o.inputs);
  fs::create_directories(o.out);
  for (const std::string& f : files) {
    const Image img = read_image(f);
    const Image smooth = l0_smooth(img, o.l0);
    const std::string dst = (fs::path(o.out) / (fs::path(f).stem().string() + "_smooth.png")).string();
    write_png(dst, smooth);
    std::cout << f << " -> " << dst << " nonzero_gradients " << gradient_count(smooth) << '\n';
  }
  return 0;
}

struct AttackOptionsCli {
  std::string model;
  std::vector<std::string> inputs;
  std::string out;
  std::string config;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  bool trace = false;
  bool fgsm = false;
  bool save_fcnn = false;
  std::size_t max_iters = 0;
};

int run_attack(const AttackOptionsCli& o) {
  AttackConfig cfg;
  if (!o.config.empty()) cfg = attack_config_from_json(read_json(o.config));
  if (o.max_iters > 0) cfg.max_iters = o.max_iters;
  cfg.record_trace = o.trace;
  cfg.validate();
  const ClassifierModel model = load_model(o.model);
  const std::vector<std::string> files = collect_inputs(o.inputs);
  fs::create_directories(o.out);

  std::vector<std::string> lines(files.size());
  std::vector<std::string> failures(files.size());
  parallel_for(files.size(), o.jobs, [&](std::size_t i) {
    try {
      const Image img = read_image(files[i]);
      const std::string stem = (fs::path(o.out) / fs::path(files[i]).stem()).string();
      AttackConfig c = cfg;
      c.seed = mix_seed(o.seed, i);
      AttackResult r = o.fgsm ? fgsm_attack(img, model) : edgefool_attack(img, model, c);
      write_png(stem + "_adv.png", r.adversarial);
      if (o.trace && !o.fgsm) {
        std::ofstream os(stem + "_trace.csv");
        os << trace_csv(r.trace);
      }
      if (o.save_fcnn && !o.fgsm) save_fcnn(stem + "_fcnn.dfw", r.fcnn);
      std::ostringstream line;
      line << files[i] << " status " << to_string(r.status) << " label " << r.original_label << " -> "
           << r.adversarial_label << " iterations " << r.iterations << " smooth " << r.final_loss.smooth
           << " margin " << r.final_loss.adversarial << " mean_abs_perturbation " << r.mean_abs_perturbation;
      lines[i] = line.str();
    } catch (const std::exception& e) {
      failures[i] = files[i] + ": " + e.what();
    }
  });
  bool failed = false;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (!failures[i].empty()) {
      std::cerr << "error: " << failures[i] << '\n';
      failed = true;
    } else {
      std::cout << lines[i] << '\n';
    }
  }
  return failed ? kExitRuntime : 0;
}

struct DetectOptions {
  std::string model;
  std::string clean;
  std::string calibration;
  std::string out;
  std::vector<std::string> inputs;
  std::vector<std::string> squeezers;
  double fpr = 0.05;
  bool joint = false;
};

int run_detect_calibrate(const DetectOptions& o) {
  std::vector<Squeezer> squeezers = default_squeezers();
  if (!o.squeezers.empty()) {
    squeezers.clear();
    for (const std::string& s : o.squeezers) squeezers.push_back(Squeezer::parse(s));
  }
  const ClassifierModel model = load_model(o.model);
  const Dataset clean = load_dataset(o.clean);
  const DetectorCalibration cal = calibrate(model, clean.images(), squeezers, o.fpr, o.joint);
  save_calibration(o.out, cal);
  for (std::size_t k = 0; k < cal.squeezers.size(); ++k) {
    std::cout << cal.squeezers[k].name() << " threshold " << cal.thresholds[k] << '\n';
  }
  std::cout << "saved " << o.out << '\n';
  return 0;
}

int run_detect_score(const DetectOptions& o) {
  const ClassifierModel model = load_model(o.model);
  const DetectorCalibration cal = load_calibration(o.calibration);
  for (const std::string& f : collect_inputs(o.inputs)) {
    const DetectionResult d = detect(cal, model, read_image(f));
    std::cout << f;
    for (std::size_t k = 0; k < d.scores.size(); ++k) {
      std::cout << ' ' << cal.squeezers[k].name() << '=' << d.scores[k] << (d.flags[k] ? "*" : "");
    }
    if (d.joint_flag) std::cout << " joint=" << (*d.joint_flag ? "flagged" : "clean");
    std::cout << '\n';
  }
  return 0;
}

struct EvalOptions {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t jobs = 0;
  bool trace = false;
};

int run_eval(const EvalOptions& o) {
  ExperimentConfig cfg = load_experiment_config(o.config);
  if (o.seed_set) cfg.seed = o.seed;
  if (o.jobs > 0) cfg.jobs = o.jobs;
  if (o.trace) cfg.save_traces = true;
  if (!o.out.empty()) cfg.output_dir = o.out;
  const EvalReport report = run_evaluation(cfg, [](const std::string& msg) { std::cerr << msg << '\n'; });
  if (report.counts.attacked == 0) std::cerr << "warning: no images were attacked; rates are null\n";
  std::cout << summary_json(report).dump(2) << '\n';
  return 0;
}

struct ReportOptions {
  std::string csv;
  std::string out;
};

int run_report(const ReportOptions& o) {
  std::ifstream is(o.csv, std::ios::binary);
  if (!is) throw ConfigError("cannot read '" + o.csv + "'");
  std::stringstream buf;
  buf << is.rdbuf();
  const EvalReport report = report_from_csv(buf.str());
  const json summary = summary_json(report);
  if (!o.out.empty()) write_json(o.out, summary);
  std::cout << summary.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EdgeFool: detail-enhancement adversarial images, baselines and feature-squeezing evaluation"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  GenDataOptions gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Render the synthetic textured-shapes dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory (class-per-directory tree)")->required();
  gen_cmd->add_option("--per-class", gen.per_class, "Images per class")->capture_default_str();
  gen_cmd->add_option("--classes", gen.classes, "Number of classes (2-10)")->capture_default_str();
  gen_cmd->add_option("--size", gen.size, "Image side length")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Random seed")->capture_default_str();

  TrainOptions train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a classifier on a class-per-directory dataset");
  train_cmd->add_option("--data", train.data, "Training set")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--test", train.test, "Test set for the reported accuracy")->check(CLI::ExistingDirectory);
  train_cmd->add_option("--arch", train.arch, "Architecture")
      ->capture_default_str()
      ->check(CLI::IsMember(known_architectures()));
  train_cmd->add_option("--out", train.out, "Output weights file")->required();
  train_cmd->add_option("--epochs", train.cfg.epochs, "Epochs")->capture_default_str();
  train_cmd->add_option("--batch", train.cfg.batch_size, "Minibatch size")->capture_default_str();
  train_cmd->add_option("--lr", train.cfg.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--seed", train.cfg.seed, "Random seed")->capture_default_str();

  SmoothOptions smooth;
  CLI::App* smooth_cmd = app.add_subcommand("smooth", "Apply L0 gradient-minimization smoothing to images");
  smooth_cmd->add_option("inputs", smooth.inputs, "Image files or directories")->required();
  smooth_cmd->add_option("--out", smooth.out, "Output directory")->required();
  smooth_cmd->add_option("--lambda", smooth.l0.lambda, "Gradient-count weight")->capture_default_str();
  smooth_cmd->add_option("--kappa", smooth.l0.kappa, "Beta growth factor")->capture_default_str();
  smooth_cmd->add_option("--beta-max", smooth.l0.beta_max, "Final beta")->capture_default_str();

  AttackOptionsCli attack;
  CLI::App* attack_cmd = app.add_subcommand("attack", "Generate adversarial images for files or a directory");
  attack_cmd->add_option("inputs", attack.inputs, "Image files or directories")->required();
  attack_cmd->add_option("--model", attack.model, "Target classifier weights")->required()->check(CLI::ExistingFile);
  attack_cmd->add_option("--out", attack.out, "Output directory")->required();
  attack_cmd->add_option("--config", attack.config, "Attack settings (JSON)")->check(CLI::ExistingFile);
  attack_cmd->add_option("--seed", attack.seed, "Master seed")->capture_default_str();
  attack_cmd->add_option("--jobs", attack.jobs, "Parallel images")->capture_default_str()->check(CLI::PositiveNumber);
  attack_cmd->add_option("--max-iters", attack.max_iters, "Override the iteration cap");
  attack_cmd->add_flag("--trace", attack.trace, "Write per-iteration loss CSV next to each image");
  attack_cmd->add_flag("--fgsm", attack.fgsm, "Run the FGSM baseline instead");
  attack_cmd->add_flag("--save-fcnn", attack.save_fcnn, "Save each trained FCNN snapshot");

  DetectOptions detect_opts;
  CLI::App* detect_cmd = app.add_subcommand("detect", "Feature-squeezing detector");
  detect_cmd->require_subcommand(1);
  CLI::App* cal_cmd = detect_cmd->add_subcommand("calibrate", "Fix thresholds on clean images");
  cal_cmd->add_option("--model", detect_opts.model, "Classifier weights")->required()->check(CLI::ExistingFile);
  cal_cmd->add_option("--clean", detect_opts.clean, "Clean image tree")->required()->check(CLI::ExistingDirectory);
  cal_cmd->add_option("--out", detect_opts.out, "Calibration JSON")->required();
  cal_cmd->add_option("--squeezers", detect_opts.squeezers, "e.g. bits4 bits5 median2");
  cal_cmd->add_option("--fpr", detect_opts.fpr, "Target false-positive rate")->capture_default_str();
  cal_cmd->add_flag("--joint", detect_opts.joint, "Also calibrate the max-over-squeezers detector");
  CLI::App* score_cmd = detect_cmd->add_subcommand("score", "Score and flag images");
  score_cmd->add_option("inputs", detect_opts.inputs, "Image files or directories")->required();
  score_cmd->add_option("--model", detect_opts.model, "Classifier weights")->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--calibration", detect_opts.calibration, "Calibration JSON")
      ->required()
      ->check(CLI::ExistingFile);

  EvalOptions eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Run the full evaluation described by a config file");
  eval_cmd->add_option("--config", eval.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", eval.out, "Override the output directory");
  eval_cmd->add_option("--seed", eval.seed, "Override the master seed");
  eval_cmd->add_option("--jobs", eval.jobs, "Override the number of parallel images")->check(CLI::PositiveNumber);
  eval_cmd->add_flag("--trace", eval.trace, "Write per-image loss traces");

  ReportOptions report;
  CLI::App* report_cmd = app.add_subcommand("report", "Recompute summary metrics from a per-image CSV");
  report_cmd->add_option("csv", report.csv, "images.csv written by eval")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--out", report.out, "Write the summary JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  eval.seed_set = eval_cmd->count("--seed") > 0;

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(train);
    if (*smooth_cmd) return run_smooth(smooth);
    if (*attack_cmd) return run_attack(attack);
    if (*cal_cmd) return run_detect_calibrate(detect_opts);
    if (*score_cmd) return run_detect_score(detect_opts);
    if (*eval_cmd) return run_eval(eval);
    if (*report_cmd) return run_report(report);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
