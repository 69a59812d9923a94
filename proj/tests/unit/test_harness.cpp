#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "edgefool/dataset.hpp"
#include "edgefool/error.hpp"
#include "edgefool/evaluation.hpp"
#include "edgefool/image_io.hpp"
#include "edgefool/synthetic.hpp"
#include "test_util.hpp"

using namespace edgefool;
using edgefool::testing::random_image;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  os << bytes;
}

// Ten classes of 12x12 synthetic shapes and an untrained target saved next to them.
struct Fixture {
  fs::path root;
  std::string model_path;
  std::string data_path;

  Fixture() {
    root = fresh_dir("edgefool_harness_eval");
    SyntheticConfig sc;
    sc.size = 12;
    sc.per_class = 10;
    sc.seed = 4;
    data_path = (root / "data").string();
    save_dataset(data_path, synthetic_class_names(), generate_synthetic(sc));
    model_path = (root / "target.dfw").string();
    save_model(model_path, make_classifier("cnn-b", 10, 12, 12, 6));
  }
  ~Fixture() { fs::remove_all(root); }

  ExperimentConfig config(const std::string& out) const {
    ExperimentConfig cfg;
    cfg.dataset = data_path;
    cfg.target_model = model_path;
    cfg.transfer_models = {model_path};
    cfg.attack.max_iters = 40;
    cfg.max_images = 3;
    cfg.output_dir = out.empty() ? "" : (root / out).string();
    cfg.squeezers = {Squeezer::parse("bits4"), Squeezer::parse("median2")};
    cfg.seed = 3;
    return cfg;
  }
};

}  // namespace

TEST_CASE("image files") {
  const fs::path dir = fresh_dir("edgefool_harness_io");
  const Image img = quantize8(random_image(5, 7, 1));
  for (const char* name : {"a.png", "b.ppm", "c.PNG"}) {
    const std::string p = (dir / name).string();
    write_image(p, img);
    CHECK(read_image(p) == img);
  }
  CHECK(is_image_path("x/y.Ppm"));
  CHECK_FALSE(is_image_path("x/y.jpg"));

  write_bytes(dir / "white.ppm", std::string("P6\n1 1\n255\n") + "\xff\xff\xff");
  const Image white = read_image((dir / "white.ppm").string());
  for (std::size_t i = 0; i < 3; ++i) CHECK(white[i] == 1.0);

  write_bytes(dir / "gray.ppm", std::string("P5\n2 1\n255\n") + "\x10\x20");
  CHECK_THROWS_AS(read_image((dir / "gray.ppm").string()), FormatError);
  write_bytes(dir / "deep.ppm", std::string("P6\n1 1\n65535\n") + std::string(6, '\0'));
  CHECK_THROWS_AS(read_image((dir / "deep.ppm").string()), FormatError);
  write_bytes(dir / "short.ppm", std::string("P6\n2 2\n255\n") + "abc");
  CHECK_THROWS_AS(read_image((dir / "short.ppm").string()), FormatError);
  write_bytes(dir / "junk.png", "not a png");
  CHECK_THROWS_AS(read_image((dir / "junk.png").string()), FormatError);
  CHECK_THROWS_AS(read_image((dir / "a.bmp").string()), FormatError);

  Image mid = make_image(1, 1, 0.5 / 255.0);
  CHECK(quantize8(mid)[0] == 1.0 / 255.0);
  fs::remove_all(dir);
}

TEST_CASE("dataset tree") {
  const fs::path dir = fresh_dir("edgefool_harness_data");
  std::vector<LabeledImage> items;
  for (int i = 0; i < 6; ++i) items.push_back({quantize8(random_image(4, 4, 10 + i)), i % 3});
  save_dataset(dir.string(), {"zebra", "apple", "mango"}, items);
  write_bytes(dir / "apple" / "notes.txt", "ignored");

  const Dataset ds = load_dataset(dir.string());
  CHECK(ds.class_names == std::vector<std::string>{"apple", "mango", "zebra"});
  REQUIRE(ds.items.size() == 6);
  // Saved class 1 ("apple") becomes label 0 after lexicographic ordering.
  CHECK(ds.items[0].label == 0);
  CHECK(ds.items[0].image == items[1].image);
  CHECK(ds.items[1].image == items[4].image);
  CHECK(ds.items[5].label == 2);
  CHECK(ds.items[5].image == items[3].image);
  CHECK(ds.labeled().size() == 6);

  fs::create_directories(dir / "empty");
  CHECK_THROWS_AS(load_dataset(dir.string()), Error);
  CHECK_THROWS_AS(load_dataset((dir / "missing").string()), Error);
  CHECK_THROWS_AS(save_dataset(dir.string(), {"one"}, items), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("experiment config") {
  nlohmann::json j = {{"dataset", "data"}, {"target_model", "m.dfw"}, {"attack", {{"alpha", 2.0}}}};
  const ExperimentConfig c = experiment_config_from_json(j, "/base");
  CHECK(c.dataset == "/base/data");
  CHECK(c.attack.alpha == 2.0);
  CHECK(c.attack.max_iters == AttackConfig{}.max_iters);
  CHECK(c.squeezers.size() == default_squeezers().size());

  const ExperimentConfig again = experiment_config_from_json(experiment_config_to_json(c));
  CHECK(experiment_config_to_json(again) == experiment_config_to_json(c));

  auto rejects = [&](nlohmann::json bad) { CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError); };
  nlohmann::json bad = j;
  bad["datset"] = "typo";
  rejects(bad);
  bad = j;
  bad["attack"]["learning_rat"] = 0.1;
  rejects(bad);
  bad = j;
  bad["fgsm"] = {{"eps", 0.1}};
  rejects(bad);
  bad = j;
  bad.erase("target_model");
  rejects(bad);
  bad = j;
  bad["jobs"] = 0;
  rejects(bad);
  bad = j;
  bad["schema_version"] = 99;
  rejects(bad);
  bad = j;
  bad["squeezers"] = {"blur"};
  rejects(bad);
  bad = j;
  bad["attack"]["alpha"] = "high";
  rejects(bad);

  CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.json"), ConfigError);
  CHECK_THROWS_AS(c.check_paths(), ConfigError);
}

TEST_CASE("summaries") {
  std::vector<ImageRow> rows(3);
  rows[0].status = RowStatus::Skipped;
  rows[1].status = RowStatus::Error;
  rows[2].status = RowStatus::Skipped;
  const RowCounts counts = count_rows(rows);
  CHECK(counts.total == 3);
  CHECK(counts.attacked + counts.skipped + counts.errors == counts.total);
  const MethodSummary none = summarize(rows, false, 1, 2);
  CHECK(none.attacked == 0);
  CHECK_FALSE(none.misleading_rate.has_value());
  CHECK_FALSE(none.success_rate.has_value());
  CHECK_FALSE(none.transferability[0].has_value());
  CHECK_FALSE(none.detectability[1].has_value());

  ImageRow a;
  a.status = RowStatus::Attacked;
  a.predicted = 2;
  a.transfer_clean_labels = {2};
  a.edgefool = {true, true, 10, 1e-4, -0.5, 3, 3, 0.01, {3}, {0.2}, {true}, std::nullopt};
  ImageRow b = a;
  b.edgefool = {true, false, 20, 1e-3, 0.5, 2, 2, 0.02, {2}, {0.1}, {false}, std::nullopt};
  const MethodSummary s = summarize({a, b}, false, 1, 1);
  CHECK(*s.misleading_rate == 0.5);
  CHECK(*s.success_rate == 0.5);
  CHECK(*s.mean_iterations == 15.0);
  CHECK(*s.transferability[0] == 0.5);
  CHECK(*s.detectability[0] == 1.0);
}

TEST_CASE("evaluation run") {
  const Fixture fx;
  ExperimentConfig cfg = fx.config("serial");
  const EvalReport serial = run_evaluation(cfg);

  CHECK(serial.counts.attacked + serial.counts.skipped + serial.counts.errors == serial.counts.total);
  CHECK(serial.counts.errors == 0);
  REQUIRE(serial.counts.attacked == 3);
  REQUIRE(serial.calibration.has_value());
  CHECK(serial.calibration->sample_size == 100);
  // The target is its own transfer model.
  CHECK(serial.edgefool.transferability[0] == serial.edgefool.misleading_rate);
  CHECK(serial.fgsm.transferability[0] == serial.fgsm.misleading_rate);

  const fs::path out = fx.root / "serial";
  CHECK(fs::exists(out / "report.json"));
  CHECK(fs::exists(out / "images.csv"));
  CHECK(fs::exists(out / "adversarial" / "000000_edgefool.png"));

  SUBCASE("worker count does not change the results") {
    cfg.jobs = 2;
    cfg.output_dir = (fx.root / "parallel").string();
    const EvalReport parallel = run_evaluation(cfg);
    CHECK(rows_to_csv(parallel) == rows_to_csv(serial));
    nlohmann::json a = serial.to_json(), b = parallel.to_json();
    a["config"].erase("jobs");
    a["config"].erase("output_dir");
    b["config"].erase("jobs");
    b["config"].erase("output_dir");
    CHECK(report_digest(a) == report_digest(b));
  }

  SUBCASE("per-image table roundtrip") {
    std::ifstream is(out / "images.csv");
    const std::string text{std::istreambuf_iterator<char>(is), {}};
    CHECK(text == rows_to_csv(serial));
    const EvalReport back = report_from_csv(text);
    CHECK(back.transfer_names == serial.transfer_names);
    CHECK(back.squeezer_names == serial.squeezer_names);
    CHECK(rows_to_csv(back) == text);
    CHECK(summary_json(back)["edgefool"] == summary_json(serial)["edgefool"]);
    CHECK_THROWS_AS(report_from_csv("index,file\n"), FormatError);
    CHECK_THROWS_AS(report_from_csv(text + "1,x\n"), FormatError);
  }

  SUBCASE("missing path") {
    cfg.transfer_models = {(fx.root / "absent.dfw").string()};
    CHECK_THROWS_AS(run_evaluation(cfg), ConfigError);
  }
}
