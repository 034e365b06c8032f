#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "rmf/error.hpp"
#include "rmf/runner.hpp"

using namespace rmf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

json tiny_config() {
  return json::parse(R"({
    "seed": 5,
    "dataset": {"synthetic": {"class_count": 3, "per_class_train": 6, "per_class_test": 3, "image_size": [10, 10, 3]}},
    "model": {"num_classes": 3, "epochs": 2, "batch_size": 6},
    "attack": {"poison_fraction": 0.5, "trigger": {"size": 2}},
    "probe_interval_ms": 20
  })");
}

void check_config_error(const json& j, const std::string& fragment) {
  INFO(j.dump());
  CHECK_THROWS_WITH_AS(parse_config(j), doctest::Contains(fragment.c_str()), ConfigError);
}

}  // namespace

TEST_CASE("empty config gives the documented defaults") {
  const auto cfg = parse_config(json::object());
  REQUIRE(cfg.synthetic.has_value());
  CHECK(cfg.synthetic->class_count == 10);
  CHECK(cfg.synthetic->per_class_train == 60);
  CHECK(cfg.synthetic->per_class_test == 20);
  CHECK(cfg.num_classes == 10);
  CHECK(cfg.train.epochs == 10);
  CHECK(cfg.train.batch_size == 32);
  CHECK(cfg.train.learning_rate == 0.05);
  CHECK(cfg.attack.kind == AttackKind::pattern_backdoor);
  CHECK(cfg.attack.poison_fraction == 0.5);
  CHECK(cfg.attack.target_label == 0);
  CHECK(cfg.attack.steps == default_step_catalog(AttackKind::pattern_backdoor));
  CHECK(cfg.criteria == DecisionCriteria{});
  CHECK(cfg.probe_interval_ms == 100);
}

TEST_CASE("the shipped default config parses to the defaults") {
  const auto shipped = load_config(fs::path(RMF_TEST_DATA_DIR) / ".." / "configs" / "default.json");
  auto defaults = parse_config(json::object());
  CHECK(config_to_json(shipped) == config_to_json(defaults));
}

TEST_CASE("strict parsing names the offending key") {
  check_config_error({{"sede", 1}}, "unknown config key 'sede'");
  check_config_error({{"model", {{"epoch", 3}}}}, "unknown config key 'model.epoch'");
  check_config_error({{"attack", {{"trigger", {{"colour", "red"}}}}}}, "unknown config key 'attack.trigger.colour'");
  check_config_error({{"dataset", {{"synthetic", {{"classes", 3}}}}}}, "unknown config key 'dataset.synthetic.classes'");
  check_config_error({{"model", {{"epochs", "ten"}}}}, "model.epochs");
  check_config_error({{"model", {{"epochs", -1}}}}, "model.epochs");
  check_config_error({{"attack", {{"kind", "rowhammer"}}}}, "attack.kind");
  check_config_error({{"attack", {{"poison_fraction", 1.5}}}}, "poison_fraction");
  check_config_error({{"attack", {{"target_label", 10}}}}, "target_label");
  check_config_error({{"attack", {{"trigger", {{"size", 15}}}}}}, "trigger larger than image");
  check_config_error({{"criteria", {{"critical_threshold", 0.2}}}}, "criteria");
  check_config_error({{"criteria", {{"effort_adjustment", "low"}}}}, "effort_adjustment");
  check_config_error({{"probe_interval_ms", 1}}, "probe_interval_ms");
  check_config_error({{"dataset", json::object()}}, "dataset");
  check_config_error({{"attack", {{"steps", {{{"name", "x"}}}}}}}, "attack.steps[0].phase");
  check_config_error(json::array(), "");
}

TEST_CASE("config values and round trip through config_to_json") {
  auto j = tiny_config();
  j["attack"]["kind"] = "label_flip";
  j["attack"]["specificity"] = "untargeted";
  j["attack"]["trigger"] = nullptr;
  j["attack"]["steps"] = {{{"name", "read docs"}, {"phase", "knowledge"}}, {{"name", "flip"}, {"phase", "goal"}}};
  j["criteria"] = {{"critical_threshold", 0.7}, {"major_threshold", 0.2}};
  j["write_csv"] = true;
  const auto cfg = parse_config(j);
  CHECK(cfg.attack.kind == AttackKind::label_flip);
  CHECK_FALSE(cfg.attack.target_label.has_value());
  CHECK_FALSE(cfg.attack.trigger.has_value());
  CHECK(cfg.attack.steps.knowledge == std::vector<std::string>{"read docs"});
  CHECK(cfg.criteria.critical_threshold == 0.7);
  CHECK(cfg.write_csv);
  const auto again = parse_config(config_to_json(cfg));
  CHECK(config_to_json(again) == config_to_json(cfg));
}

TEST_CASE("the synthetic data seed follows the run seed unless given") {
  auto j = tiny_config();
  const auto a = parse_config(j);
  j["seed"] = 6;
  const auto b = parse_config(j);
  CHECK(a.synthetic->seed != b.synthetic->seed);
  j["dataset"]["synthetic"]["seed"] = 99;
  CHECK(parse_config(j).synthetic->seed == 99);
}

TEST_CASE("manifest paths resolve against the config directory") {
  const json j = {{"dataset", {{"manifest", {{"train", "train.csv"}, {"test", "/abs/test.csv"}}}}},
                  {"model", {{"num_classes", 43}}}};
  const auto cfg = parse_config(j, "/data/cfg");
  REQUIRE(cfg.manifest.has_value());
  CHECK(cfg.manifest->train == fs::path("/data/cfg/train.csv"));
  CHECK(cfg.manifest->test == fs::path("/abs/test.csv"));
  CHECK_FALSE(cfg.synthetic.has_value());
}

TEST_CASE("exit codes per error class") {
  CHECK(exit_code(ErrorKind::config) == 2);
  CHECK(exit_code(ErrorKind::data) == 3);
  CHECK(exit_code(ErrorKind::divergence) == 4);
  CHECK(exit_code(ErrorKind::report_write) == 5);
}

TEST_CASE("print_report matches the golden rendering") {
  const auto r = case_study_report();
  const auto text = print_report(r);
  CHECK(text == read_file(fs::path(RMF_TEST_DATA_DIR) / "golden" / "case_study_report.txt"));
  CHECK(text.find("steps: 21") != std::string::npos);
  CHECK(text.find("class: Critical") != std::string::npos);
  CHECK(text.find("gpu: unavailable\n") != std::string::npos);
  CHECK(print_report(r) == text);
}

TEST_CASE("print_report without resources") {
  auto r = case_study_report();
  r.base.resources.reset();
  r.derived.resources.reset();
  const auto text = print_report(r);
  CHECK(text.find("gpu: unavailable\n") != std::string::npos);
  CHECK(text.find("rss_peak_mb: unavailable") != std::string::npos);
}

TEST_CASE("tiny measurement end to end") {
  const fs::path out = fs::temp_directory_path() / "rmf_test_measure";
  fs::remove_all(out);
  auto j = tiny_config();
  j["output_dir"] = out.string();
  j["write_csv"] = true;
  const auto cfg = parse_config(j);
  const auto r = run_measurement(cfg);
  CHECK(r.attack.kind == "pattern_backdoor");
  CHECK(r.attack.poisoned_samples == 9);
  CHECK(r.derived.total_steps == 9);
  CHECK(r.base.attack_time_s.value() > 0.0);
  CHECK(r.base.resources.has_value());
  CHECK(r.baseline_damage.has_value());
  CHECK(r.attacked_model_clean_metrics.has_value());
  CHECK(report_from_json(json::parse(read_file(out / "report.json"))) == r);
  CHECK(read_file(out / "report.txt") == print_report(r));
  CHECK(read_file(out / "report.csv") == csv_header() + "\n" + csv_row(r) + "\n");

  // Same config and seed: identical after masking.
  const auto again = run_measurement(cfg, RunOptions{false, std::nullopt});
  CHECK(masked_json(again) == masked_json(r));
  CHECK(again.provenance.determinism_hash == r.provenance.determinism_hash);

  // A cached baseline reproduces the fresh one.
  const fs::path cache = out / "baseline.ckpt";
  const auto first = run_measurement(cfg, RunOptions{false, cache});
  CHECK(fs::exists(cache));
  const auto cached = run_measurement(cfg, RunOptions{false, cache});
  CHECK(masked_json(cached) == masked_json(first));
  CHECK(masked_json(cached) == masked_json(r));
  fs::remove_all(out);
}

TEST_CASE("sweep rows") {
  auto j = tiny_config();
  j["attack"]["poison_fraction"] = 0.0;
  const auto cfg = parse_config(j);
  CHECK_THROWS_AS(sweep(cfg, {}), ConfigError);
  CHECK_THROWS_AS(sweep(cfg, {0.5, 1.5}), ConfigError);

  const auto rows = sweep(cfg, {0.0});
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].report.has_value());
  CHECK(rows[0].seed == cfg.seed);
  const auto single = run_measurement(cfg, RunOptions{false, std::nullopt});
  CHECK(masked_json(*rows[0].report) == masked_json(single));

  const auto csv = sweep_csv(rows);
  CHECK(csv.rfind(csv_header() + ",seed,error\n", 0) == 0);
}

TEST_CASE("sweep records failing rows and continues") {
  auto j = tiny_config();
  j["attack"]["kind"] = "clean_label_backdoor";
  j["attack"]["clean_label"] = {{"pgd_steps", 0}};
  j["dataset"]["synthetic"]["per_class_train"] = 1;  // a 0.5 share of one target image is empty
  j["model"]["batch_size"] = 3;
  const auto cfg = parse_config(j);
  const auto rows = sweep(cfg, {0.5, 1.0});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].report.has_value());
  CHECK(rows[1].report.has_value());
  CHECK(rows[0].report->attack.poisoned_samples == 0);
  CHECK(rows[1].report->attack.poisoned_samples == 1);

  // Diverging rows are recorded and the sweep still returns every row.
  auto bad = cfg;
  bad.train.learning_rate = 1e200;
  const auto failed = sweep(bad, {0.0, 0.5});
  REQUIRE(failed.size() == 2);
  for (const auto& row : failed) {
    CHECK_FALSE(row.report.has_value());
    CHECK(row.error_kind == ErrorKind::divergence);
  }
  const auto csv = sweep_csv(failed);
  CHECK(csv.find(",error,") != std::string::npos);
}

TEST_CASE("report write failures are classified") {
  auto j = tiny_config();
  j["output_dir"] = "/proc/rmf-cannot-write";
  CHECK_THROWS_AS(run_measurement(parse_config(j)), ReportWriteError);
}
