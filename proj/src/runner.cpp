#include "rmf/runner.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "rmf/error.hpp"
#include "rmf/rng.hpp"

#ifndef RMF_VERSION
#define RMF_VERSION "0.0.0"
#endif

namespace rmf {

using nlohmann::json;

std::string_view engine_version() { return RMF_VERSION; }

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::divergence: return 4;
    case ErrorKind::report_write: return 5;
  }
  return 1;
}

// Sub-stream tags for the run seed.
namespace stream {
constexpr std::uint64_t data = 0x44415441;
constexpr std::uint64_t init = 0x494e4954;
constexpr std::uint64_t train = 0x5452414e;
constexpr std::uint64_t attack = 0x41545443;
constexpr std::uint64_t split = 0x53504c54;
}  // namespace stream

// ---------------------------------------------------------------------------
// Strict config parsing

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("config key '{}' must be an object", display()));
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  std::uint64_t uint(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ConfigError(fmt::format("config key '{}' must be a non-negative integer", key_path(key)));
    }
    return v.get<std::uint64_t>();
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_number()) throw ConfigError(fmt::format("config key '{}' must be a number", key_path(key)));
    return v.get<double>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(fmt::format("config key '{}' must be true or false", key_path(key)));
    return v.get<bool>();
  }

  std::string string(const std::string& key, std::string fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_string()) throw ConfigError(fmt::format("config key '{}' must be a string", key_path(key)));
    return v.get<std::string>();
  }

  Section child(const std::string& key) { return Section(raw(key), key_path(key)); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(fmt::format("unknown config key '{}'", key_path(key)));
    }
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

ImageShape parse_shape(Section& s, const std::string& key, ImageShape fallback) {
  if (!s.has(key)) return fallback;
  const auto& v = s.raw(key);
  if (!v.is_array() || v.size() != 3 || !std::all_of(v.begin(), v.end(), [](const json& x) {
        return x.is_number_unsigned() && x.get<std::uint64_t>() > 0;
      })) {
    throw ConfigError(fmt::format("config key '{}' must be [height, width, channels]", s.key_path(key)));
  }
  return {v[0].get<std::size_t>(), v[1].get<std::size_t>(), v[2].get<std::size_t>()};
}

template <typename Enum, std::size_t N>
Enum parse_enum(Section& s, const std::string& key, Enum fallback, const std::array<Enum, N>& options) {
  if (!s.has(key)) return fallback;
  const auto text = s.string(key, "");
  for (auto o : options) {
    if (to_string(o) == text) return o;
  }
  throw ConfigError(fmt::format("config key '{}' has unknown value '{}'", s.key_path(key), text));
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

json shape_json(ImageShape s) { return json::array({s.height, s.width, s.channels}); }

}  // namespace

RunConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  Section root(j, "");
  cfg.seed = root.uint("seed", 0);

  std::optional<std::uint64_t> data_seed;
  if (root.has("dataset")) {
    auto ds = root.child("dataset");
    if (ds.has("synthetic") == ds.has("manifest")) {
      throw ConfigError("config key 'dataset' needs exactly one of 'synthetic' or 'manifest'");
    }
    if (ds.has("synthetic")) {
      auto sy = ds.child("synthetic");
      SyntheticSpec spec;
      spec.class_count = sy.uint("class_count", spec.class_count);
      spec.per_class_train = sy.uint("per_class_train", spec.per_class_train);
      spec.per_class_test = sy.uint("per_class_test", spec.per_class_test);
      spec.image_size = parse_shape(sy, "image_size", spec.image_size);
      spec.noise_std = sy.number("noise_std", spec.noise_std);
      if (sy.has("seed")) data_seed = sy.uint("seed", 0);
      sy.finish();
      cfg.synthetic = spec;
      cfg.manifest.reset();
    } else {
      auto mf = ds.child("manifest");
      ManifestSource src;
      if (!mf.has("train")) throw ConfigError("config key 'dataset.manifest.train' is required");
      src.train = resolve(mf.string("train", ""), base_dir);
      if (mf.has("test")) src.test = resolve(mf.string("test", ""), base_dir);
      src.test_fraction = mf.number("test_fraction", src.test_fraction);
      src.image_size = parse_shape(mf, "image_size", src.image_size);
      mf.finish();
      cfg.manifest = src;
      cfg.synthetic.reset();
    }
    ds.finish();
  }
  if (cfg.synthetic) cfg.synthetic->seed = data_seed.value_or(derive_seed(cfg.seed, stream::data));

  cfg.num_classes = cfg.synthetic ? cfg.synthetic->class_count : cfg.num_classes;
  if (root.has("model")) {
    auto m = root.child("model");
    cfg.num_classes = m.uint("num_classes", cfg.num_classes);
    cfg.train.epochs = m.uint("epochs", cfg.train.epochs);
    cfg.train.batch_size = m.uint("batch_size", cfg.train.batch_size);
    cfg.train.learning_rate = m.number("learning_rate", cfg.train.learning_rate);
    m.finish();
  }

  if (root.has("attack")) {
    auto a = root.child("attack");
    AttackSpec& spec = cfg.attack;
    spec.kind = parse_enum(a, "kind", spec.kind,
                           std::array{AttackKind::pattern_backdoor, AttackKind::clean_label_backdoor, AttackKind::label_flip});
    spec.poison_fraction = a.number("poison_fraction", spec.poison_fraction);
    spec.specificity = parse_enum(a, "specificity", spec.specificity,
                                  std::array{Specificity::targeted, Specificity::untargeted});
    if (spec.specificity == Specificity::untargeted) spec.target_label.reset();
    if (a.has("target_label")) {
      const auto& v = a.raw("target_label");
      if (v.is_null()) {
        spec.target_label.reset();
      } else if (v.is_number_integer()) {
        spec.target_label = v.get<int>();
      } else {
        throw ConfigError("config key 'attack.target_label' must be an integer or null");
      }
    }
    if (spec.kind == AttackKind::label_flip) spec.trigger.reset();
    if (a.has("trigger")) {
      if (a.raw("trigger").is_null()) {
        spec.trigger.reset();
      } else {
        auto t = a.child("trigger");
        TriggerPattern tp;
        tp.kind = parse_enum(t, "kind", tp.kind, std::array{TriggerKind::corner_square, TriggerKind::checkerboard});
        tp.size = t.uint("size", tp.size);
        tp.intensity = t.number("intensity", tp.intensity);
        tp.position = parse_enum(t, "position", tp.position,
                                 std::array{TriggerPosition::bottom_right, TriggerPosition::top_left});
        t.finish();
        spec.trigger = tp;
      }
    }
    if (a.has("clean_label")) {
      auto c = a.child("clean_label");
      spec.clean_label.epsilon = c.number("epsilon", spec.clean_label.epsilon);
      spec.clean_label.pgd_steps = c.uint("pgd_steps", spec.clean_label.pgd_steps);
      spec.clean_label.pgd_step_size = c.number("pgd_step_size", spec.clean_label.pgd_step_size);
      spec.clean_label.proxy_epochs = c.uint("proxy_epochs", spec.clean_label.proxy_epochs);
      c.finish();
    }
    if (a.has("steps")) {
      const auto& list = a.raw("steps");
      if (!list.is_array()) throw ConfigError("config key 'attack.steps' must be a list");
      std::vector<AttackStep> steps;
      for (std::size_t i = 0; i < list.size(); ++i) {
        Section st(list[i], fmt::format("attack.steps[{}]", i));
        AttackStep step;
        step.name = st.string("name", "");
        step.phase = parse_enum(st, "phase", StepPhase::knowledge,
                                std::array{StepPhase::knowledge, StepPhase::goal, StepPhase::specificity});
        if (!st.has("phase")) throw ConfigError(fmt::format("config key 'attack.steps[{}].phase' is required", i));
        st.finish();
        steps.push_back(std::move(step));
      }
      spec.steps = StepCatalog::from_steps(steps);
    } else {
      spec.steps = default_step_catalog(spec.kind);
    }
    a.finish();
  }

  if (root.has("criteria")) {
    auto c = root.child("criteria");
    cfg.criteria.critical_threshold = c.number("critical_threshold", cfg.criteria.critical_threshold);
    cfg.criteria.major_threshold = c.number("major_threshold", cfg.criteria.major_threshold);
    if (c.has("effort_adjustment") && !c.raw("effort_adjustment").is_null()) {
      throw ConfigError("config key 'criteria.effort_adjustment' is reserved and must be null");
    }
    c.finish();
  }

  cfg.probe_interval_ms = static_cast<unsigned>(root.uint("probe_interval_ms", cfg.probe_interval_ms));
  cfg.output_dir = root.string("output_dir", cfg.output_dir.string());
  cfg.write_csv = root.boolean("write_csv", cfg.write_csv);
  root.finish();

  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  if (synthetic.has_value() == manifest.has_value()) throw ConfigError("exactly one dataset source is required");
  if (manifest && !(manifest->test_fraction > 0.0 && manifest->test_fraction < 1.0)) {
    throw ConfigError("config key 'dataset.manifest.test_fraction' must lie in (0,1)");
  }
  if (num_classes < 2) throw ConfigError("model.num_classes must be at least 2");
  if (synthetic && synthetic->class_count != num_classes) {
    throw ConfigError(fmt::format("model.num_classes {} differs from the synthetic class_count {}", num_classes,
                                  synthetic->class_count));
  }
  if (attack.target_label && (*attack.target_label < 0 || static_cast<std::size_t>(*attack.target_label) >= num_classes)) {
    throw ConfigError(fmt::format("attack.target_label {} out of range [0,{})", *attack.target_label, num_classes));
  }
  if (probe_interval_ms < 10) throw ConfigError("probe_interval_ms must be at least 10");
  // Sub-spec checks report std::invalid_argument; here they are config errors.
  try {
    if (synthetic) synthetic->validate();
    train.validate();
    attack.validate();
    if (attack.trigger) attack.trigger->check_fits(synthetic ? synthetic->image_size : manifest->image_size);
    criteria.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

json read_config_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config file {}", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config file {} is not valid JSON: {}", path.string(), e.what()));
  }
  return j;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_config_json(path), path.parent_path()); }

json config_to_json(const RunConfig& cfg) {
  json dataset;
  if (cfg.synthetic) {
    const auto& s = *cfg.synthetic;
    dataset["synthetic"] = {{"class_count", s.class_count},   {"per_class_train", s.per_class_train},
                            {"per_class_test", s.per_class_test}, {"image_size", shape_json(s.image_size)},
                            {"noise_std", s.noise_std},       {"seed", s.seed}};
  } else {
    const auto& m = *cfg.manifest;
    dataset["manifest"] = {{"train", m.train.string()},
                           {"test_fraction", m.test_fraction},
                           {"image_size", shape_json(m.image_size)}};
    if (m.test) dataset["manifest"]["test"] = m.test->string();
  }
  const auto& a = cfg.attack;
  json steps = json::array();
  for (const auto& s : a.steps.steps()) steps.push_back({{"name", s.name}, {"phase", to_string(s.phase)}});
  json trigger = nullptr;
  if (a.trigger) {
    trigger = {{"kind", to_string(a.trigger->kind)},
               {"size", a.trigger->size},
               {"intensity", a.trigger->intensity},
               {"position", to_string(a.trigger->position)}};
  }
  return {
      {"seed", cfg.seed},
      {"dataset", dataset},
      {"model",
       {{"num_classes", cfg.num_classes},
        {"epochs", cfg.train.epochs},
        {"batch_size", cfg.train.batch_size},
        {"learning_rate", cfg.train.learning_rate}}},
      {"attack",
       {{"kind", to_string(a.kind)},
        {"poison_fraction", a.poison_fraction},
        {"target_label", a.target_label ? json(*a.target_label) : json(nullptr)},
        {"specificity", to_string(a.specificity)},
        {"trigger", trigger},
        {"clean_label",
         {{"epsilon", a.clean_label.epsilon},
          {"pgd_steps", a.clean_label.pgd_steps},
          {"pgd_step_size", a.clean_label.pgd_step_size},
          {"proxy_epochs", a.clean_label.proxy_epochs}}},
        {"steps", steps}}},
      {"criteria",
       {{"critical_threshold", cfg.criteria.critical_threshold},
        {"major_threshold", cfg.criteria.major_threshold},
        {"effort_adjustment", nullptr}}},
      {"probe_interval_ms", cfg.probe_interval_ms},
      {"output_dir", cfg.output_dir.string()},
      {"write_csv", cfg.write_csv},
  };
}

// ---------------------------------------------------------------------------
// Measurement

namespace {

TrainTestSplit load_data(const RunConfig& cfg) {
  if (cfg.synthetic) return generate_synthetic(*cfg.synthetic);
  const auto& m = *cfg.manifest;
  const ManifestOptions opts{m.image_size, cfg.num_classes};
  auto train = load_directory(m.train, opts);
  if (m.test) return {std::move(train), load_directory(*m.test, opts)};
  return split_stratified(train, m.test_fraction, derive_seed(cfg.seed, stream::split));
}

Model baseline_model(const RunConfig& cfg, const LabeledDataset& train_set, const TrainConfig& train_cfg,
                     std::uint64_t init_seed, const std::optional<std::filesystem::path>& cache) {
  const Model fresh = build_model(cfg.num_classes, train_set.image_shape(), init_seed);
  if (cache && std::filesystem::exists(*cache)) {
    Model cached = load_checkpoint(*cache);
    if (cached.layers() != fresh.layers() || cached.input_shape() != fresh.input_shape() ||
        cached.seed() != fresh.seed()) {
      throw DataError(fmt::format("baseline cache {} was built for a different model or seed", cache->string()));
    }
    spdlog::info("reusing cached baseline model {}", cache->string());
    return cached;
  }
  spdlog::info("training clean baseline ({} samples, {} epochs)", train_set.size(), train_cfg.epochs);
  Model trained = train(fresh, train_set, train_cfg).model;
  if (cache) save_checkpoint(trained, *cache);
  return trained;
}

struct AttackedRun {
  std::uint64_t poisoned = 0;
  Evaluation evaluation;
};

}  // namespace

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << text) || !out.flush()) {
    throw ReportWriteError(fmt::format("cannot write {}", path.string()));
  }
}

RiskReport run_measurement(const RunConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const auto data = load_data(cfg);
  data.train.validate();
  data.test.validate();
  if (data.train.image_shape() != data.test.image_shape()) throw DataError("train and test image shapes differ");

  TrainConfig train_cfg = cfg.train;
  train_cfg.seed = derive_seed(cfg.seed, stream::train);
  const std::uint64_t init_seed = derive_seed(cfg.seed, stream::init);

  LabeledDataset triggered = data.test;
  if (cfg.attack.trigger && cfg.attack.kind != AttackKind::label_flip) {
    triggered.images = apply_trigger(data.test.images, *cfg.attack.trigger);
  }

  const Model baseline = baseline_model(cfg, data.train, train_cfg, init_seed, opts.baseline_cache);
  const Evaluation baseline_eval = evaluate_model(baseline, data.test, triggered);

  spdlog::info("running {} attack, poison fraction {}", to_string(cfg.attack.kind), cfg.attack.poison_fraction);
  auto attacked = probe_run(
      [&] {
        const auto poisoned = run_attack(data.train, cfg.attack, derive_seed(cfg.seed, stream::attack));
        const auto model = train(build_model(cfg.num_classes, poisoned.image_shape(), init_seed), poisoned, train_cfg).model;
        return AttackedRun{poisoned.poisoned_count(), evaluate_model(model, data.test, triggered)};
      },
      cfg.probe_interval_ms);

  const auto effort = map_telemetry_to_effort(attacked.measurement.resources, attacked.measurement.elapsed_s,
                                              cfg.attack.steps);
  BaseMeasures base;
  base.clean_metrics = baseline_eval.clean;
  base.attacked_metrics = attacked.value.evaluation.attacked;
  base.attack_time_s = effort.attack_time_s;
  base.resources = effort.resources;
  base.steps = effort.steps;

  Provenance provenance;
  provenance.engine_version = std::string(engine_version());
  provenance.seed = cfg.seed;
  provenance.config = config_to_json(cfg);

  RiskReport report = build_report(base, cfg.criteria, extent_of_damage(baseline_eval.clean), std::move(provenance),
                                   summarize_attack(cfg.attack, attacked.value.poisoned), effort.notes);
  report.attacked_model_clean_metrics = attacked.value.evaluation.clean;
  report.provenance.determinism_hash = determinism_hash(report);
  spdlog::info("extent of damage {:.4f}, class {}", report.derived.extent_of_damage, to_string(report.indicator));

  if (opts.write_outputs) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    if (ec) throw ReportWriteError(fmt::format("cannot create output directory {}: {}", cfg.output_dir.string(), ec.message()));
    write_text(cfg.output_dir / "report.json", to_json(report).dump(2) + "\n");
    write_text(cfg.output_dir / "report.txt", print_report(report));
    if (cfg.write_csv) write_text(cfg.output_dir / "report.csv", csv_header() + "\n" + csv_row(report) + "\n");
  }
  return report;
}

std::vector<SweepRow> sweep(const RunConfig& cfg, const std::vector<double>& fractions) {
  if (fractions.empty()) throw ConfigError("sweep needs at least one poison fraction");
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError(fmt::format("sweep fraction {} outside [0,1]", f));
  }
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    SweepRow row;
    row.fraction = fractions[i];
    row.seed = cfg.seed + i;
    row.attack = std::string(to_string(cfg.attack.kind));
    RunConfig rc = cfg;
    rc.seed = row.seed;
    rc.attack.poison_fraction = row.fraction;
    RunOptions opts;
    opts.write_outputs = false;
    try {
      row.report = run_measurement(rc, opts);
    } catch (const Error& e) {
      spdlog::warn("sweep row {} (fraction {}) failed: {}", i, row.fraction, e.what());
      row.error = e.what();
      row.error_kind = e.kind();
    } catch (const std::exception& e) {
      spdlog::warn("sweep row {} (fraction {}) failed: {}", i, row.fraction, e.what());
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = csv_header() + ",seed,error\n";
  for (const auto& row : rows) {
    std::string error = row.error;
    std::replace(error.begin(), error.end(), ',', ';');
    std::replace(error.begin(), error.end(), '\n', ' ');
    if (row.report) {
      out += fmt::format("{},{},\n", csv_row(*row.report), row.seed);
    } else {
      out += fmt::format("{},{},,,,,,error,{},{}\n", row.attack, row.fraction, row.seed, error);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text rendering

std::string print_report(const RiskReport& r) {
  std::string out;
  auto line = [&out](std::string_view text) {
    out += text;
    out += '\n';
  };
  auto metrics = [](const std::optional<MetricsBundle>& m) {
    if (!m) return std::string("unavailable");
    return fmt::format("accuracy={:.4f} avg_precision={:.4f} avg_recall={:.4f} f1={:.4f}", m->accuracy,
                       m->avg_precision, m->avg_recall, m->f1);
  };

  line(fmt::format("rmf risk report (schema {})", r.schema_version));
  line(fmt::format("attack: {} fraction={} target={} specificity={} poisoned={}", r.attack.kind, r.attack.poison_fraction,
                   r.attack.target_label ? std::to_string(*r.attack.target_label) : std::string("none"),
                   r.attack.specificity, r.attack.poisoned_samples));
  line(fmt::format("trigger: {}", r.attack.trigger.value_or("none")));
  line(fmt::format("clean: {}", metrics(r.base.clean_metrics)));
  line(fmt::format("attacked: {}", metrics(r.base.attacked_metrics)));
  if (r.attacked_model_clean_metrics) line(fmt::format("attacked_model_clean: {}", metrics(r.attacked_model_clean_metrics)));
  const auto steps = r.base.steps.value_or(StepLedgerTotals{});
  line(fmt::format("steps: {} (knowledge {}, goal {}, specificity {})", r.derived.total_steps, steps.knowledge,
                   steps.goal, steps.specificity));
  line(fmt::format("time_s: {:.3f}", r.derived.attack_time_s));
  const auto& res = r.derived.resources;
  line(res ? fmt::format("cpu_mean_percent: {:.2f}", res->cpu_percent_mean) : "cpu_mean_percent: unavailable");
  line(res ? fmt::format("rss_peak_mb: {:.2f}", res->rss_mb_peak) : "rss_peak_mb: unavailable");
  line(res && res->gpu_mb_peak ? fmt::format("gpu_peak_mb: {:.2f}", *res->gpu_mb_peak) : "gpu: unavailable");
  line(fmt::format("extent_of_damage: {:.4f} (normalized {:.4f})", r.derived.extent_of_damage, r.derived.damage_normalized));
  line(r.baseline_damage ? fmt::format("baseline_damage: {:.4f}", *r.baseline_damage) : "baseline_damage: unavailable");
  line(r.damage_delta ? fmt::format("damage_delta: {:.4f}", *r.damage_delta) : "damage_delta: unavailable");
  line(fmt::format("class: {}", to_string(r.indicator)));
  for (const auto& n : r.notes) line(fmt::format("note: {}", n));
  return out;
}

}  // namespace rmf
