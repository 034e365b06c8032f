#include "rmf/pipeline.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "rmf/error.hpp"

namespace rmf {

std::string_view to_string(RiskClass c) {
  switch (c) {
    case RiskClass::Minor: return "Minor";
    case RiskClass::Major: return "Major";
    case RiskClass::Critical: return "Critical";
  }
  return "unknown";
}

std::optional<RiskClass> parse_risk_class(std::string_view text) {
  for (auto c : {RiskClass::Minor, RiskClass::Major, RiskClass::Critical}) {
    if (to_string(c) == text) return c;
  }
  return std::nullopt;
}

void DecisionCriteria::validate() const {
  if (!(major_threshold >= 0.0 && major_threshold < critical_threshold && critical_threshold <= 1.0)) {
    throw ConfigError(fmt::format("decision criteria need 0 <= major ({}) < critical ({}) <= 1",
                                  major_threshold, critical_threshold));
  }
  if (effort_adjustment) throw ConfigError("effort_adjustment is reserved and not supported in schema v1");
}

AttackSummary summarize_attack(const AttackSpec& spec, std::uint64_t poisoned_samples) {
  AttackSummary s;
  s.kind = std::string(to_string(spec.kind));
  s.poison_fraction = spec.poison_fraction;
  s.target_label = spec.target_label;
  s.specificity = std::string(to_string(spec.specificity));
  if (spec.trigger && spec.kind != AttackKind::label_flip) {
    const auto& t = *spec.trigger;
    s.trigger = fmt::format("{} {}x{} at {} intensity {}", to_string(t.kind), t.size, t.size,
                            to_string(t.position), t.intensity);
  }
  s.poisoned_samples = poisoned_samples;
  return s;
}

// ---------------------------------------------------------------------------
// Measurement functions

double invert_metric(double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(fmt::format("metric {} outside [0,1]", v));
  return 1.0 - v;
}

double extent_of_damage(const MetricsBundle& attacked) {
  return invert_metric(attacked.accuracy) + invert_metric(attacked.avg_precision) +
         invert_metric(attacked.avg_recall) + invert_metric(attacked.f1);
}

EffortMeasures map_telemetry_to_effort(const std::optional<ResourceSummary>& resources,
                                       std::optional<double> elapsed_s, const StepCatalog& catalog) {
  EffortMeasures e;
  e.steps = {catalog.knowledge.size(), catalog.goal.size(), catalog.specificity.size()};
  e.attack_time_s = elapsed_s;
  e.resources = resources;
  if (!elapsed_s) e.notes.emplace_back("attack_time_unavailable: no stopwatch reading was recorded");
  if (!resources) {
    e.notes.emplace_back("resources_unavailable: process statistics could not be read; effort is reported as time and steps only");
  } else if (!resources->gpu_mb_peak) {
    e.notes.emplace_back("gpu_unavailable: no device-memory query on this platform");
  }
  return e;
}

RiskClass classify(const DerivedMeasures& derived, const DecisionCriteria& criteria) {
  criteria.validate();
  if (derived.damage_normalized >= criteria.critical_threshold) return RiskClass::Critical;
  if (derived.damage_normalized >= criteria.major_threshold) return RiskClass::Major;
  return RiskClass::Minor;
}

double compare_to_baseline(double attacked_damage, double baseline_damage) {
  if (!(attacked_damage >= 0.0) || !(baseline_damage >= 0.0)) {
    throw std::invalid_argument("damage values must be non-negative");
  }
  return attacked_damage - baseline_damage;
}

DerivedMeasures derive(const BaseMeasures& base) {
  auto missing = [](std::string_view name) {
    return std::invalid_argument(fmt::format("incomplete base measures: missing {}", name));
  };
  if (!base.clean_metrics) throw missing("clean_metrics");
  if (!base.attacked_metrics) throw missing("attacked_metrics");
  if (!base.attack_time_s) throw missing("attack_time_s");
  if (!base.steps) throw missing("steps");
  if (!(*base.attack_time_s >= 0.0)) throw std::invalid_argument("attack_time_s must be non-negative");

  DerivedMeasures d;
  d.extent_of_damage = extent_of_damage(*base.attacked_metrics);
  d.damage_normalized = d.extent_of_damage / 4.0;
  d.total_steps = ledger_total(*base.steps);
  d.attack_time_s = *base.attack_time_s;
  d.resources = base.resources;
  return d;
}

RiskReport build_report(const BaseMeasures& base, const DecisionCriteria& criteria,
                        std::optional<double> baseline_damage, Provenance provenance,
                        AttackSummary attack, std::vector<std::string> extra_notes) {
  RiskReport r;
  r.base = base;
  r.derived = derive(base);
  r.criteria = criteria;
  r.indicator = classify(r.derived, criteria);
  r.baseline_damage = baseline_damage;
  if (baseline_damage) r.damage_delta = compare_to_baseline(r.derived.extent_of_damage, *baseline_damage);
  r.attack = std::move(attack);
  r.provenance = std::move(provenance);

  r.notes.emplace_back(
      "damage_formula: extent_of_damage = (1-accuracy) + (1-avg_precision) + (1-avg_recall) + (1-f1); "
      "damage_normalized = extent_of_damage / 4");
  r.notes.emplace_back(
      "damage_reference_divergence: the published reference case study states 4.62 (poisoned) and 0.1 "
      "(original) as extent of damage, but this formula applied to its published metric columns "
      "(0.06, 0.02, 0.02, 0.01) and (0.94, 0.96, 0.94, 0.94) gives 3.89 and 0.22; values here follow the formula");
  r.notes.emplace_back("effort_not_classified: steps, time and resources are reported separately and do not enter the risk class");
  if (base.resources) {
    r.notes.emplace_back("cpu_statistic: cpu_percent_mean is the mean of per-interval process CPU readings");
  }
  for (auto& n : extra_notes) r.notes.push_back(std::move(n));
  r.provenance.determinism_hash = determinism_hash(r);
  return r;
}

// ---------------------------------------------------------------------------
// JSON

using nlohmann::json;

namespace {

template <typename T, typename F>
json optional_json(const std::optional<T>& v, F&& convert) {
  return v ? convert(*v) : json(nullptr);
}

template <typename T, typename F>
std::optional<T> optional_from(const json& j, const char* key, F&& convert) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return convert(v);
}

json metrics_json(const MetricsBundle& m) {
  return {{"accuracy", m.accuracy}, {"avg_precision", m.avg_precision}, {"avg_recall", m.avg_recall}, {"f1", m.f1}};
}

MetricsBundle metrics_from(const json& j) {
  return {j.at("accuracy").get<double>(), j.at("avg_precision").get<double>(), j.at("avg_recall").get<double>(),
          j.at("f1").get<double>()};
}

json resources_json(const ResourceSummary& r) {
  return {{"cpu_percent_mean", r.cpu_percent_mean},
          {"rss_mb_peak", r.rss_mb_peak},
          {"gpu_mb_peak", r.gpu_mb_peak ? json(*r.gpu_mb_peak) : json(nullptr)},
          {"sample_count", r.sample_count}};
}

ResourceSummary resources_from(const json& j) {
  ResourceSummary r;
  r.cpu_percent_mean = j.at("cpu_percent_mean").get<double>();
  r.rss_mb_peak = j.at("rss_mb_peak").get<double>();
  r.gpu_mb_peak = optional_from<double>(j, "gpu_mb_peak", [](const json& v) { return v.get<double>(); });
  r.sample_count = j.at("sample_count").get<std::size_t>();
  return r;
}

json steps_json(const StepLedgerTotals& s) {
  return {{"knowledge", s.knowledge}, {"goal", s.goal}, {"specificity", s.specificity}};
}

StepLedgerTotals steps_from(const json& j) {
  return {j.at("knowledge").get<std::uint64_t>(), j.at("goal").get<std::uint64_t>(),
          j.at("specificity").get<std::uint64_t>()};
}

auto as_double = [](const json& v) { return v.get<double>(); };

}  // namespace

json to_json(const RiskReport& r) {
  json base = {
      {"clean_metrics", optional_json(r.base.clean_metrics, metrics_json)},
      {"attacked_metrics", optional_json(r.base.attacked_metrics, metrics_json)},
      {"attack_time_s", r.base.attack_time_s ? json(*r.base.attack_time_s) : json(nullptr)},
      {"resources", optional_json(r.base.resources, resources_json)},
      {"steps", optional_json(r.base.steps, steps_json)},
  };
  json derived = {
      {"extent_of_damage", r.derived.extent_of_damage},
      {"damage_normalized", r.derived.damage_normalized},
      {"total_steps", r.derived.total_steps},
      {"attack_time_s", r.derived.attack_time_s},
      {"resources", optional_json(r.derived.resources, resources_json)},
  };
  json attack = {
      {"kind", r.attack.kind},
      {"poison_fraction", r.attack.poison_fraction},
      {"target_label", r.attack.target_label ? json(*r.attack.target_label) : json(nullptr)},
      {"specificity", r.attack.specificity},
      {"trigger", r.attack.trigger ? json(*r.attack.trigger) : json(nullptr)},
      {"poisoned_samples", r.attack.poisoned_samples},
  };
  json criteria = {
      {"critical_threshold", r.criteria.critical_threshold},
      {"major_threshold", r.criteria.major_threshold},
      {"effort_adjustment", r.criteria.effort_adjustment ? json(*r.criteria.effort_adjustment) : json(nullptr)},
  };
  json provenance = {
      {"engine", r.provenance.engine},
      {"engine_version", r.provenance.engine_version},
      {"seed", r.provenance.seed},
      {"config", r.provenance.config},
      {"determinism_hash", r.provenance.determinism_hash},
  };
  return {
      {"schema_version", r.schema_version},
      {"attack", attack},
      {"base", base},
      {"derived", derived},
      {"indicator", std::string(to_string(r.indicator))},
      {"criteria", criteria},
      {"baseline_damage", r.baseline_damage ? json(*r.baseline_damage) : json(nullptr)},
      {"damage_delta", r.damage_delta ? json(*r.damage_delta) : json(nullptr)},
      {"attacked_model_clean_metrics", optional_json(r.attacked_model_clean_metrics, metrics_json)},
      {"provenance", provenance},
      {"notes", r.notes},
  };
}

RiskReport report_from_json(const json& j) {
  try {
    RiskReport r;
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != kReportSchemaVersion) {
      throw DataError(fmt::format("unsupported report schema_version {}", r.schema_version));
    }
    const auto& a = j.at("attack");
    r.attack.kind = a.at("kind").get<std::string>();
    r.attack.poison_fraction = a.at("poison_fraction").get<double>();
    r.attack.target_label = optional_from<int>(a, "target_label", [](const json& v) { return v.get<int>(); });
    r.attack.specificity = a.at("specificity").get<std::string>();
    r.attack.trigger = optional_from<std::string>(a, "trigger", [](const json& v) { return v.get<std::string>(); });
    r.attack.poisoned_samples = a.at("poisoned_samples").get<std::uint64_t>();

    const auto& b = j.at("base");
    r.base.clean_metrics = optional_from<MetricsBundle>(b, "clean_metrics", metrics_from);
    r.base.attacked_metrics = optional_from<MetricsBundle>(b, "attacked_metrics", metrics_from);
    r.base.attack_time_s = optional_from<double>(b, "attack_time_s", as_double);
    r.base.resources = optional_from<ResourceSummary>(b, "resources", resources_from);
    r.base.steps = optional_from<StepLedgerTotals>(b, "steps", steps_from);

    const auto& d = j.at("derived");
    r.derived.extent_of_damage = d.at("extent_of_damage").get<double>();
    r.derived.damage_normalized = d.at("damage_normalized").get<double>();
    r.derived.total_steps = d.at("total_steps").get<std::uint64_t>();
    r.derived.attack_time_s = d.at("attack_time_s").get<double>();
    r.derived.resources = optional_from<ResourceSummary>(d, "resources", resources_from);

    const auto indicator = parse_risk_class(j.at("indicator").get<std::string>());
    if (!indicator) throw DataError("unknown risk class in report");
    r.indicator = *indicator;

    const auto& c = j.at("criteria");
    r.criteria.critical_threshold = c.at("critical_threshold").get<double>();
    r.criteria.major_threshold = c.at("major_threshold").get<double>();
    r.criteria.effort_adjustment =
        optional_from<std::string>(c, "effort_adjustment", [](const json& v) { return v.get<std::string>(); });

    r.baseline_damage = optional_from<double>(j, "baseline_damage", as_double);
    r.damage_delta = optional_from<double>(j, "damage_delta", as_double);
    r.attacked_model_clean_metrics = optional_from<MetricsBundle>(j, "attacked_model_clean_metrics", metrics_from);

    const auto& p = j.at("provenance");
    r.provenance.engine = p.at("engine").get<std::string>();
    r.provenance.engine_version = p.at("engine_version").get<std::string>();
    r.provenance.seed = p.at("seed").get<std::uint64_t>();
    r.provenance.config = p.at("config");
    r.provenance.determinism_hash = p.at("determinism_hash").get<std::string>();
    r.notes = j.at("notes").get<std::vector<std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw DataError(fmt::format("malformed report: {}", e.what()));
  }
}

json masked_json(const RiskReport& report) {
  json j = to_json(report);
  j["base"]["attack_time_s"] = nullptr;
  j["base"]["resources"] = nullptr;
  j["derived"]["attack_time_s"] = nullptr;
  j["derived"]["resources"] = nullptr;
  j["provenance"].erase("determinism_hash");
  if (j["provenance"]["config"].is_object()) j["provenance"]["config"].erase("output_dir");
  return j;
}

std::string determinism_hash(const RiskReport& report) {
  // FNV-1a, 64 bit.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : masked_json(report).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string csv_header() { return "attack,fraction,damage,steps,time_s,cpu_mean,rss_peak_mb,class"; }

std::string csv_row(const RiskReport& r) {
  const auto& res = r.derived.resources;
  return fmt::format("{},{},{:.6f},{},{:.3f},{},{},{}", r.attack.kind, r.attack.poison_fraction,
                     r.derived.extent_of_damage, r.derived.total_steps, r.derived.attack_time_s,
                     res ? fmt::format("{:.2f}", res->cpu_percent_mean) : std::string(),
                     res ? fmt::format("{:.2f}", res->rss_mb_peak) : std::string(), to_string(r.indicator));
}

}  // namespace rmf
