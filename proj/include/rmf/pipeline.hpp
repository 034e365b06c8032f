#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rmf/attacks.hpp"
#include "rmf/metrics.hpp"
#include "rmf/telemetry.hpp"

namespace rmf {

inline constexpr int kReportSchemaVersion = 1;

/// One raw value per measured attribute. Fields left empty are missing
/// measurements; `resources` may legitimately be empty when the platform
/// offers no process statistics.
struct BaseMeasures {
  std::optional<MetricsBundle> clean_metrics;     ///< unattacked model, clean test set
  std::optional<MetricsBundle> attacked_metrics;  ///< attacked model, triggered test set
  std::optional<double> attack_time_s;
  std::optional<ResourceSummary> resources;
  std::optional<StepLedgerTotals> steps;

  bool operator==(const BaseMeasures&) const = default;
};

/// Damage is folded into one number; the effort fields stay separate.
struct DerivedMeasures {
  double extent_of_damage = 0.0;   ///< in [0, 4]
  double damage_normalized = 0.0;  ///< extent_of_damage / 4
  std::uint64_t total_steps = 0;
  double attack_time_s = 0.0;
  std::optional<ResourceSummary> resources;

  bool operator==(const DerivedMeasures&) const = default;
};

enum class RiskClass { Minor = 0, Major = 1, Critical = 2 };

std::string_view to_string(RiskClass c);
std::optional<RiskClass> parse_risk_class(std::string_view text);

/// Thresholds on normalized damage. Effort does not enter the class in
/// schema v1; `effort_adjustment` is reserved and must stay empty.
struct DecisionCriteria {
  double critical_threshold = 0.6;
  double major_threshold = 0.3;
  std::optional<std::string> effort_adjustment;

  void validate() const;
  bool operator==(const DecisionCriteria&) const = default;
};

struct AttackSummary {
  std::string kind;
  double poison_fraction = 0.0;
  std::optional<int> target_label;
  std::string specificity;
  std::optional<std::string> trigger;
  std::uint64_t poisoned_samples = 0;

  bool operator==(const AttackSummary&) const = default;
};

AttackSummary summarize_attack(const AttackSpec& spec, std::uint64_t poisoned_samples);

struct Provenance {
  std::string engine = "rmf";
  std::string engine_version;
  std::uint64_t seed = 0;
  nlohmann::json config;        ///< the effective run configuration
  std::string determinism_hash;  ///< FNV-1a of the report with timing fields masked

  bool operator==(const Provenance&) const = default;
};

struct RiskReport {
  int schema_version = kReportSchemaVersion;
  BaseMeasures base;
  DerivedMeasures derived;
  RiskClass indicator = RiskClass::Minor;
  DecisionCriteria criteria;
  std::optional<double> baseline_damage;
  std::optional<double> damage_delta;                         ///< attacked minus baseline damage
  std::optional<MetricsBundle> attacked_model_clean_metrics;  ///< stealth check of the backdoor
  AttackSummary attack;
  Provenance provenance;
  std::vector<std::string> notes;

  bool operator==(const RiskReport&) const = default;
};

/// 1 - v for a metric in [0, 1].
double invert_metric(double v);

/// Sum of the four inverted metrics, in [0, 4].
double extent_of_damage(const MetricsBundle& attacked);

struct EffortMeasures {
  StepLedgerTotals steps;
  std::optional<double> attack_time_s;
  std::optional<ResourceSummary> resources;
  std::vector<std::string> notes;  ///< one entry per missing telemetry stream
};

/// Maps monitored low-level data onto the effort attributes without
/// combining units: steps from the catalog phases, time from the stopwatch,
/// resources from the probe.
EffortMeasures map_telemetry_to_effort(const std::optional<ResourceSummary>& resources,
                                       std::optional<double> elapsed_s, const StepCatalog& catalog);

RiskClass classify(const DerivedMeasures& derived, const DecisionCriteria& criteria);

double compare_to_baseline(double attacked_damage, double baseline_damage);

/// Throws std::invalid_argument naming the first missing attribute.
DerivedMeasures derive(const BaseMeasures& base);

RiskReport build_report(const BaseMeasures& base, const DecisionCriteria& criteria,
                        std::optional<double> baseline_damage, Provenance provenance,
                        AttackSummary attack = {}, std::vector<std::string> extra_notes = {});

// Serialization -------------------------------------------------------------

nlohmann::json to_json(const RiskReport& report);
RiskReport report_from_json(const nlohmann::json& j);

/// Report JSON with time, resource and output-location fields nulled and
/// the stored hash removed; equal across reruns of one config and seed.
nlohmann::json masked_json(const RiskReport& report);
std::string determinism_hash(const RiskReport& report);

/// `attack,fraction,damage,steps,time_s,cpu_mean,rss_peak_mb,class`
std::string csv_header();
std::string csv_row(const RiskReport& report);

}  // namespace rmf
