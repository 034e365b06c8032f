#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rmf/attacks.hpp"
#include "rmf/dataset.hpp"
#include "rmf/error.hpp"
#include "rmf/model.hpp"
#include "rmf/pipeline.hpp"

namespace rmf {

std::string_view engine_version();

struct ManifestSource {
  std::filesystem::path train;
  std::optional<std::filesystem::path> test;  ///< without it, train is split stratified
  double test_fraction = 0.25;
  ImageShape image_size{30, 30, 3};

  bool operator==(const ManifestSource&) const = default;
};

struct RunConfig {
  std::optional<SyntheticSpec> synthetic = SyntheticSpec{};
  std::optional<ManifestSource> manifest;
  std::size_t num_classes = 10;
  TrainConfig train{10, 32, 0.05, 0};
  AttackSpec attack{AttackKind::pattern_backdoor, 0.5, 0, TriggerPattern{}, Specificity::targeted, {},
                    default_step_catalog(AttackKind::pattern_backdoor)};
  DecisionCriteria criteria;
  unsigned probe_interval_ms = 100;
  std::filesystem::path output_dir = "rmf-out";
  bool write_csv = false;
  std::uint64_t seed = 0;

  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

/// Strict parse: unknown keys are rejected with their dotted path. Relative
/// manifest paths resolve against `base_dir`.
RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
/// Parsed JSON document of a config file; throws ConfigError.
nlohmann::json read_config_json(const std::filesystem::path& path);
RunConfig load_config(const std::filesystem::path& path);
/// Effective configuration, parseable by parse_config.
nlohmann::json config_to_json(const RunConfig& cfg);

struct RunOptions {
  bool write_outputs = true;
  /// Reuse (or create) a checkpoint of the clean baseline model.
  std::optional<std::filesystem::path> baseline_cache;
};

/// Clean baseline (train + evaluate), then the attacked run (poison, train,
/// evaluate) under the resource probe, then the report. Writes report.json,
/// report.txt and optionally report.csv into cfg.output_dir.
RiskReport run_measurement(const RunConfig& cfg, const RunOptions& opts = {});

struct SweepRow {
  std::string attack;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::optional<RiskReport> report;
  std::string error;  ///< set when the row failed
  std::optional<ErrorKind> error_kind;  ///< empty for internal failures
};

/// One measurement per fraction with seed = cfg.seed + row index. Row
/// failures are recorded and the sweep continues.
std::vector<SweepRow> sweep(const RunConfig& cfg, const std::vector<double>& fractions);
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Line-oriented rendering with a fixed field order.
std::string print_report(const RiskReport& report);

void write_text(const std::filesystem::path& path, const std::string& text);

/// Process exit code for an error class (0 is success, 1 internal).
int exit_code(ErrorKind kind);

}  // namespace rmf
