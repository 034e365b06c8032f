// rmf: measure poisoning-attack risk on a small image classifier.

#include <charconv>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "rmf/error.hpp"
#include "rmf/runner.hpp"
#include "rmf/selftest.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("rmf");
  logger->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* level = std::getenv("RMF_LOG_LEVEL")) {
    const auto parsed = spdlog::level::from_str(level);
    // from_str maps unknown names to "off"; only honour a real match.
    if (parsed != spdlog::level::off || std::string(level) == "off") spdlog::set_level(parsed);
  }
}

void fail(std::string_view kind, std::string_view message) {
  std::string flat(message);
  for (auto& c : flat) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << fmt::format("error[{}]: {}\n", kind, flat);
}

// Strict list parse: an empty argument is an empty list, junk is an error.
std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto end = std::min(text.find(',', start), text.size());
    const std::string item = text.substr(start, end - start);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc{} || ptr != item.data() + item.size()) {
      throw rmf::ConfigError(fmt::format("--fractions entry '{}' is not a number", item));
    }
    out.push_back(v);
    if (end == text.size()) break;
    start = end + 1;
  }
  return out;
}

rmf::RunConfig config_with_overrides(const std::string& path, std::optional<std::uint64_t> seed,
                                     const std::string& out_dir) {
  auto j = rmf::read_config_json(path);
  if (seed) {
    if (!j.is_object()) throw rmf::ConfigError("config root must be an object");
    j["seed"] = *seed;
  }
  auto cfg = rmf::parse_config(j, std::filesystem::path(path).parent_path());
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  return cfg;
}

int cmd_measure(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out_dir,
                const std::string& baseline_cache, bool csv) {
  auto cfg = config_with_overrides(config, seed, out_dir);
  if (csv) cfg.write_csv = true;
  rmf::RunOptions opts;
  if (!baseline_cache.empty()) opts.baseline_cache = baseline_cache;
  const auto report = rmf::run_measurement(cfg, opts);
  std::cout << rmf::print_report(report);
  return 0;
}

int cmd_sweep(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out_dir,
              const std::string& fractions) {
  const auto cfg = config_with_overrides(config, seed, out_dir);
  const auto rows = rmf::sweep(cfg, parse_fractions(fractions));
  const auto table = rmf::sweep_csv(rows);
  rmf::write_text(cfg.output_dir / "sweep.csv", table);
  std::cout << table;
  for (const auto& row : rows) {
    if (row.report) continue;
    const auto kind = row.error_kind ? std::string(rmf::to_string(*row.error_kind)) : std::string("internal");
    fail(kind, fmt::format("sweep row fraction {} failed: {}", row.fraction, row.error));
    return row.error_kind ? rmf::exit_code(*row.error_kind) : 1;
  }
  return 0;
}

int cmd_selftest() {
  bool ok = true;
  for (const auto& line : rmf::run_selftest()) {
    std::cout << fmt::format("{} {}: {}\n", line.passed ? "PASS" : "FAIL", line.name, line.detail);
    ok = ok && line.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Risk measurement for poisoning attacks on image classifiers"};
  app.set_version_flag("--version", std::string(rmf::engine_version()));
  app.require_subcommand(1);

  std::string config, out_dir, baseline_cache;
  std::optional<std::uint64_t> seed;
  bool csv = false;
  std::string fractions;

  auto* measure = app.add_subcommand("measure", "Baseline and attacked run, then the risk report");
  measure->add_option("--config", config, "JSON run configuration")->required();
  measure->add_option("--seed", seed, "Override the config seed");
  measure->add_option("--out", out_dir, "Override the output directory");
  measure->add_option("--baseline-cache", baseline_cache, "Checkpoint path for reusing the clean baseline");
  measure->add_flag("--csv", csv, "Also write report.csv");

  auto* sweep = app.add_subcommand("sweep", "One measurement per poison fraction, written to sweep.csv");
  sweep->add_option("--config", config, "JSON run configuration")->required();
  sweep->add_option("--fractions", fractions, "Comma-separated poison fractions")->required();
  sweep->add_option("--seed", seed, "Override the config seed");
  sweep->add_option("--out", out_dir, "Override the output directory");

  auto* selftest = app.add_subcommand("selftest", "Gradient checks and metric oracles");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("config", e.what());
    return rmf::exit_code(rmf::ErrorKind::config);
  }

  setup_logging();
  try {
    if (*measure) return cmd_measure(config, seed, out_dir, baseline_cache, csv);
    if (*sweep) return cmd_sweep(config, seed, out_dir, fractions);
    if (*selftest) return cmd_selftest();
  } catch (const rmf::Error& e) {
    fail(rmf::to_string(e.kind()), e.what());
    return rmf::exit_code(e.kind());
  } catch (const std::exception& e) {
    fail("internal", e.what());
    return 1;
  }
  return 1;
}
