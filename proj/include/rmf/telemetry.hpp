#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <type_traits>
#include <utility>
#include <vector>

namespace rmf {

struct ResourceSample {
  double t_offset_s = 0.0;
  double cpu_percent = 0.0;  ///< process CPU time over wall time; may exceed 100 on multicore
  double rss_mb = 0.0;
  std::optional<double> gpu_mb;
};

struct ResourceSummary {
  double cpu_percent_mean = 0.0;
  double rss_mb_peak = 0.0;
  std::optional<double> gpu_mb_peak;
  std::size_t sample_count = 0;

  bool operator==(const ResourceSummary&) const = default;
};

/// Monotonic-clock timer.
class Stopwatch {
 public:
  Stopwatch() : started_at_(std::chrono::steady_clock::now()) {}
  void restart() { started_at_ = std::chrono::steady_clock::now(); }
  double elapsed_s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started_at_).count();
  }

 private:
  std::chrono::steady_clock::time_point started_at_;
};

struct StepLedgerTotals {
  std::uint64_t knowledge = 0;
  std::uint64_t goal = 0;
  std::uint64_t specificity = 0;

  bool operator==(const StepLedgerTotals&) const = default;
};

std::uint64_t ledger_total(const StepLedgerTotals& t);

/// Point-in-time reading of this process. Empty if the platform offers no
/// process statistics.
struct ProcessReading {
  double cpu_seconds = 0.0;  ///< user + system time consumed so far
  double rss_mb = 0.0;
};
std::optional<ProcessReading> read_process();

/// Device memory in use, when the platform exposes a query. This build has
/// no GPU backend and always returns nullopt.
std::optional<double> read_gpu_mb();

struct ProbeMeasurement {
  std::optional<ResourceSummary> resources;  ///< empty when process statistics are unavailable
  double elapsed_s = 0.0;
  ResourceSample baseline;                   ///< reading taken just before the action
  std::vector<ResourceSample> samples;       ///< the finalized stream, baseline included
};

/// Samples CPU and memory on a background thread every `interval_ms` while
/// `action` runs. The stream is finalized (and the thread joined) before the
/// summary is computed. Throws std::invalid_argument for intervals under 10 ms.
ProbeMeasurement probe(const std::function<void()>& action, unsigned interval_ms);

template <typename Result>
struct ProbeResult {
  Result value;
  ProbeMeasurement measurement;
};

/// Runs `action` under probe() and returns its value with the measurement.
/// Exceptions thrown by the action propagate after the sampler stops.
template <typename F>
auto probe_run(F&& action, unsigned interval_ms) -> ProbeResult<std::invoke_result_t<F>> {
  std::optional<std::invoke_result_t<F>> value;
  auto m = probe([&] { value.emplace(std::forward<F>(action)()); }, interval_ms);
  return {std::move(*value), std::move(m)};
}

/// Mean CPU, peak RSS and peak GPU over a sample stream.
ResourceSummary summarize(const std::vector<ResourceSample>& samples);

}  // namespace rmf
