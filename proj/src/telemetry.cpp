#include "rmf/telemetry.hpp"

#include <algorithm>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

#include <sys/resource.h>
#include <unistd.h>

namespace rmf {

std::uint64_t ledger_total(const StepLedgerTotals& t) { return t.knowledge + t.goal + t.specificity; }

std::optional<ProcessReading> read_process() {
  rusage usage{};
  if (getrusage(RUSAGE_SELF, &usage) != 0) return std::nullopt;
  auto seconds = [](const timeval& tv) { return static_cast<double>(tv.tv_sec) + tv.tv_usec * 1e-6; };

  std::ifstream statm("/proc/self/statm");
  std::uint64_t size_pages = 0, resident_pages = 0;
  if (!(statm >> size_pages >> resident_pages)) return std::nullopt;
  const long page = sysconf(_SC_PAGESIZE);
  if (page <= 0) return std::nullopt;

  ProcessReading r;
  r.cpu_seconds = seconds(usage.ru_utime) + seconds(usage.ru_stime);
  r.rss_mb = static_cast<double>(resident_pages) * static_cast<double>(page) / (1024.0 * 1024.0);
  return r;
}

std::optional<double> read_gpu_mb() { return std::nullopt; }

ResourceSummary summarize(const std::vector<ResourceSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("cannot summarize an empty sample stream");
  ResourceSummary s;
  s.sample_count = samples.size();
  double cpu = 0.0;
  for (const auto& x : samples) {
    cpu += x.cpu_percent;
    s.rss_mb_peak = std::max(s.rss_mb_peak, x.rss_mb);
    if (x.gpu_mb) s.gpu_mb_peak = std::max(s.gpu_mb_peak.value_or(0.0), *x.gpu_mb);
  }
  s.cpu_percent_mean = cpu / static_cast<double>(samples.size());
  return s;
}

namespace {

class Sampler {
 public:
  Sampler(const Stopwatch& clock, ProcessReading start) : clock_(clock), last_(start) {}

  ResourceSample take(double t, const ProcessReading& now) {
    ResourceSample s;
    s.t_offset_s = t;
    const double wall = t - last_t_;
    s.cpu_percent = wall > 0.0 ? std::max(0.0, (now.cpu_seconds - last_.cpu_seconds) / wall * 100.0) : 0.0;
    s.rss_mb = now.rss_mb;
    s.gpu_mb = read_gpu_mb();
    last_ = now;
    last_t_ = t;
    return s;
  }

  void run(std::chrono::milliseconds interval) {
    std::unique_lock lock(mutex_);
    while (!stop_) {
      if (wake_.wait_for(lock, interval, [this] { return stop_; })) break;
      lock.unlock();
      const double t = clock_.elapsed_s();
      const auto reading = read_process();
      lock.lock();
      if (reading) samples_.push_back(take(t, *reading));
    }
  }

  void stop() {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    wake_.notify_all();
  }

  // Only valid after the sampling thread has been joined.
  std::vector<ResourceSample>& samples() { return samples_; }

 private:
  const Stopwatch& clock_;
  ProcessReading last_;
  double last_t_ = 0.0;
  std::mutex mutex_;
  std::condition_variable wake_;
  bool stop_ = false;
  std::vector<ResourceSample> samples_;
};

}  // namespace

ProbeMeasurement probe(const std::function<void()>& action, unsigned interval_ms) {
  if (interval_ms < 10) throw std::invalid_argument("probe interval must be at least 10 ms");

  ProbeMeasurement m;
  const auto start = read_process();
  if (!start) {
    // No process statistics: time-only measurement.
    Stopwatch watch;
    action();
    m.elapsed_s = watch.elapsed_s();
    return m;
  }

  Stopwatch clock;
  m.baseline.rss_mb = start->rss_mb;
  m.baseline.gpu_mb = read_gpu_mb();
  Sampler sampler(clock, *start);
  std::exception_ptr failure;
  {
    std::jthread thread([&] { sampler.run(std::chrono::milliseconds(interval_ms)); });
    try {
      action();
    } catch (...) {
      failure = std::current_exception();
    }
    m.elapsed_s = clock.elapsed_s();
    sampler.stop();
  }
  if (failure) std::rethrow_exception(failure);

  // Closing sample so that short actions still report at least one interval.
  if (const auto end = read_process()) sampler.samples().push_back(sampler.take(clock.elapsed_s(), *end));
  m.samples = std::move(sampler.samples());
  if (!m.samples.empty()) m.resources = summarize(m.samples);
  return m;
}

}  // namespace rmf
