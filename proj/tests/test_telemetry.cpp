#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <stdexcept>
#include <thread>
#include <vector>

#include "rmf/telemetry.hpp"

using namespace rmf;
using namespace std::chrono_literals;

TEST_CASE("ledger_total arithmetic") {
  CHECK(ledger_total({10, 6, 5}) == 21);
  CHECK(ledger_total({0, 0, 0}) == 0);
  CHECK(ledger_total({4, 3, 2}) == 9);
  // Any permutation of the fields gives the same sum.
  CHECK(ledger_total({6, 5, 10}) == 21);
  CHECK(ledger_total({5, 10, 6}) == 21);
}

TEST_CASE("stopwatch is monotonic") {
  Stopwatch w;
  const double a = w.elapsed_s();
  std::this_thread::sleep_for(5ms);
  const double b = w.elapsed_s();
  CHECK(a >= 0.0);
  CHECK(b > a);
}

TEST_CASE("process reading is available on this platform") {
  const auto r = read_process();
  REQUIRE(r.has_value());
  CHECK(r->rss_mb > 0.0);
  CHECK(r->cpu_seconds >= 0.0);
  CHECK_FALSE(read_gpu_mb().has_value());
}

TEST_CASE("probe of a 0.5 s sleep") {
  const auto m = probe([] { std::this_thread::sleep_for(500ms); }, 100);
  CHECK(m.elapsed_s >= 0.5);
  CHECK(m.elapsed_s <= 0.75);
  REQUIRE(m.resources.has_value());
  CHECK(m.resources->sample_count >= 4);
  CHECK(m.resources->sample_count == m.samples.size());
  for (std::size_t i = 1; i < m.samples.size(); ++i) CHECK(m.samples[i].t_offset_s >= m.samples[i - 1].t_offset_s);
  CHECK(m.samples.back().t_offset_s <= m.elapsed_s + 0.05);
  // A sleeping process barely uses the CPU.
  CHECK(m.resources->cpu_percent_mean < 50.0);
}

TEST_CASE("probe of a no-op still yields a valid summary") {
  const auto m = probe([] {}, 100);
  CHECK(m.elapsed_s >= 0.0);
  REQUIRE(m.resources.has_value());
  CHECK(m.resources->sample_count >= 1);
  CHECK(m.resources->rss_mb_peak > 0.0);
}

TEST_CASE("probe sees a 100 MB allocation") {
  constexpr std::size_t bytes = std::size_t{100} << 20;
  const auto m = probe(
      [] {
        std::vector<unsigned char> block(bytes);
        std::memset(block.data(), 1, block.size());
        std::this_thread::sleep_for(300ms);  // hold it across several samples
        volatile unsigned char sink = block[bytes / 2];
        (void)sink;
      },
      100);
  REQUIRE(m.resources.has_value());
  MESSAGE("baseline " << m.baseline.rss_mb << " MB, peak " << m.resources->rss_mb_peak << " MB");
  CHECK(m.resources->rss_mb_peak - m.baseline.rss_mb >= 100.0);
}

TEST_CASE("probe_run returns the action value and rethrows its errors") {
  const auto r = probe_run([] { return 42; }, 20);
  CHECK(r.value == 42);
  CHECK(r.measurement.elapsed_s >= 0.0);
  CHECK_THROWS_WITH_AS(probe_run([]() -> int { throw std::runtime_error("boom"); }, 20), "boom", std::runtime_error);
  CHECK_THROWS_AS(probe([] {}, 5), std::invalid_argument);
}

TEST_CASE("summarize: peaks are at least the mean of the same stream") {
  std::vector<ResourceSample> s{{0.1, 20.0, 50.0, std::nullopt}, {0.2, 80.0, 70.0, 3.0}, {0.3, 50.0, 60.0, 1.0}};
  const auto r = summarize(s);
  CHECK(r.sample_count == 3);
  CHECK(r.cpu_percent_mean == doctest::Approx(50.0));
  CHECK(r.rss_mb_peak == 70.0);
  CHECK(r.gpu_mb_peak == 3.0);
  CHECK(r.rss_mb_peak >= (50.0 + 70.0 + 60.0) / 3.0);
  CHECK_THROWS_AS(summarize({}), std::invalid_argument);
  s[1].gpu_mb.reset();
  s[2].gpu_mb.reset();
  CHECK_FALSE(summarize(s).gpu_mb_peak.has_value());
}
