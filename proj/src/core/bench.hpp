#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/client.hpp"

namespace dpws {

/// Reference figures from the embedded-target evaluation, printed next to
/// local results for context only.
namespace reference {
inline constexpr double kMeanLatencyMs = 24.44;
inline constexpr double kTotalDurationS = 12.22;
inline constexpr int kRequestCount = 500;
inline constexpr double kCpuPercent[] = {90.4, 91.9, 96.7};
inline constexpr double kMemoryBytes = 26440;
}  // namespace reference

struct LatencyStats {
  std::size_t count = 0;
  double mean = 0;
  double median = 0;
  double p90 = 0;
  double p99 = 0;
  double min = 0;
  double max = 0;
};

/// Linear-interpolation percentile (rank (n-1)p) over sorted data.
double percentile_sorted(const std::vector<double>& sorted, double p);
/// Empty input yields all zeros.
LatencyStats compute_stats(std::vector<double> samples);

struct BenchSample {
  std::size_t index = 0;
  std::size_t loop = 0;
  std::int64_t start_unix_ns = 0;
  double latency_ms = 0;
  std::string status = "ok";
};

struct ResourceSample {
  std::int64_t unix_ns = 0;
  std::uint64_t rss_bytes = 0;
  double cpu_percent = 0;
};

/// Reads VmRSS and cumulative CPU ticks from /proc. Throws Unsupported when
/// the process is not visible.
struct ProcessUsage {
  std::uint64_t rss_bytes = 0;
  std::uint64_t cpu_ticks = 0;
};
ProcessUsage read_process_usage(int pid);

/// Background sampler for one local process.
class ResourceSampler {
 public:
  ResourceSampler(int pid, Millis cadence);
  ~ResourceSampler();
  void start();
  /// Stops and returns the series.
  std::vector<ResourceSample> stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct BenchOptions {
  /// Total requests across all loops.
  std::size_t n = 500;
  std::size_t concurrency = 1;
  std::string operation;
  Value input;
  /// When set, any other response value counts as an error.
  std::optional<Value> expect;
  Millis timeout{10000};
  /// Local process to sample; absent skips sampling.
  std::optional<int> pid;
  Millis sample_cadence{100};
};

struct BenchReport {
  std::string target;
  std::string service_id;
  std::string operation;
  std::size_t request_count = 0;
  std::size_t concurrency = 1;
  std::size_t errors = 0;
  std::vector<std::string> error_messages;
  /// Successful requests only, ordered by index.
  std::vector<BenchSample> samples;
  LatencyStats stats;
  double total_duration_s = 0;
  double throughput_rps = 0;
  std::vector<ResourceSample> resources;
  std::string resource_notice;
};

/// Times `options.n` invocations split over `options.concurrency` loops.
/// Throws UnknownOperation/TypeMismatch before timing starts.
BenchReport run_bench(Client& client, const RemoteService& service, const BenchOptions& options);

/// CSV: index,start_unix_ns,latency_ms,status
void write_csv(const BenchReport& report, const std::string& path);
std::string report_json(const BenchReport& report);
/// Human summary including the reference figures.
std::string report_text(const BenchReport& report);

}  // namespace dpws
