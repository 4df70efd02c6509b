#include "core/bench.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "core/error.hpp"
#include "json.hpp"

namespace dpws {

namespace {

std::int64_t unix_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(SystemClock::now().time_since_epoch()).count();
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

double percentile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return 0;
  double rank = p * static_cast<double>(sorted.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(rank));
  auto hi = std::min(lo + 1, sorted.size() - 1);
  double frac = rank - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

LatencyStats compute_stats(std::vector<double> samples) {
  LatencyStats s;
  s.count = samples.size();
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  s.median = percentile_sorted(samples, 0.5);
  s.p90 = percentile_sorted(samples, 0.9);
  s.p99 = percentile_sorted(samples, 0.99);
  s.min = samples.front();
  s.max = samples.back();
  return s;
}

ProcessUsage read_process_usage(int pid) {
  std::string base = "/proc/" + std::to_string(pid);
  std::ifstream status(base + "/status");
  if (!status) fail(ErrorCode::Unsupported, "process " + std::to_string(pid) + " is not visible");
  ProcessUsage u;
  for (std::string line; std::getline(status, line);) {
    if (line.rfind("VmRSS:", 0) == 0) {
      std::istringstream in(line.substr(6));
      std::uint64_t kb = 0;
      in >> kb;
      u.rss_bytes = kb * 1024;
    }
  }
  std::ifstream stat(base + "/stat");
  std::string content((std::istreambuf_iterator<char>(stat)), std::istreambuf_iterator<char>());
  // Fields after the parenthesised command name; utime and stime are 14 and 15.
  auto close = content.rfind(')');
  if (close == std::string::npos) fail(ErrorCode::Unsupported, "unreadable stat for process " + std::to_string(pid));
  std::istringstream in(content.substr(close + 2));
  std::string field;
  std::uint64_t utime = 0, stime = 0;
  for (int i = 3; i <= 15 && in >> field; ++i) {
    if (i == 14) utime = std::stoull(field);
    if (i == 15) stime = std::stoull(field);
  }
  u.cpu_ticks = utime + stime;
  return u;
}

struct ResourceSampler::Impl {
  int pid;
  Millis cadence;
  std::thread worker;
  std::mutex m;
  std::condition_variable cv;
  bool stopping = false;
  std::vector<ResourceSample> series;
};

ResourceSampler::ResourceSampler(int pid, Millis cadence) : impl_(std::make_unique<Impl>()) {
  impl_->pid = pid;
  impl_->cadence = cadence;
  read_process_usage(pid);
}

ResourceSampler::~ResourceSampler() { stop(); }

void ResourceSampler::start() {
  auto* impl = impl_.get();
  impl->worker = std::thread([impl] {
    const double ticks_per_s = static_cast<double>(::sysconf(_SC_CLK_TCK));
    auto prev = read_process_usage(impl->pid);
    auto prev_t = std::chrono::steady_clock::now();
    auto next = prev_t + impl->cadence;
    std::unique_lock lock(impl->m);
    while (!impl->cv.wait_until(lock, next, [impl] { return impl->stopping; })) {
      ProcessUsage u;
      try {
        u = read_process_usage(impl->pid);
      } catch (const Error&) {
        break;
      }
      auto now = std::chrono::steady_clock::now();
      double dt = std::chrono::duration<double>(now - prev_t).count();
      ResourceSample s;
      s.unix_ns = unix_ns();
      s.rss_bytes = u.rss_bytes;
      s.cpu_percent = dt > 0 ? static_cast<double>(u.cpu_ticks - prev.cpu_ticks) / ticks_per_s / dt * 100.0 : 0;
      impl->series.push_back(s);
      prev = u;
      prev_t = now;
      next += impl->cadence;
    }
  });
}

std::vector<ResourceSample> ResourceSampler::stop() {
  {
    std::lock_guard lock(impl_->m);
    impl_->stopping = true;
  }
  impl_->cv.notify_all();
  if (impl_->worker.joinable()) impl_->worker.join();
  return impl_->series;
}

BenchReport run_bench(Client& client, const RemoteService& service, const BenchOptions& options) {
  const OperationDescription* op = service.find_operation(options.operation);
  if (!op) fail(ErrorCode::UnknownOperation, "service '" + service.service_id + "' has no operation '" +
                                                 options.operation + "'");
  if (!op->input && !is_absent(options.input)) fail(ErrorCode::TypeMismatch, "operation takes no input");
  if (op->input && type_of(options.input) != op->input->type)
    fail(ErrorCode::TypeMismatch, "operation expects " + std::string(to_string(op->input->type)) + " input");
  if (options.n == 0) fail(ErrorCode::InvalidArgument, "request count must be positive");
  if (options.concurrency == 0) fail(ErrorCode::InvalidArgument, "concurrency must be positive");

  BenchReport report;
  report.target = service.address();
  report.service_id = service.service_id;
  report.operation = options.operation;
  report.request_count = options.n;
  report.concurrency = std::min(options.concurrency, options.n);

  std::unique_ptr<ResourceSampler> sampler;
  if (options.pid) {
    try {
      sampler = std::make_unique<ResourceSampler>(*options.pid, options.sample_cadence);
    } catch (const Error& e) {
      report.resource_notice = std::string("resource sampling skipped: ") + e.what();
    }
  } else {
    report.resource_notice = "resource sampling skipped: no local process id for the target";
  }

  std::mutex merge;
  std::vector<BenchSample> samples;
  samples.reserve(options.n);
  std::vector<std::string> errors;
  std::atomic<std::size_t> error_count{0};

  auto loop = [&](std::size_t loop_index) {
    std::vector<BenchSample> local;
    std::vector<std::string> local_errors;
    for (std::size_t i = loop_index; i < options.n; i += report.concurrency) {
      BenchSample s;
      s.index = i;
      s.loop = loop_index;
      s.start_unix_ns = unix_ns();
      auto t0 = std::chrono::steady_clock::now();
      try {
        Value out = client.invoke(service, options.operation, options.input, options.timeout);
        auto t1 = std::chrono::steady_clock::now();
        if (options.expect && out != *options.expect)
          fail(ErrorCode::TypeMismatch, "unexpected payload " + describe(out) + ", expected " + describe(*options.expect));
        s.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        local.push_back(s);
      } catch (const std::exception& e) {
        ++error_count;
        if (local_errors.size() < 5) local_errors.push_back(e.what());
      }
    }
    std::lock_guard lock(merge);
    samples.insert(samples.end(), local.begin(), local.end());
    for (auto& e : local_errors)
      if (errors.size() < 20) errors.push_back(std::move(e));
  };

  if (sampler) sampler->start();
  auto started = std::chrono::steady_clock::now();
  if (report.concurrency == 1) {
    loop(0);
  } else {
    std::vector<std::thread> loops;
    loops.reserve(report.concurrency);
    for (std::size_t k = 0; k < report.concurrency; ++k) loops.emplace_back(loop, k);
    for (auto& t : loops) t.join();
  }
  auto finished = std::chrono::steady_clock::now();
  if (sampler) report.resources = sampler->stop();

  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  report.samples = std::move(samples);
  report.errors = error_count;
  report.error_messages = std::move(errors);
  std::vector<double> latencies;
  latencies.reserve(report.samples.size());
  for (const auto& s : report.samples) latencies.push_back(s.latency_ms);
  report.stats = compute_stats(std::move(latencies));
  report.total_duration_s = std::chrono::duration<double>(finished - started).count();
  report.throughput_rps =
      report.total_duration_s > 0 ? static_cast<double>(report.request_count) / report.total_duration_s : 0;
  return report;
}

void write_csv(const BenchReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::InvalidArgument, "cannot write " + path);
  out << "index,start_unix_ns,latency_ms,status\n";
  for (const auto& s : report.samples)
    out << s.index << ',' << s.start_unix_ns << ',' << fmt_double(s.latency_ms) << ',' << s.status << '\n';
  if (!out) fail(ErrorCode::InvalidArgument, "write to " + path + " failed");
}

std::string report_json(const BenchReport& r) {
  nlohmann::ordered_json j;
  j["target"] = r.target;
  j["service_id"] = r.service_id;
  j["operation"] = r.operation;
  j["request_count"] = r.request_count;
  j["concurrency"] = r.concurrency;
  j["errors"] = r.errors;
  j["error_messages"] = r.error_messages;
  j["samples"] = r.stats.count;
  j["latency_ms"] = {{"mean", r.stats.mean}, {"median", r.stats.median}, {"p90", r.stats.p90},
                     {"p99", r.stats.p99},   {"min", r.stats.min},       {"max", r.stats.max}};
  j["total_duration_s"] = r.total_duration_s;
  j["throughput_rps"] = r.throughput_rps;
  auto loops = nlohmann::json::array();
  for (const auto& s : r.samples) loops.push_back(s.loop);
  j["sample_loops"] = loops;
  auto series = nlohmann::json::array();
  for (const auto& s : r.resources)
    series.push_back({{"unix_ns", s.unix_ns}, {"rss_bytes", s.rss_bytes}, {"cpu_percent", s.cpu_percent}});
  j["resources"] = series;
  if (!r.resource_notice.empty()) j["resource_notice"] = r.resource_notice;
  j["reference"] = {{"mean_latency_ms", reference::kMeanLatencyMs},
                    {"total_duration_s", reference::kTotalDurationS},
                    {"request_count", reference::kRequestCount},
                    {"cpu_percent", reference::kCpuPercent},
                    {"memory_bytes", reference::kMemoryBytes}};
  return j.dump(2);
}

std::string report_text(const BenchReport& r) {
  std::ostringstream o;
  char line[256];
  o << "target      " << r.target << " op " << r.operation << "\n";
  std::snprintf(line, sizeof(line), "requests    %zu (concurrency %zu), errors %zu\n", r.request_count, r.concurrency,
                r.errors);
  o << line;
  std::snprintf(line, sizeof(line),
                "latency ms  mean %.3f  median %.3f  p90 %.3f  p99 %.3f  min %.3f  max %.3f\n", r.stats.mean,
                r.stats.median, r.stats.p90, r.stats.p99, r.stats.min, r.stats.max);
  o << line;
  std::snprintf(line, sizeof(line), "total       %.3f s, throughput %.1f req/s\n", r.total_duration_s,
                r.throughput_rps);
  o << line;
  if (!r.resources.empty()) {
    double cpu = 0;
    double rss = 0;
    for (const auto& s : r.resources) {
      cpu += s.cpu_percent;
      rss += static_cast<double>(s.rss_bytes);
    }
    std::snprintf(line, sizeof(line), "target      cpu avg %.1f%%, rss avg %.0f bytes over %zu samples\n",
                  cpu / static_cast<double>(r.resources.size()), rss / static_cast<double>(r.resources.size()),
                  r.resources.size());
    o << line;
  } else if (!r.resource_notice.empty()) {
    o << r.resource_notice << "\n";
  }
  std::snprintf(line, sizeof(line),
                "reference   embedded target: mean %.2f ms, %d requests in %.2f s, cpu %.1f/%.1f/%.1f%%, memory %.0f "
                "bytes (as reported)\n",
                reference::kMeanLatencyMs, reference::kRequestCount, reference::kTotalDurationS,
                reference::kCpuPercent[0], reference::kCpuPercent[1], reference::kCpuPercent[2],
                reference::kMemoryBytes);
  o << line;
  for (const auto& e : r.error_messages) o << "error       " << e << "\n";
  return o.str();
}

}  // namespace dpws
