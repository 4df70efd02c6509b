// Client tool: probe, get, invoke, subscribe and bench.
#include <CLI11.hpp>

#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "common.hpp"

namespace {

const char* kProg = "dpws";

struct Common {
  std::string interface;
  std::string sink_host;
  bool profile_1_0 = false;
  int timeout_ms = 4000;
};

struct ClientHandle {
  dpws_client* client = nullptr;
  dpws_remote_device* device = nullptr;
  ~ClientHandle() {
    dpws_remote_device_free(device);
    dpws_client_free(client);
  }
};

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

int make_client(const Common& c, ClientHandle& h) {
  dpws_client_options options{opt(c.interface), opt(c.sink_host), c.profile_1_0 ? 1 : 0};
  if (int rc = dpws_client_new(&options, &h.client)) return cli::report(kProg, "client", rc);
  return cli::kOk;
}

int open_device(const Common& c, const std::string& xaddr, ClientHandle& h) {
  if (int code = make_client(c, h)) return code;
  if (int rc = dpws_client_open(h.client, xaddr.c_str(), c.timeout_ms, &h.device)) return cli::report(kProg, xaddr, rc);
  return cli::kOk;
}

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  for (const auto& s : v) out.push_back(s.c_str());
  return out;
}

int cmd_probe(const Common& c, const std::vector<std::string>& types, const std::vector<std::string>& scopes,
              bool json) {
  ClientHandle h;
  if (int code = make_client(c, h)) return code;
  auto t = c_strings(types);
  auto s = c_strings(scopes);
  dpws_probe_result* result = nullptr;
  if (int rc = dpws_client_probe(h.client, t.data(), t.size(), s.data(), s.size(), c.timeout_ms, &result))
    return cli::report(kProg, "probe", rc);
  if (json) {
    std::printf("%s\n", dpws_probe_result_json(result));
  } else {
    for (size_t i = 0; i < dpws_probe_result_count(result); ++i)
      std::printf("%s %s\n", dpws_probe_result_epr(result, i), dpws_probe_result_xaddr(result, i));
  }
  dpws_probe_result_free(result);
  return cli::kOk;
}

int cmd_get(const Common& c, const std::string& xaddr) {
  ClientHandle h;
  if (int code = open_device(c, xaddr, h)) return code;
  std::printf("%s\n", dpws_remote_device_json(h.device));
  return cli::kOk;
}

int cmd_invoke(const Common& c, const std::string& xaddr, const std::string& service, const std::string& op,
               const std::optional<std::string>& input) {
  ClientHandle h;
  if (int code = open_device(c, xaddr, h)) return code;
  char* output = nullptr;
  if (int rc = dpws_client_invoke(h.client, h.device, service.c_str(), op.c_str(), input ? input->c_str() : nullptr,
                                  c.timeout_ms, &output))
    return cli::report(kProg, op, rc);
  if (output) std::printf("%s\n", output);
  dpws_string_free(output);
  return cli::kOk;
}

struct SubscribeState {
  std::mutex mutex;
  std::condition_variable cv;
  size_t received = 0;
  bool ended = false;
  bool interrupted = false;
};

int cmd_subscribe(const Common& c, const std::string& xaddr, const std::string& service, const std::string& event,
                  int expires_s, size_t count, sigset_t signals) {
  ClientHandle h;
  if (int code = open_device(c, xaddr, h)) return code;
  SubscribeState state;
  auto on_notify = [](void* user, const char* ev, uint64_t seq, const char* value) {
    auto* st = static_cast<SubscribeState*>(user);
    std::printf("%llu %s %s\n", static_cast<unsigned long long>(seq), ev, value ? value : "");
    std::fflush(stdout);
    std::lock_guard lock(st->mutex);
    ++st->received;
    st->cv.notify_all();
  };
  auto on_end = [](void* user, const char* status, const char* reason) {
    auto* st = static_cast<SubscribeState*>(user);
    std::fprintf(stderr, "%s: subscription ended: %s %s\n", kProg, status, reason);
    std::lock_guard lock(st->mutex);
    st->ended = true;
    st->cv.notify_all();
  };
  dpws_subscription* sub = nullptr;
  if (int rc = dpws_client_subscribe(h.client, h.device, service.c_str(), opt(event), expires_s, on_notify, on_end,
                                     &state, &sub))
    return cli::report(kProg, "subscribe", rc);
  std::fprintf(stderr, "%s: subscribed %s\n", kProg, dpws_subscription_id(sub));

  std::thread([&state, signals] {
    int sig = 0;
    sigwait(&signals, &sig);
    std::lock_guard lock(state.mutex);
    state.interrupted = true;
    state.cv.notify_all();
  }).detach();

  bool ended;
  {
    std::unique_lock lock(state.mutex);
    state.cv.wait(lock, [&] { return state.ended || state.interrupted || (count && state.received >= count); });
    ended = state.ended;
  }
  int code = cli::kOk;
  if (!ended)
    if (int rc = dpws_subscription_unsubscribe(sub)) code = cli::report(kProg, "unsubscribe", rc);
  dpws_subscription_free(sub);
  return code;
}

struct BenchArgs {
  std::string xaddr;
  std::string probe_type;
  size_t n = 500;
  size_t concurrency = 1;
  std::string service;
  std::string op;
  std::optional<std::string> input;
  std::optional<std::string> expect;
  std::string out;
  int request_timeout_ms = 10000;
  int pid = 0;
  int sample_ms = 100;
};

std::string json_path_for(const std::string& csv) {
  auto slash = csv.find_last_of('/');
  auto dot = csv.find_last_of('.');
  if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) return csv.substr(0, dot) + ".json";
  return csv + ".json";
}

int cmd_bench(const Common& c, const BenchArgs& a) {
  ClientHandle h;
  if (int code = make_client(c, h)) return code;
  std::string xaddr = a.xaddr;
  if (xaddr.empty()) {
    const char* type = a.probe_type.c_str();
    dpws_probe_result* result = nullptr;
    if (int rc = dpws_client_probe(h.client, &type, 1, nullptr, 0, c.timeout_ms, &result))
      return cli::report(kProg, "probe", rc);
    if (dpws_probe_result_count(result)) xaddr = dpws_probe_result_xaddr(result, 0);
    dpws_probe_result_free(result);
    if (xaddr.empty()) {
      std::fprintf(stderr, "%s: no device of type %s answered\n", kProg, a.probe_type.c_str());
      return cli::kNetwork;
    }
  }
  if (int rc = dpws_client_open(h.client, xaddr.c_str(), c.timeout_ms, &h.device)) return cli::report(kProg, xaddr, rc);

  dpws_bench_options options{a.n,        a.concurrency, opt(a.service), a.op.c_str(), a.input ? a.input->c_str() : nullptr,
                             a.expect ? a.expect->c_str() : nullptr, a.request_timeout_ms, a.pid, a.sample_ms};
  dpws_bench_report* report = nullptr;
  if (int rc = dpws_bench_run(h.client, h.device, &options, &report)) return cli::report(kProg, "bench", rc);
  int code = cli::kOk;
  if (int rc = dpws_bench_write_csv(report, a.out.c_str())) code = cli::report(kProg, a.out, rc);
  std::string json_path = json_path_for(a.out);
  std::ofstream(json_path) << dpws_bench_report_json(report) << "\n";
  std::printf("%s", dpws_bench_report_text(report));
  dpws_bench_stats stats{};
  dpws_bench_stats_get(report, &stats);
  dpws_bench_report_free(report);
  if (code) return code;
  return stats.errors ? cli::kBenchErrors : cli::kOk;
}

}  // namespace

int main(int argc, char** argv) {
  sigset_t signals = cli::block_termination();

  CLI::App app{"DPWS client"};
  app.require_subcommand(1);
  Common common;
  std::string log_level = "warn";
  app.add_option("--interface", common.interface, "IPv4 address of the multicast interface");
  app.add_option("--sink-host", common.sink_host, "Host written into event sink addresses");
  app.add_flag("--dpws-1.0", common.profile_1_0, "Use the DPWS 1.0 namespaces");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  auto* probe = app.add_subcommand("probe", "Multicast a Probe and list matches");
  std::vector<std::string> types, scopes;
  bool json = false;
  probe->add_option("--type", types, "Type QName ({ns}local, dpws:Local or bare)");
  probe->add_option("--scope", scopes, "Scope IRI");
  probe->add_option("--timeout", common.timeout_ms, "Milliseconds to wait")->check(CLI::PositiveNumber);
  probe->add_flag("--json", json, "Print matches as JSON");

  auto* get = app.add_subcommand("get", "Fetch device metadata and service descriptions");
  std::string xaddr;
  get->add_option("xaddr", xaddr, "Device transport address")->required();
  get->add_option("--timeout", common.timeout_ms, "Milliseconds per request")->check(CLI::PositiveNumber);

  auto* invoke = app.add_subcommand("invoke", "Invoke one operation");
  std::string service, op, event;
  std::optional<std::string> input;
  invoke->add_option("xaddr", xaddr, "Device transport address")->required();
  invoke->add_option("--service", service, "Service id")->required();
  invoke->add_option("--op", op, "Operation name")->required();
  invoke->add_option("--input", input, "Input value (lexical form)");
  invoke->add_option("--timeout", common.timeout_ms, "Milliseconds per request")->check(CLI::PositiveNumber);

  auto* subscribe = app.add_subcommand("subscribe", "Subscribe and print notifications");
  int expires_s = 0;
  size_t count = 0;
  subscribe->add_option("xaddr", xaddr, "Device transport address")->required();
  subscribe->add_option("--service", service, "Service id")->required();
  subscribe->add_option("--event", event, "Event name (all events when omitted)");
  subscribe->add_option("--expires", expires_s, "Requested lifetime in seconds");
  subscribe->add_option("--count", count, "Exit after this many notifications");
  subscribe->add_option("--timeout", common.timeout_ms, "Milliseconds per request")->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench", "Time repeated invocations");
  BenchArgs b;
  auto* target = bench->add_option("xaddr", b.xaddr, "Device transport address");
  auto* probe_type = bench->add_option("--probe-type", b.probe_type, "Discover the target by type");
  target->excludes(probe_type);
  bench->add_option("--n", b.n, "Total requests")->check(CLI::PositiveNumber);
  bench->add_option("--concurrency", b.concurrency, "Parallel request loops")->check(CLI::PositiveNumber);
  bench->add_option("--service", b.service, "Service id (first offering the operation when omitted)");
  bench->add_option("--op", b.op, "Operation name")->required();
  bench->add_option("--input", b.input, "Input value (lexical form)");
  bench->add_option("--expect", b.expect, "Expected output; a mismatch counts as an error");
  bench->add_option("--out", b.out, "Per-request CSV path")->required();
  bench->add_option("--request-timeout", b.request_timeout_ms, "Milliseconds per request")->check(CLI::PositiveNumber);
  bench->add_option("--timeout", common.timeout_ms, "Milliseconds for discovery and metadata")
      ->check(CLI::PositiveNumber);
  bench->add_option("--pid", b.pid, "Local process to sample for CPU and memory");
  bench->add_option("--sample-ms", b.sample_ms, "Resource sampling cadence")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
    if (bench->parsed() && b.xaddr.empty() && b.probe_type.empty())
      throw CLI::RequiredError("bench needs XADDR or --probe-type");
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? cli::kOk : cli::kUsage;
  }
  if (int rc = dpws_set_log_level(log_level.c_str())) return cli::report(kProg, "--log-level", rc);

  if (probe->parsed()) return cmd_probe(common, types, scopes, json);
  if (get->parsed()) return cmd_get(common, xaddr);
  if (invoke->parsed()) return cmd_invoke(common, xaddr, service, op, input);
  if (subscribe->parsed()) return cmd_subscribe(common, xaddr, service, event, expires_s, count, signals);
  return cmd_bench(common, b);
}
