#include "dpws/dpws.h"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <cstring>
#include <mutex>

#include "core/bench.hpp"
#include "core/client.hpp"
#include "core/config.hpp"
#include "core/error.hpp"
#include "json.hpp"

using namespace dpws;

namespace {

thread_local std::string g_last_error;

// Library logging goes to stderr.
const bool g_logger_installed = [] {
  spdlog::set_default_logger(spdlog::stderr_color_mt("dpws"));
  return true;
}();

template <typename F>
int guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return DPWS_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DPWS_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return DPWS_E_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) fail(ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

Millis timeout_of(int ms) {
  if (ms <= 0) fail(ErrorCode::InvalidTimeout, "timeout must be positive");
  return Millis(ms);
}

std::mutex g_hooks_mutex;
HookRegistry& hooks() {
  static HookRegistry h = builtin_hooks();
  return h;
}

xml::QName parse_type_arg(const std::string& text, ProfileVersion version) {
  if (!text.empty() && text.front() == '{') return xml::QName::from_clark(text);
  auto colon = text.find(':');
  if (colon == std::string::npos) return {std::string(kDefaultServiceNamespace), text};
  std::string prefix = text.substr(0, colon);
  if (prefix == "dpws") return {VersionProfile::get(version).dpws, text.substr(colon + 1)};
  fail(ErrorCode::InvalidArgument, "unknown prefix in '" + text + "'; use {namespace}local");
}

}  // namespace

struct dpws_completion {
  Completion done;
};

struct dpws_device {
  std::unique_ptr<HostedDevice> host;
  std::string xaddr;
  std::string epr;
};

struct dpws_client {
  std::shared_ptr<Client> client;
};

struct dpws_probe_result {
  std::vector<DeviceAdvertisement> devices;
  std::string json;
};

struct dpws_remote_device {
  RemoteDevice device;
  std::string json;
};

struct dpws_subscription {
  std::shared_ptr<ClientSubscription> sub;
};

struct dpws_bench_report {
  BenchReport report;
  std::string json;
  std::string text;
};

extern "C" {

const char* dpws_last_error(void) { return g_last_error.c_str(); }

const char* dpws_status_name(int status) {
  return to_string(static_cast<ErrorCode>(status)).data();
}

int dpws_set_log_level(const char* level) {
  return guard([&] {
    require(level, "level");
    auto lvl = spdlog::level::from_str(level);
    if (lvl == spdlog::level::off && std::strcmp(level, "off") != 0)
      fail(ErrorCode::InvalidArgument, std::string("unknown log level '") + level + "'");
    spdlog::set_level(lvl);
  });
}

void dpws_string_free(char* s) { std::free(s); }

int dpws_register_hook(const char* name, dpws_hook_fn fn, void* user) {
  return guard([&] {
    require(name, "name");
    require(reinterpret_cast<const void*>(fn), "fn");
    std::lock_guard lock(g_hooks_mutex);
    hooks()[name] = [fn, user](const Value& input, const Completion& done) {
      auto* c = new dpws_completion{done};
      std::string text = encode_value(input);
      fn(user, is_absent(input) ? nullptr : text.c_str(), c);
    };
  });
}

int dpws_complete(dpws_completion* done, const char* output) {
  return guard([&] {
    require(done, "done");
    std::unique_ptr<dpws_completion> owned(done);
    owned->done(output ? Value(std::string(output)) : Value());
  });
}

int dpws_complete_error(dpws_completion* done, const char* reason) {
  return guard([&] {
    require(done, "done");
    std::unique_ptr<dpws_completion> owned(done);
    owned->done.fail(reason ? reason : "operation failed");
  });
}

namespace {

int load_device(LoadedConfig config, const dpws_device_options* options, dpws_device** out) {
  return guard([&] {
    require(out, "out");
    if (options) {
      if (options->http_port) {
        if (options->http_port < 1 || options->http_port > 65535)
          fail(ErrorCode::InvalidConfig, "port override " + std::to_string(options->http_port) + " outside 1..65535");
        config.device.http_port = options->http_port;
      }
      if (options->advertise_host) config.device.advertise_host = options->advertise_host;
      if (options->multicast_interface) config.device.discovery.interface_v4 = options->multicast_interface;
      if (options->discovery >= 0) config.device.discovery_enabled = options->discovery != 0;
    }
    auto dev = std::make_unique<dpws_device>();
    dev->host = std::make_unique<HostedDevice>(std::move(config));
    dev->epr = dev->host->device().epr_address();
    *out = dev.release();
  });
}

HookRegistry hook_snapshot() {
  std::lock_guard lock(g_hooks_mutex);
  return hooks();
}

}  // namespace

int dpws_device_load_file(const char* path, const dpws_device_options* options, dpws_device** out) {
  LoadedConfig config;
  int rc = guard([&] {
    require(path, "path");
    config = load_config_file(path, hook_snapshot());
  });
  return rc ? rc : load_device(std::move(config), options, out);
}

int dpws_device_load_string(const char* yaml, const dpws_device_options* options, dpws_device** out) {
  LoadedConfig config;
  int rc = guard([&] {
    require(yaml, "yaml");
    config = load_config_string(yaml, hook_snapshot());
  });
  return rc ? rc : load_device(std::move(config), options, out);
}

int dpws_device_start(dpws_device* device) {
  return guard([&] {
    require(device, "device");
    device->host->start();
    device->xaddr = device->host->device().xaddrs().front();
  });
}

int dpws_device_stop(dpws_device* device) {
  return guard([&] {
    require(device, "device");
    device->host->stop();
  });
}

int dpws_device_emit(dpws_device* device, const char* service_id, const char* event, const char* payload,
                     size_t* delivered) {
  return guard([&] {
    require(device, "device");
    require(service_id, "service_id");
    require(event, "event");
    Device& dev = device->host->device();
    Value value;
    if (payload) value = decode_value(dev.event_payload_type(service_id, event), payload, event);
    DeliverySummary summary = dev.emit(service_id, event, value);
    if (delivered) *delivered = summary.delivered();
  });
}

const char* dpws_device_xaddr(dpws_device* device) {
  if (!device) return "";
  if (device->xaddr.empty()) device->xaddr = device->host->device().xaddrs().front();
  return device->xaddr.c_str();
}

const char* dpws_device_epr(dpws_device* device) { return device ? device->epr.c_str() : ""; }

int dpws_device_port(const dpws_device* device) { return device ? device->host->device().port() : 0; }

void dpws_device_free(dpws_device* device) { delete device; }

int dpws_client_new(const dpws_client_options* options, dpws_client** out) {
  return guard([&] {
    require(out, "out");
    ClientOptions opts;
    if (options) {
      if (options->multicast_interface) opts.probe.endpoint.interface_v4 = options->multicast_interface;
      if (options->sink_host) opts.sink_host = options->sink_host;
      if (options->profile_1_0) opts.version = opts.probe.version = ProfileVersion::V1_0;
    }
    *out = new dpws_client{Client::create(opts)};
  });
}

void dpws_client_free(dpws_client* client) { delete client; }

int dpws_client_probe(dpws_client* client, const char* const* types, size_t type_count, const char* const* scopes,
                      size_t scope_count, int timeout_ms, dpws_probe_result** out) {
  return guard([&] {
    require(client, "client");
    require(out, "out");
    ProbeFilter filter;
    auto version = client->client->options().version;
    for (size_t i = 0; i < type_count; ++i) filter.types.push_back(parse_type_arg(types[i], version));
    for (size_t i = 0; i < scope_count; ++i) filter.scopes.push_back(scopes[i]);
    auto found = client->client->discover(filter, timeout_of(timeout_ms));
    auto result = std::make_unique<dpws_probe_result>();
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (auto& d : found) {
      nlohmann::ordered_json e;
      e["epr"] = d.advertisement.epr.address;
      std::vector<std::string> t;
      for (const auto& q : d.advertisement.types) t.push_back(q.clark());
      e["types"] = t;
      e["scopes"] = d.advertisement.scopes;
      e["xaddrs"] = d.advertisement.xaddrs;
      e["metadata_version"] = d.advertisement.metadata_version;
      j.push_back(e);
      result->devices.push_back(std::move(d.advertisement));
    }
    result->json = j.dump(2);
    *out = result.release();
  });
}

size_t dpws_probe_result_count(const dpws_probe_result* result) { return result ? result->devices.size() : 0; }

const char* dpws_probe_result_epr(const dpws_probe_result* result, size_t index) {
  if (!result || index >= result->devices.size()) return "";
  return result->devices[index].epr.address.c_str();
}

const char* dpws_probe_result_xaddr(const dpws_probe_result* result, size_t index) {
  if (!result || index >= result->devices.size() || result->devices[index].xaddrs.empty()) return "";
  return result->devices[index].xaddrs.front().c_str();
}

const char* dpws_probe_result_json(const dpws_probe_result* result) { return result ? result->json.c_str() : "[]"; }

void dpws_probe_result_free(dpws_probe_result* result) { delete result; }

namespace {

nlohmann::ordered_json param_json(const std::optional<ParameterDescription>& p) {
  if (!p) return nullptr;
  return {{"element", p->element.local}, {"type", std::string(to_string(p->type))}};
}

std::string remote_json(const RemoteDevice& d) {
  nlohmann::ordered_json j;
  const auto& m = *d.metadata;
  j["epr"] = m.relationship.host.address;
  j["xaddrs"] = d.advertisement.xaddrs;
  j["metadata_version"] = m.metadata_version;
  j["this_model"] = {{"manufacturer", m.this_model.manufacturer},
                     {"model_name", m.this_model.model_name},
                     {"model_number", m.this_model.model_number},
                     {"model_url", m.this_model.model_url},
                     {"presentation_url", m.this_model.presentation_url}};
  j["this_device"] = {{"friendly_name", m.this_device.friendly_name},
                      {"firmware_version", m.this_device.firmware_version},
                      {"serial_number", m.this_device.serial_number}};
  std::vector<std::string> host_types;
  for (const auto& q : m.relationship.host_types) host_types.push_back(q.clark());
  j["types"] = host_types;
  auto services = nlohmann::ordered_json::array();
  for (const auto& s : d.services) {
    nlohmann::ordered_json sj;
    sj["service_id"] = s.service_id;
    sj["address"] = s.address();
    std::vector<std::string> types;
    for (const auto& q : s.types) types.push_back(q.clark());
    sj["types"] = types;
    auto ops = nlohmann::ordered_json::array();
    for (const auto& op : s.description.operations)
      ops.push_back({{"name", op.name}, {"action", op.action}, {"input", param_json(op.input)},
                     {"output", param_json(op.output)}});
    sj["operations"] = ops;
    auto evs = nlohmann::ordered_json::array();
    for (const auto& ev : s.description.events)
      evs.push_back({{"name", ev.name}, {"action", ev.action}, {"payload", param_json(ev.payload)}});
    sj["events"] = evs;
    services.push_back(sj);
  }
  j["services"] = services;
  return j.dump(2);
}

const RemoteService& service_of(const dpws_remote_device* device, const char* service_id) {
  require(device, "device");
  require(service_id, "service_id");
  const RemoteService* s = device->device.find_service(service_id);
  if (!s) fail(ErrorCode::UnknownService, std::string("device has no service '") + service_id + "'");
  return *s;
}

}  // namespace

int dpws_client_open(dpws_client* client, const char* xaddr, int timeout_ms, dpws_remote_device** out) {
  return guard([&] {
    require(client, "client");
    require(xaddr, "xaddr");
    require(out, "out");
    auto r = std::make_unique<dpws_remote_device>();
    r->device = client->client->open(std::string(xaddr), timeout_of(timeout_ms));
    r->json = remote_json(r->device);
    *out = r.release();
  });
}

const char* dpws_remote_device_json(const dpws_remote_device* device) { return device ? device->json.c_str() : "{}"; }

void dpws_remote_device_free(dpws_remote_device* device) { delete device; }

int dpws_client_invoke(dpws_client* client, const dpws_remote_device* device, const char* service_id,
                       const char* operation, const char* input, int timeout_ms, char** output) {
  return guard([&] {
    require(client, "client");
    require(operation, "operation");
    const RemoteService& s = service_of(device, service_id);
    const OperationDescription* op = s.find_operation(operation);
    if (!op) fail(ErrorCode::UnknownOperation, "service '" + s.service_id + "' has no operation '" + operation + "'");
    Value in;
    if (input) {
      if (!op->input) fail(ErrorCode::TypeMismatch, std::string("operation '") + operation + "' takes no input");
      in = decode_value(op->input->type, input, op->input->element.local);
    }
    Value result = client->client->invoke(s, operation, in, timeout_of(timeout_ms));
    if (output) *output = is_absent(result) ? nullptr : dup_string(encode_value(result));
  });
}

int dpws_client_subscribe(dpws_client* client, const dpws_remote_device* device, const char* service_id,
                          const char* event, int expires_s, dpws_notify_fn on_notify, dpws_end_fn on_end, void* user,
                          dpws_subscription** out) {
  return guard([&] {
    require(client, "client");
    require(out, "out");
    const RemoteService& s = service_of(device, service_id);
    std::optional<std::chrono::milliseconds> expires;
    if (expires_s > 0) expires = std::chrono::seconds(expires_s);
    auto sub = client->client->subscribe(
        s, event ? event : "",
        [on_notify, user](const Notification& n) {
          if (!on_notify) return;
          std::string v = encode_value(n.value);
          on_notify(user, n.event.c_str(), n.sequence, is_absent(n.value) ? nullptr : v.c_str());
        },
        [on_end, user](const SubscriptionEndNotice& e) {
          if (on_end) on_end(user, e.status.c_str(), e.reason.c_str());
        },
        expires);
    *out = new dpws_subscription{std::move(sub)};
  });
}

const char* dpws_subscription_id(const dpws_subscription* sub) { return sub ? sub->sub->id().c_str() : ""; }

int dpws_subscription_renew(dpws_subscription* sub, int expires_s, int64_t* granted_ms) {
  return guard([&] {
    require(sub, "sub");
    std::optional<std::chrono::milliseconds> expires;
    if (expires_s > 0) expires = std::chrono::seconds(expires_s);
    auto g = sub->sub->renew(expires);
    if (granted_ms) *granted_ms = g.count();
  });
}

int dpws_subscription_status(dpws_subscription* sub, int64_t* remaining_ms) {
  return guard([&] {
    require(sub, "sub");
    auto r = sub->sub->status();
    if (remaining_ms) *remaining_ms = r.count();
  });
}

int dpws_subscription_unsubscribe(dpws_subscription* sub) {
  return guard([&] {
    require(sub, "sub");
    sub->sub->unsubscribe();
  });
}

void dpws_subscription_free(dpws_subscription* sub) { delete sub; }

int dpws_bench_run(dpws_client* client, const dpws_remote_device* device, const dpws_bench_options* options,
                   dpws_bench_report** out) {
  return guard([&] {
    require(client, "client");
    require(device, "device");
    require(options, "options");
    require(options->operation, "options->operation");
    require(out, "out");
    const RemoteService* service = nullptr;
    if (options->service_id) {
      service = &service_of(device, options->service_id);
    } else {
      for (const auto& s : device->device.services)
        if (s.find_operation(options->operation)) {
          service = &s;
          break;
        }
      if (!service) fail(ErrorCode::UnknownOperation, std::string("no service offers '") + options->operation + "'");
    }
    const OperationDescription* op = service->find_operation(options->operation);
    if (!op) fail(ErrorCode::UnknownOperation, std::string("no operation '") + options->operation + "'");
    BenchOptions b;
    b.n = options->n ? options->n : 500;
    b.concurrency = options->concurrency ? options->concurrency : 1;
    b.operation = options->operation;
    if (options->input) {
      if (!op->input) fail(ErrorCode::TypeMismatch, "operation takes no input");
      b.input = decode_value(op->input->type, options->input, op->input->element.local);
    }
    if (options->expect) {
      if (!op->output) fail(ErrorCode::TypeMismatch, "operation has no output to check");
      b.expect = decode_value(op->output->type, options->expect, op->output->element.local);
    }
    b.timeout = Millis(options->timeout_ms > 0 ? options->timeout_ms : 10000);
    if (options->pid > 0) b.pid = options->pid;
    b.sample_cadence = Millis(options->sample_ms > 0 ? options->sample_ms : 100);
    auto r = std::make_unique<dpws_bench_report>();
    r->report = run_bench(*client->client, *service, b);
    r->json = report_json(r->report);
    r->text = report_text(r->report);
    *out = r.release();
  });
}

int dpws_bench_stats_get(const dpws_bench_report* report, dpws_bench_stats* out) {
  return guard([&] {
    require(report, "report");
    require(out, "out");
    const auto& r = report->report;
    *out = dpws_bench_stats{r.request_count, r.stats.count, r.errors, r.stats.mean, r.stats.median,
                            r.stats.p90,     r.stats.p99,   r.stats.min, r.stats.max, r.total_duration_s,
                            r.throughput_rps};
  });
}

int dpws_bench_write_csv(const dpws_bench_report* report, const char* path) {
  return guard([&] {
    require(report, "report");
    require(path, "path");
    write_csv(report->report, path);
  });
}

const char* dpws_bench_report_json(const dpws_bench_report* report) { return report ? report->json.c_str() : "{}"; }
const char* dpws_bench_report_text(const dpws_bench_report* report) { return report ? report->text.c_str() : ""; }
void dpws_bench_report_free(dpws_bench_report* report) { delete report; }

}  // extern "C"
