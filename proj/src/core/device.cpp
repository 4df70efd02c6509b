#include "core/device.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <condition_variable>

#include "core/error.hpp"

namespace dpws {

using xml::Element;
using xml::QName;

namespace {

QName ext(std::string local) { return QName(std::string(ns::kExt), std::move(local)); }

bool is_absolute_iri(std::string_view s) {
  auto colon = s.find(':');
  if (colon == std::string_view::npos || colon == 0) return false;
  if (!std::isalpha(static_cast<unsigned char>(s[0]))) return false;
  for (std::size_t i = 1; i < colon; ++i) {
    char c = s[i];
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.')) return false;
  }
  return s.find_first_of(" \t\r\n") == std::string_view::npos;
}

[[noreturn]] void bad_config(const std::string& field, const std::string& why) {
  fail(ErrorCode::InvalidConfig, "device." + field + ": " + why);
}

struct Pending {
  std::mutex m;
  std::condition_variable cv;
  bool done = false;
  bool abandoned = false;
  Completion::Outcome outcome;
};

}  // namespace

std::string normalize_uuid(std::string_view address) {
  if (address.rfind("urn:uuid:", 0) == 0) address.remove_prefix(9);
  if (!is_uuid(address)) return {};
  std::string out(address);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

void validate_config(const DeviceConfig& c) {
  if (normalize_uuid(c.address).empty()) bad_config("address", "'" + c.address + "' is not a UUID");
  if (c.http_port < 1 || c.http_port > 65535)
    bad_config("http_port", std::to_string(c.http_port) + " is outside 1..65535");
  if (c.this_model.manufacturer.empty()) bad_config("manufacturer", "must not be empty");
  if (c.this_model.model_name.empty()) bad_config("model_name", "must not be empty");
  if (c.this_device.friendly_name.empty()) bad_config("friendly_name", "must not be empty");
  if (!c.this_model.model_url.empty() && !is_absolute_iri(c.this_model.model_url))
    bad_config("model_url", "'" + c.this_model.model_url + "' is not an absolute URL");
  if (!c.this_model.presentation_url.empty() && !is_absolute_iri(c.this_model.presentation_url))
    bad_config("presentation_url", "'" + c.this_model.presentation_url + "' is not an absolute URL");
  for (const auto& s : c.scopes)
    if (!is_absolute_iri(s)) bad_config("scopes", "'" + s + "' is not an absolute IRI");
  for (const auto& t : c.types)
    if (t.ns.empty() || !xml::is_valid_local_name(t.local)) bad_config("types", "'" + t.clark() + "' is not a QName");
  if (c.handler_timeout.count() <= 0) bad_config("handler_timeout", "must be positive");
}

struct HostedEntry {
  ServiceDefinition def;
  std::unique_ptr<SubscriptionManager> manager;
  std::mutex serial;
};

struct Device::Core : std::enable_shared_from_this<Device::Core> {
  DeviceConfig config;
  std::string uuid;
  std::string host;
  ClockFn clock;

  mutable std::mutex mutex;
  std::mutex lifecycle;
  std::map<std::string, std::shared_ptr<HostedEntry>> services;
  std::vector<std::string> order;
  std::uint64_t metadata_version = 0;
  std::shared_ptr<const DeviceMetadata> snapshot;
  bool started = false;

  std::unique_ptr<HttpServer> http;
  std::unique_ptr<Responder> responder;
  std::unique_ptr<Scheduler> timers;
  std::thread announcer;

  std::string base_url() const { return "http://" + host + ":" + std::to_string(config.http_port); }
  std::string device_path() const { return "/" + uuid; }
  std::string service_path(const std::string& id) const { return "/" + uuid + "/" + id; }
  std::string epr_address() const { return "urn:uuid:" + uuid; }

  std::vector<QName> device_types() const {
    std::vector<QName> types = config.types;
    QName device(VersionProfile::get(config.version).dpws, "Device");
    if (std::find(types.begin(), types.end(), device) == types.end()) types.insert(types.begin(), device);
    return types;
  }

  DeviceAdvertisement advertisement_locked() const {
    DeviceAdvertisement adv;
    adv.epr.address = epr_address();
    adv.types = device_types();
    adv.scopes = config.scopes;
    adv.xaddrs = {base_url() + device_path()};
    adv.metadata_version = metadata_version;
    return adv;
  }

  void rebuild_locked() {
    auto meta = std::make_shared<DeviceMetadata>();
    meta->this_model = config.this_model;
    meta->this_device = config.this_device;
    meta->relationship.host.address = epr_address();
    meta->relationship.host_types = device_types();
    for (const auto& id : order) {
      const auto& def = services.at(id)->def;
      HostedService h;
      h.epr.address = base_url() + service_path(id);
      h.types = {def.port_type_qname()};
      h.service_id = id;
      meta->relationship.hosted.push_back(std::move(h));
    }
    meta->metadata_version = metadata_version;
    snapshot = std::move(meta);
  }

  std::shared_ptr<const DeviceMetadata> current() const {
    std::lock_guard lock(mutex);
    return snapshot;
  }

  std::shared_ptr<HostedEntry> find_service(const std::string& id) const {
    std::lock_guard lock(mutex);
    auto it = services.find(id);
    return it == services.end() ? nullptr : it->second;
  }

  void announce_async(const DeviceAdvertisement& adv) {
    if (announcer.joinable()) announcer.join();
    std::weak_ptr<Core> weak = shared_from_this();
    announcer = std::thread([weak, adv] {
      auto self = weak.lock();
      if (!self || !self->responder) return;
      try {
        self->responder->announce_hello(adv);
      } catch (const std::exception& e) {
        spdlog::warn("Hello for {} failed: {}", adv.epr.address, e.what());
      }
    });
  }

  HttpResponse serve(const HttpRequest& req);
  SoapEnvelope dispatch(const SoapEnvelope& request, std::string path);
  SoapEnvelope invoke(const SoapEnvelope& request, HostedEntry& entry, const OperationDefinition& op);
};

HttpResponse Device::Core::serve(const HttpRequest& req) {
  HttpResponse res;
  if (req.method == "GET") {
    if (req.path == "/" && !config.this_model.presentation_url.empty()) {
      res.status = 302;
      res.location = config.this_model.presentation_url;
      res.body.clear();
    } else {
      res.status = 404;
      res.content_type = "text/plain";
      res.body = "not found\n";
    }
    return res;
  }
  SoapEnvelope response;
  try {
    SoapEnvelope request = parse_envelope(req.body);
    response = dispatch(request, req.path);
  } catch (const Error& e) {
    const auto& p = VersionProfile::get(config.version);
    QName sub = e.code() == ErrorCode::MissingAction ? QName(p.wsa, "MessageAddressingHeaderRequired")
                                                     : ext("MalformedMessage");
    response = make_fault(config.version, "s:Sender", sub, e.what());
    res.status = 400;
  }
  if (response.is_fault && res.status == 200) res.status = 500;
  res.body = serialize_envelope(response);
  return res;
}

SoapEnvelope Device::Core::dispatch(const SoapEnvelope& request, std::string path) {
  while (path.size() > 1 && path.back() == '/') path.pop_back();
  const auto& p = request.profile();
  const auto& action = request.addressing.action;
  try {
    if (path == device_path()) return build_metadata_response(request, *current());

    std::string prefix = device_path() + "/";
    std::shared_ptr<HostedEntry> entry;
    if (path.rfind(prefix, 0) == 0) entry = find_service(path.substr(prefix.size()));
    if (!entry)
      return make_fault(request, "s:Sender", QName(p.wsa, "DestinationUnreachable"), "no service at " + path);

    if (action == action::kMexGetMetadata) return build_description_response(request, entry->def);
    if (SubscriptionManager::is_eventing_action(action)) {
      if (!entry->manager)
        return make_fault(request, "s:Sender", QName(p.wsa, "ActionNotSupported"),
                          "service '" + entry->def.service_id + "' declares no events");
      return entry->manager->handle(request);
    }
    for (const auto& op : entry->def.operations)
      if (entry->def.action_for(op.name) == action) return invoke(request, *entry, op);
    return make_fault(request, "s:Sender", QName(p.wsa, "ActionNotSupported"),
                      "action not supported by service '" + entry->def.service_id + "': " + action);
  } catch (const Error& e) {
    spdlog::error("dispatch of {} failed: {}", action, e.what());
    return make_fault(request, "s:Receiver", ext("InternalError"), e.what());
  }
}

SoapEnvelope Device::Core::invoke(const SoapEnvelope& request, HostedEntry& entry, const OperationDefinition& op) {
  const ServiceDefinition& def = entry.def;
  Value input;
  try {
    if (!request.body || request.body->name != QName(def.ns, op.name))
      fail(ErrorCode::TypeMismatch, "expected body element '" + op.name + "' in " + def.ns);
    input = decode_payload(*request.body, op.input, def.types, def.ns, config.strict_input);
  } catch (const Error& e) {
    return make_fault(request, "s:Sender", ext("TypeMismatch"), e.what());
  }

  std::unique_lock<std::mutex> serial(entry.serial, std::defer_lock);
  if (def.serialized) serial.lock();

  auto pending = std::make_shared<Pending>();
  std::string label = def.service_id + "/" + op.name;
  Completion done([pending, label](Completion::Outcome o) {
    std::lock_guard lock(pending->m);
    if (pending->abandoned) {
      spdlog::warn("late completion of {} discarded", label);
      return;
    }
    pending->outcome = std::move(o);
    pending->done = true;
    pending->cv.notify_all();
  });
  try {
    op.handler(input, done);
  } catch (const std::exception& e) {
    if (!done.completed()) done.fail(e.what());
    else spdlog::error("handler {} threw after completing: {}", label, e.what());
  }

  Completion::Outcome outcome;
  {
    std::unique_lock lock(pending->m);
    if (!pending->cv.wait_for(lock, config.handler_timeout, [&] { return pending->done; })) {
      pending->abandoned = true;
      return make_fault(request, "s:Receiver", ext("HandlerTimeout"),
                        "operation " + op.name + " did not complete within " +
                            std::to_string(config.handler_timeout.count()) + " ms");
    }
    outcome = std::move(pending->outcome);
  }
  if (!outcome.ok) return make_fault(request, "s:Receiver", ext("HandlerError"), outcome.error);
  try {
    Element body = encode_payload(def.ns, op.name + "Response", op.output, def.types, outcome.value);
    return make_reply(request, def.response_action_for(op.name), std::move(body));
  } catch (const Error& e) {
    return make_fault(request, "s:Receiver", ext("TypeMismatch"), std::string("handler output: ") + e.what());
  }
}

Device::Device(DeviceConfig config) : core_(std::make_shared<Core>()) {
  validate_config(config);
  core_->uuid = normalize_uuid(config.address);
  core_->host = config.advertise_host.empty() ? default_host_address() : config.advertise_host;
  core_->clock = config.clock ? config.clock : ClockFn([] { return SystemClock::now(); });
  core_->metadata_version = config.metadata_version;
  core_->config = std::move(config);
  core_->rebuild_locked();
}

Device::~Device() { stop(); }

void Device::add_service(ServiceDefinition service) {
  validate_service(service);
  auto entry = std::make_shared<HostedEntry>();
  std::vector<std::string> actions;
  for (const auto& ev : service.events) actions.push_back(service.event_action(ev.name));
  std::optional<DeviceAdvertisement> reannounce;
  {
    std::lock_guard lock(core_->mutex);
    if (core_->services.count(service.service_id))
      fail(ErrorCode::DuplicateServiceId, "service id '" + service.service_id + "' already registered");
    if (!actions.empty())
      entry->manager = std::make_unique<SubscriptionManager>(
          core_->base_url() + core_->service_path(service.service_id), std::move(actions), core_->config.eventing,
          core_->clock);
    std::string id = service.service_id;
    entry->def = std::move(service);
    core_->services[id] = entry;
    core_->order.push_back(id);
    if (core_->started) {
      ++core_->metadata_version;
      reannounce = core_->advertisement_locked();
    }
    core_->rebuild_locked();
  }
  if (reannounce && core_->responder) {
    std::lock_guard life(core_->lifecycle);
    core_->responder->add(*reannounce);
    core_->announce_async(*reannounce);
  }
}

void Device::start() {
  std::lock_guard life(core_->lifecycle);
  auto& c = *core_;
  if (c.started) fail(ErrorCode::AlreadyStarted, "device already started");

  HttpServerOptions opts;
  opts.host = c.config.bind_host;
  opts.port = static_cast<std::uint16_t>(c.config.http_port);
  opts.drain_window = c.config.drain_window;
  std::weak_ptr<Core> weak = core_;
  auto http = std::make_unique<HttpServer>(
      [weak](const HttpRequest& req) {
        auto self = weak.lock();
        if (!self) return HttpResponse{503, {}, "text/plain", {}};
        return self->serve(req);
      },
      opts);
  http->start();

  std::unique_ptr<Responder> responder;
  if (c.config.discovery_enabled) {
    DiscoveryOptions dopts;
    dopts.endpoint = c.config.discovery;
    dopts.multicast_policy = c.config.multicast_policy;
    dopts.version = c.config.version;
    responder = std::make_unique<Responder>(dopts);
    try {
      responder->start();
    } catch (...) {
      http->stop();
      throw;
    }
  }

  DeviceAdvertisement adv;
  {
    std::lock_guard lock(c.mutex);
    c.http = std::move(http);
    c.responder = std::move(responder);
    c.started = true;
    adv = c.advertisement_locked();
  }
  c.timers = std::make_unique<Scheduler>();
  c.timers->every(std::chrono::seconds(1), [weak] {
    if (auto self = weak.lock()) {
      std::vector<std::shared_ptr<HostedEntry>> entries;
      {
        std::lock_guard lock(self->mutex);
        for (auto& [id, e] : self->services) entries.push_back(e);
      }
      for (auto& e : entries)
        if (e->manager) e->manager->expire(self->clock());
    }
  });
  if (c.responder) {
    c.responder->add(adv);
    c.announce_async(adv);
  }
  spdlog::info("device {} listening on {}", c.epr_address(), adv.xaddrs.front());
}

void Device::stop() {
  if (!core_) return;
  std::lock_guard life(core_->lifecycle);
  auto& c = *core_;
  if (!c.started) return;
  if (c.announcer.joinable()) c.announcer.join();
  if (c.responder) {
    try {
      c.responder->announce_bye(EndpointReference{c.epr_address(), {}});
    } catch (const std::exception& e) {
      spdlog::warn("Bye failed: {}", e.what());
    }
  }
  std::vector<std::shared_ptr<HostedEntry>> entries;
  {
    std::lock_guard lock(c.mutex);
    for (auto& [id, e] : c.services) entries.push_back(e);
  }
  for (auto& e : entries)
    if (e->manager) e->manager->end_all(action::kSourceShuttingDown, "device is shutting down");
  if (c.timers) c.timers->stop();
  c.http->stop();
  if (c.responder) c.responder->stop();
  std::lock_guard lock(c.mutex);
  c.timers.reset();
  c.http.reset();
  c.responder.reset();
  c.started = false;
  spdlog::info("device {} stopped", c.epr_address());
}

bool Device::running() const {
  std::lock_guard lock(core_->mutex);
  return core_->started;
}

std::uint16_t Device::port() const { return static_cast<std::uint16_t>(core_->config.http_port); }
std::string Device::uuid() const { return core_->uuid; }
std::string Device::epr_address() const { return core_->epr_address(); }

std::vector<std::string> Device::xaddrs() const {
  std::lock_guard lock(core_->mutex);
  return core_->advertisement_locked().xaddrs;
}

std::string Device::service_path(const std::string& id) const { return core_->service_path(id); }

std::string Device::service_address(const std::string& id) const {
  return core_->base_url() + core_->service_path(id);
}

DeviceMetadata Device::metadata() const { return *core_->current(); }

DeviceAdvertisement Device::advertisement() const {
  std::lock_guard lock(core_->mutex);
  return core_->advertisement_locked();
}

std::vector<std::string> Device::service_ids() const {
  std::lock_guard lock(core_->mutex);
  return core_->order;
}

const DeviceConfig& Device::config() const { return core_->config; }

DeliverySummary Device::emit(const std::string& service_id, const std::string& event, const Value& payload) {
  auto entry = core_->find_service(service_id);
  if (!entry) fail(ErrorCode::UnknownService, "no service '" + service_id + "'");
  const auto* ev = entry->def.find_event(event);
  if (!ev) fail(ErrorCode::UnknownEvent, "service '" + service_id + "' has no event '" + event + "'");
  Element body = encode_payload(entry->def.ns, ev->name, ev->payload, entry->def.types, payload);
  return entry->manager->emit(entry->def.event_action(ev->name), body);
}

PrimitiveType Device::event_payload_type(const std::string& service_id, const std::string& event) const {
  auto entry = core_->find_service(service_id);
  if (!entry) fail(ErrorCode::UnknownService, "no service '" + service_id + "'");
  const auto* ev = entry->def.find_event(event);
  if (!ev) fail(ErrorCode::UnknownEvent, "service '" + service_id + "' has no event '" + event + "'");
  return entry->def.types.at(ev->payload);
}

std::size_t Device::expire_subscriptions() {
  std::vector<std::shared_ptr<HostedEntry>> entries;
  {
    std::lock_guard lock(core_->mutex);
    for (auto& [id, e] : core_->services) entries.push_back(e);
  }
  std::size_t n = 0;
  for (auto& e : entries)
    if (e->manager) n += e->manager->expire(core_->clock());
  return n;
}

SubscriptionManager* Device::subscriptions(const std::string& service_id) {
  auto entry = core_->find_service(service_id);
  return entry ? entry->manager.get() : nullptr;
}

SoapEnvelope Device::dispatch(const SoapEnvelope& request, const std::string& path) {
  return core_->dispatch(request, path);
}

}  // namespace dpws
