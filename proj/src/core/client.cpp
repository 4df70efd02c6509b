#include "core/client.hpp"

#include <spdlog/spdlog.h>

#include <charconv>

#include "core/error.hpp"

namespace dpws {

using xml::Element;
using xml::QName;

namespace {

QName wse(std::string local) { return QName(std::string(ns::kEventing), std::move(local)); }

std::string text_of(const Element& parent, const QName& name) {
  const Element* c = parent.child(name);
  return c ? c->trimmed_text() : std::string();
}

}  // namespace

const RemoteService* RemoteDevice::find_service(std::string_view service_id) const {
  for (const auto& s : services)
    if (s.service_id == service_id) return &s;
  return nullptr;
}

std::shared_ptr<Client> Client::create(ClientOptions options) {
  return std::shared_ptr<Client>(new Client(std::move(options)));
}

Client::Client(ClientOptions options) : options_(std::move(options)) {}

Client::~Client() {
  if (sink_) sink_->stop();
}

std::size_t Client::idle_connections() const {
  std::lock_guard lock(pool_mutex_);
  std::size_t n = 0;
  for (const auto& [origin, conns] : idle_) n += conns.size();
  return n;
}

SoapEnvelope Client::call(const std::string& url, const SoapEnvelope& request, Millis timeout) {
  if (timeout.count() <= 0) fail(ErrorCode::InvalidTimeout, "timeout must be positive");
  Url u = Url::parse(url);
  std::string origin = u.origin();
  std::unique_ptr<HttpConnection> conn;
  {
    std::lock_guard lock(pool_mutex_);
    auto& list = idle_[origin];
    if (!list.empty()) {
      conn = std::move(list.back());
      list.pop_back();
    }
  }
  if (!conn) conn = std::make_unique<HttpConnection>(u);
  HttpExchange ex = conn->post(u.path, serialize_envelope(request), timeout);
  {
    std::lock_guard lock(pool_mutex_);
    auto& list = idle_[origin];
    if (list.size() < options_.max_idle_per_origin) list.push_back(std::move(conn));
  }
  SoapEnvelope response;
  try {
    response = parse_envelope(ex.response_body);
  } catch (const Error& e) {
    fail(ErrorCode::ProtocolError, "HTTP " + std::to_string(ex.status) + " from " + url + ": " + e.what());
  }
  if (auto fault = read_fault(response)) throw FaultError(fault->code, fault->subcode, fault->reason);
  return response;
}

std::vector<RemoteDevice> Client::discover(const ProbeFilter& filter, Millis timeout) {
  ProbeOptions opts = options_.probe;
  opts.version = options_.version;
  std::vector<RemoteDevice> out;
  for (auto& adv : probe(filter, timeout, opts)) out.push_back(RemoteDevice{std::move(adv), std::nullopt, {}});
  return out;
}

RemoteDevice Client::open(const RemoteDevice& device, Millis timeout) {
  if (timeout.count() <= 0) fail(ErrorCode::InvalidTimeout, "timeout must be positive");
  RemoteDevice out = device;
  if (out.advertisement.xaddrs.empty()) {
    ProbeOptions opts = options_.probe;
    opts.version = options_.version;
    auto resolved = resolve(out.advertisement.epr.address, timeout, opts);
    if (!resolved || resolved->xaddrs.empty())
      fail(ErrorCode::NoTransportAddress, "no transport address for " + out.advertisement.epr.address);
    out.advertisement.xaddrs = resolved->xaddrs;
  }

  const auto& p = VersionProfile::get(options_.version);
  std::optional<Error> last;
  for (const auto& xaddr : out.advertisement.xaddrs) {
    try {
      SoapEnvelope get = make_request(options_.version, action::kTransferGet, xaddr);
      get.addressing.reply_to = EndpointReference{p.wsa_anonymous, {}};
      out.metadata = parse_metadata_response(call(xaddr, get, timeout));
      break;
    } catch (const FaultError&) {
      throw;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::MalformedMetadata) throw;
      last = e;
    }
  }
  if (!out.metadata) throw *last;

  out.services.clear();
  for (const auto& hosted : out.metadata->relationship.hosted) {
    SoapEnvelope req = make_request(options_.version, action::kMexGetMetadata, hosted.epr.address);
    req.addressing.reply_to = EndpointReference{p.wsa_anonymous, {}};
    address_to(req, hosted.epr);
    ServiceDescription desc = parse_description_response(call(hosted.epr.address, req, timeout));
    if (desc.service_id != hosted.service_id)
      fail(ErrorCode::MalformedMetadata, "description for '" + hosted.service_id + "' names service '" +
                                             desc.service_id + "'");
    out.services.push_back(RemoteService{hosted.epr, hosted.service_id, hosted.types, std::move(desc)});
  }
  return out;
}

RemoteDevice Client::open(const std::string& xaddr, Millis timeout) {
  RemoteDevice dev;
  dev.advertisement.xaddrs = {xaddr};
  dev = open(dev, timeout);
  dev.advertisement.epr = dev.metadata->relationship.host;
  dev.advertisement.types = dev.metadata->relationship.host_types;
  dev.advertisement.metadata_version = dev.metadata->metadata_version;
  return dev;
}

Value Client::invoke(const RemoteService& service, const std::string& operation, const Value& input, Millis timeout) {
  const OperationDescription* op = service.find_operation(operation);
  if (!op) fail(ErrorCode::UnknownOperation, "service '" + service.service_id + "' has no operation '" + operation + "'");
  if (!op->input && !is_absent(input)) fail(ErrorCode::TypeMismatch, "operation '" + operation + "' takes no input");
  if (op->input && type_of(input) != op->input->type)
    fail(ErrorCode::TypeMismatch, "operation '" + operation + "' expects " + std::string(to_string(op->input->type)) +
                                      " input, got " + (is_absent(input) ? std::string("none")
                                                                          : std::string(to_string(*type_of(input)))));
  if (timeout.count() <= 0) fail(ErrorCode::InvalidTimeout, "timeout must be positive");

  const auto& d = service.description;
  auto types = d.types();
  std::optional<std::string> in_name, out_name;
  if (op->input) in_name = op->input->element.local;
  if (op->output) out_name = op->output->element.local;

  SoapEnvelope req = make_request(options_.version, op->action, service.address(),
                                  encode_payload(d.ns, op->name, in_name, types, input));
  req.addressing.reply_to = EndpointReference{VersionProfile::get(options_.version).wsa_anonymous, {}};
  address_to(req, service.epr);
  SoapEnvelope res = call(service.address(), req, timeout);
  if (!res.body || res.body->name != QName(d.ns, op->name + "Response"))
    fail(ErrorCode::ProtocolError, "unexpected response body for '" + operation + "'");
  return decode_payload(*res.body, out_name, types, d.ns, false);
}

EventSink& Client::sink(const std::string& peer_host) {
  std::lock_guard lock(sink_mutex_);
  if (!sink_) {
    std::string host = options_.sink_host.empty() ? local_address_for(peer_host) : options_.sink_host;
    auto s = std::make_unique<EventSink>(host, options_.sink_bind_host);
    s->start();
    sink_ = std::move(s);
  }
  return *sink_;
}

void Client::release_sink(const std::string& key) {
  std::lock_guard lock(sink_mutex_);
  if (sink_) sink_->remove(key);
}

std::shared_ptr<ClientSubscription> Client::subscribe(const RemoteService& service, const std::string& event,
                                                      NotificationHandler on_notification, EndHandler on_end,
                                                      std::optional<std::chrono::milliseconds> expires,
                                                      Millis timeout) {
  const ServiceDescription& d = service.description;
  const EventDescription* ev = nullptr;
  if (!event.empty()) {
    ev = d.find_event(event);
    if (!ev) fail(ErrorCode::UnknownEvent, "service '" + service.service_id + "' has no event '" + event + "'");
  }
  if (expires && expires->count() <= 0) fail(ErrorCode::InvalidExpiry, "requested expiry must be positive");
  if (timeout.count() <= 0) fail(ErrorCode::InvalidTimeout, "timeout must be positive");

  EventSink& s = sink(Url::parse(service.address()).host);
  auto sub = std::shared_ptr<ClientSubscription>(new ClientSubscription());
  sub->owner_ = shared_from_this();
  sub->version_ = options_.version;
  sub->ended_ = std::make_shared<std::atomic<bool>>(false);
  std::string key = new_message_id().substr(9);
  sub->sink_key_ = key;

  auto types = d.types();
  auto ended = sub->ended_;
  EventSink::Handlers handlers;
  handlers.on_notification = [d, types, on_notification](const SoapEnvelope& env) {
    Notification n;
    n.action = env.addressing.action;
    if (const Element* h = env.header(subscription_id_header())) n.subscription_id = h->trimmed_text();
    if (const Element* h = env.header(sequence_header())) {
      auto t = h->trimmed_text();
      std::from_chars(t.data(), t.data() + t.size(), n.sequence);
    }
    for (const auto& e : d.events) {
      if (e.action != n.action) continue;
      n.event = e.name;
      if (env.body) {
        try {
          n.value = decode_payload(*env.body, e.payload.element.local, types, d.ns, false);
        } catch (const Error& err) {
          spdlog::warn("notification {} payload: {}", n.action, err.what());
        }
      }
    }
    if (on_notification) on_notification(n);
  };
  handlers.on_end = [ended, on_end](const SoapEnvelope& env) {
    if (ended->exchange(true)) return;
    SubscriptionEndNotice notice;
    if (const Element* h = env.header(subscription_id_header())) notice.subscription_id = h->trimmed_text();
    if (env.body) {
      notice.status = text_of(*env.body, wse("Status"));
      notice.reason = text_of(*env.body, wse("Reason"));
    }
    if (on_end) on_end(notice);
  };
  std::string sink_address = s.add(key, std::move(handlers));

  const auto& p = VersionProfile::get(options_.version);
  Element body(wse("Subscribe"));
  body.add(epr_to_xml(EndpointReference{sink_address, {}}, wse("EndTo"), p));
  Element& delivery = body.add(Element(wse("Delivery")));
  delivery.set_attribute(QName({}, "Mode"), action::kPushDelivery);
  delivery.add(epr_to_xml(EndpointReference{sink_address, {}}, wse("NotifyTo"), p));
  if (expires) body.add(wse("Expires"), format_duration(*expires));
  if (ev) {
    Element& filter = body.add(wse("Filter"), ev->action);
    filter.set_attribute(QName({}, "Dialect"), p.action_filter_dialect());
  }
  SoapEnvelope req = make_request(options_.version, action::kSubscribe, service.address(), std::move(body));
  req.addressing.reply_to = EndpointReference{p.wsa_anonymous, {}};
  address_to(req, service.epr);

  try {
    SoapEnvelope res = call(service.address(), req, timeout);
    if (!res.body || res.body->name != wse("SubscribeResponse"))
      fail(ErrorCode::ProtocolError, "unexpected Subscribe response");
    const Element* mgr = res.body->child(wse("SubscriptionManager"));
    if (!mgr) fail(ErrorCode::ProtocolError, "SubscribeResponse without SubscriptionManager");
    sub->manager_ = epr_from_xml(*mgr, p);
    for (const auto& param : sub->manager_.reference_parameters)
      if (param.name == identifier_qname()) sub->id_ = param.trimmed_text();
    if (const Element* e = res.body->child(wse("Expires"))) sub->granted_ = requested_lifetime(e->text, SystemClock::now());
  } catch (...) {
    s.remove(key);
    throw;
  }
  return sub;
}

ClientSubscription::~ClientSubscription() {
  if (!owner_) return;
  owner_->release_sink(sink_key_);
}

bool ClientSubscription::ended() const { return ended_ && *ended_; }

SoapEnvelope ClientSubscription::request(const std::string& action, Element body, Millis timeout) {
  SoapEnvelope req = make_request(version_, action, manager_.address, std::move(body));
  req.addressing.reply_to = EndpointReference{VersionProfile::get(version_).wsa_anonymous, {}};
  address_to(req, manager_);
  return owner_->call(manager_.address, req, timeout);
}

std::chrono::milliseconds ClientSubscription::renew(std::optional<std::chrono::milliseconds> expires, Millis timeout) {
  Element body(wse("Renew"));
  if (expires) body.add(wse("Expires"), format_duration(*expires));
  SoapEnvelope res = request(action::kRenew, std::move(body), timeout);
  if (res.body)
    if (const Element* e = res.body->child(wse("Expires"))) granted_ = requested_lifetime(e->text, SystemClock::now());
  return granted_;
}

std::chrono::milliseconds ClientSubscription::status(Millis timeout) {
  SoapEnvelope res = request(action::kGetStatus, Element(wse("GetStatus")), timeout);
  if (!res.body) fail(ErrorCode::ProtocolError, "GetStatusResponse without body");
  const Element* e = res.body->child(wse("Expires"));
  if (!e) fail(ErrorCode::ProtocolError, "GetStatusResponse without Expires");
  return requested_lifetime(e->text, SystemClock::now());
}

void ClientSubscription::unsubscribe(Millis timeout) {
  request(action::kUnsubscribe, Element(wse("Unsubscribe")), timeout);
  *ended_ = true;
  owner_->release_sink(sink_key_);
}

}  // namespace dpws
