#include "core/eventing.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <thread>

#include "core/error.hpp"

namespace dpws {

using xml::Element;
using xml::QName;
using namespace std::chrono;

namespace {

QName wse(std::string local) { return QName(std::string(ns::kEventing), std::move(local)); }
QName plain(std::string local) { return QName({}, std::move(local)); }

[[noreturn]] void bad_expiry(std::string_view text, const std::string& why) {
  fail(ErrorCode::InvalidExpiry, "invalid expiry '" + std::string(text) + "': " + why);
}

bool read_number(std::string_view& s, double& out) {
  std::size_t i = 0;
  while (i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '.')) ++i;
  if (i == 0) return false;
  auto r = std::from_chars(s.data(), s.data() + i, out);
  if (r.ec != std::errc{} || r.ptr != s.data() + i) return false;
  s.remove_prefix(i);
  return true;
}

int read_fixed(std::string_view text, std::size_t pos, std::size_t len) {
  if (pos + len > text.size()) bad_expiry(text, "truncated dateTime");
  int v = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    if (!std::isdigit(static_cast<unsigned char>(text[i]))) bad_expiry(text, "bad digit in dateTime");
    v = v * 10 + (text[i] - '0');
  }
  return v;
}

}  // namespace

milliseconds parse_duration(std::string_view text) {
  std::string_view s = text;
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  bool negative = false;
  if (!s.empty() && s.front() == '-') {
    negative = true;
    s.remove_prefix(1);
  }
  if (s.empty() || s.front() != 'P') bad_expiry(text, "duration must start with P");
  s.remove_prefix(1);
  double total_s = 0;
  bool in_time = false, any = false;
  std::string_view order_date = "YMD", order_time = "HMS";
  std::size_t date_pos = 0, time_pos = 0;
  while (!s.empty()) {
    if (s.front() == 'T') {
      if (in_time) bad_expiry(text, "repeated T");
      in_time = true;
      s.remove_prefix(1);
      if (s.empty()) bad_expiry(text, "empty time part");
      continue;
    }
    double v = 0;
    if (!read_number(s, v) || s.empty()) bad_expiry(text, "expected number and designator");
    char unit = s.front();
    s.remove_prefix(1);
    auto& order = in_time ? order_time : order_date;
    auto& pos = in_time ? time_pos : date_pos;
    auto at = order.find(unit, pos);
    if (at == std::string_view::npos) bad_expiry(text, std::string("unexpected designator '") + unit + "'");
    pos = at + 1;
    if (unit != 'S' && std::floor(v) != v) bad_expiry(text, "only seconds may be fractional");
    if (!in_time) {
      total_s += v * (unit == 'Y' ? 365 * 86400.0 : unit == 'M' ? 30 * 86400.0 : 86400.0);
    } else {
      total_s += v * (unit == 'H' ? 3600.0 : unit == 'M' ? 60.0 : 1.0);
    }
    any = true;
  }
  if (!any) bad_expiry(text, "no components");
  if (total_s > 1e12) bad_expiry(text, "too large");
  auto ms = milliseconds(static_cast<long long>(std::llround(total_s * 1000)));
  return negative ? -ms : ms;
}

std::string format_duration(milliseconds d) {
  std::string out = d.count() < 0 ? "-PT" : "PT";
  long long ms = std::llabs(d.count());
  out += std::to_string(ms / 1000);
  if (ms % 1000) {
    char frac[8];
    std::snprintf(frac, sizeof(frac), ".%03lld", ms % 1000);
    std::string f = frac;
    while (f.back() == '0') f.pop_back();
    out += f;
  }
  return out + "S";
}

TimePoint parse_datetime(std::string_view text) {
  // YYYY-MM-DDThh:mm:ss[.fff][Z|(+|-)hh:mm]
  if (text.size() < 19 || text[4] != '-' || text[7] != '-' || text[10] != 'T' || text[13] != ':' || text[16] != ':')
    bad_expiry(text, "not an xs:dateTime");
  int y = read_fixed(text, 0, 4), mo = read_fixed(text, 5, 2), d = read_fixed(text, 8, 2);
  int h = read_fixed(text, 11, 2), mi = read_fixed(text, 14, 2), sec = read_fixed(text, 17, 2);
  year_month_day ymd{year(y), month(static_cast<unsigned>(mo)), day(static_cast<unsigned>(d))};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 59) bad_expiry(text, "field out of range");
  std::size_t pos = 19;
  milliseconds frac{0};
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    std::size_t start = pos;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
    if (pos == start) bad_expiry(text, "empty fraction");
    std::string digits(text.substr(start, std::min<std::size_t>(3, pos - start)));
    while (digits.size() < 3) digits += '0';
    frac = milliseconds(std::stoi(digits));
  }
  minutes offset{0};
  if (pos < text.size()) {
    if (text[pos] == 'Z' && pos + 1 == text.size()) {
      pos++;
    } else if ((text[pos] == '+' || text[pos] == '-') && pos + 6 == text.size() && text[pos + 3] == ':') {
      int oh = read_fixed(text, pos + 1, 2), om = read_fixed(text, pos + 4, 2);
      offset = minutes(oh * 60 + om) * (text[pos] == '-' ? -1 : 1);
    } else {
      bad_expiry(text, "bad zone");
    }
  }
  auto tp = sys_days(ymd) + hours(h) + minutes(mi) + seconds(sec) + frac - offset;
  return time_point_cast<SystemClock::duration>(tp);
}

std::string format_datetime(TimePoint t) {
  auto ms = time_point_cast<milliseconds>(t);
  auto dp = floor<days>(ms);
  year_month_day ymd{dp};
  hh_mm_ss hms{ms - dp};
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", int(ymd.year()), unsigned(ymd.month()),
                unsigned(ymd.day()), int(hms.hours().count()), int(hms.minutes().count()),
                int(hms.seconds().count()), int(hms.subseconds().count()));
  return buf;
}

milliseconds requested_lifetime(std::string_view expires, TimePoint now) {
  auto t = expires;
  while (!t.empty() && std::isspace(static_cast<unsigned char>(t.front()))) t.remove_prefix(1);
  if (t.rfind("P", 0) == 0 || t.rfind("-P", 0) == 0) return parse_duration(t);
  return duration_cast<milliseconds>(parse_datetime(t) - now);
}

std::string_view to_string(SubscriptionStatus s) {
  switch (s) {
    case SubscriptionStatus::Active: return "active";
    case SubscriptionStatus::Cancelled: return "cancelled";
    case SubscriptionStatus::Expired: return "expired";
  }
  return "?";
}

bool Subscription::admits(const std::string& action) const {
  return filter.empty() || std::find(filter.begin(), filter.end(), action) != filter.end();
}

DeliveryTransport default_delivery_transport() {
  return [](const std::string& url, const std::string& body, Millis timeout) {
    return http_post(url, body, timeout).status;
  };
}

std::size_t DeliverySummary::delivered() const {
  return static_cast<std::size_t>(std::count_if(results.begin(), results.end(), [](auto& r) { return r.ok; }));
}

std::size_t DeliverySummary::failed() const { return results.size() - delivered(); }

QName subscription_id_header() { return QName(std::string(ns::kExt), "SubscriptionId"); }
QName sequence_header() { return QName(std::string(ns::kExt), "NotificationSequence"); }
QName identifier_qname() { return wse("Identifier"); }

struct SubscriptionManager::Entry {
  Subscription sub;
  TimePoint ended_at{};
  std::mutex delivery;
};

SubscriptionManager::SubscriptionManager(std::string manager_address, std::vector<std::string> event_actions,
                                         EventingOptions options, ClockFn clock, DeliveryTransport transport)
    : address_(std::move(manager_address)),
      actions_(std::move(event_actions)),
      options_(options),
      clock_(clock ? std::move(clock) : ClockFn([] { return SystemClock::now(); })),
      transport_(transport ? std::move(transport) : default_delivery_transport()) {}

SubscriptionManager::~SubscriptionManager() = default;

bool SubscriptionManager::is_eventing_action(const std::string& a) {
  return a == action::kSubscribe || a == action::kRenew || a == action::kGetStatus || a == action::kUnsubscribe;
}

milliseconds SubscriptionManager::grant(milliseconds requested) const {
  return std::min<milliseconds>(requested, duration_cast<milliseconds>(options_.max_grant));
}

SoapEnvelope SubscriptionManager::handle(const SoapEnvelope& request) {
  const auto& a = request.addressing.action;
  try {
    if (a == action::kSubscribe) return subscribe(request);
    if (!is_eventing_action(a))
      return make_fault(request, "s:Sender", QName(request.profile().wsa, "ActionNotSupported"),
                        "not a subscription manager action: " + a);
    auto entry = lookup(request);
    std::unique_lock lock(mutex_);
    Subscription& sub = entry->sub;
    if (a == action::kGetStatus) {
      auto remaining = duration_cast<milliseconds>(sub.expires_at - clock_());
      Element body(wse("GetStatusResponse"));
      body.add(wse("Expires"), format_duration(std::max(remaining, milliseconds(0))));
      return make_reply(request, action::kGetStatusResponse, std::move(body));
    }
    if (a == action::kUnsubscribe) {
      sub.status = SubscriptionStatus::Cancelled;
      entry->ended_at = clock_();
      lock.unlock();
      spdlog::debug("subscription {} unsubscribed", sub.id);
      return make_reply(request, action::kUnsubscribeResponse, Element(wse("UnsubscribeResponse")));
    }
    // Renew
    milliseconds requested = duration_cast<milliseconds>(options_.default_grant);
    if (request.body)
      if (const Element* e = request.body->child(wse("Expires"))) requested = requested_lifetime(e->text, clock_());
    if (requested <= milliseconds(0)) fail(ErrorCode::InvalidExpiry, "requested expiry is not in the future");
    auto granted = grant(requested);
    sub.expires_at = clock_() + granted;
    Element body(wse("RenewResponse"));
    body.add(wse("Expires"), format_duration(granted));
    return make_reply(request, action::kRenewResponse, std::move(body));
  } catch (const Error& e) {
    const auto& p = request.profile();
    switch (e.code()) {
      case ErrorCode::InvalidExpiry:
        return make_fault(request, "s:Sender", wse("InvalidExpirationTime"), e.what());
      case ErrorCode::UnsupportedDeliveryMode:
        return make_fault(request, "s:Sender", wse("DeliveryModeRequestedUnavailable"), e.what());
      case ErrorCode::UnknownEventFilter:
        return make_fault(request, "s:Sender", QName(p.dpws, "FilterActionNotSupported"), e.what());
      case ErrorCode::UnknownSubscription:
        return make_fault(request, "s:Sender", QName(p.wsa, "DestinationUnreachable"), e.what());
      default:
        return make_fault(request, "s:Sender", wse("InvalidMessage"), e.what());
    }
  }
}

SoapEnvelope SubscriptionManager::subscribe(const SoapEnvelope& request) {
  const auto& p = request.profile();
  if (!request.body || request.body->name != wse("Subscribe")) fail(ErrorCode::InvalidArgument, "Subscribe body missing");
  const Element& body = *request.body;
  const Element* delivery = body.child(wse("Delivery"));
  if (!delivery) fail(ErrorCode::InvalidArgument, "Subscribe without Delivery");
  const std::string* mode = delivery->attribute(plain("Mode"));
  if (mode && *mode != action::kPushDelivery) fail(ErrorCode::UnsupportedDeliveryMode, "delivery mode " + *mode);
  const Element* notify = delivery->child(wse("NotifyTo"));
  if (!notify) fail(ErrorCode::InvalidArgument, "Delivery without NotifyTo");

  auto entry = std::make_shared<Entry>();
  Subscription& sub = entry->sub;
  sub.id = new_message_id();
  sub.version = request.version;
  sub.notify_to = epr_from_xml(*notify, p);
  if (sub.notify_to.address.rfind("http://", 0) != 0)
    fail(ErrorCode::UnsupportedDeliveryMode, "NotifyTo must be an http address");
  if (const Element* end = body.child(wse("EndTo"))) sub.end_to = epr_from_xml(*end, p);

  if (const Element* filter = body.child(wse("Filter"))) {
    const std::string* dialect = filter->attribute(plain("Dialect"));
    if (dialect && *dialect != p.action_filter_dialect())
      fail(ErrorCode::UnknownEventFilter, "filter dialect " + *dialect + " not supported");
    std::istringstream in(filter->text);
    for (std::string a; in >> a;) {
      if (std::find(actions_.begin(), actions_.end(), a) == actions_.end())
        fail(ErrorCode::UnknownEventFilter, "no event with action " + a);
      sub.filter.push_back(a);
    }
  }

  TimePoint now = clock_();
  milliseconds requested = duration_cast<milliseconds>(options_.default_grant);
  if (const Element* e = body.child(wse("Expires"))) requested = requested_lifetime(e->text, now);
  if (requested <= milliseconds(0)) fail(ErrorCode::InvalidExpiry, "requested expiry is not in the future");
  auto granted = grant(requested);
  sub.created_at = now;
  sub.expires_at = now + granted;
  {
    std::lock_guard lock(mutex_);
    entries_[sub.id] = entry;
  }
  spdlog::debug("subscription {} granted {} ms to {}", sub.id, granted.count(), sub.notify_to.address);

  Element response(wse("SubscribeResponse"));
  Element id(identifier_qname(), sub.id);
  response.add(epr_to_xml(EndpointReference{address_, {id}}, wse("SubscriptionManager"), p));
  response.add(wse("Expires"), format_duration(granted));
  return make_reply(request, action::kSubscribeResponse, std::move(response));
}

std::shared_ptr<SubscriptionManager::Entry> SubscriptionManager::lookup(const SoapEnvelope& request) {
  const Element* h = request.header(identifier_qname());
  if (!h) fail(ErrorCode::UnknownSubscription, "request carries no subscription identifier");
  std::string id = h->trimmed_text();
  std::lock_guard lock(mutex_);
  auto it = entries_.find(id);
  if (it == entries_.end() || it->second->sub.status != SubscriptionStatus::Active ||
      it->second->sub.expires_at <= clock_())
    fail(ErrorCode::UnknownSubscription, "unknown subscription " + id);
  return it->second;
}

DeliverySummary SubscriptionManager::emit(const std::string& action, const Element& body) {
  std::vector<std::shared_ptr<Entry>> targets;
  {
    std::lock_guard lock(mutex_);
    TimePoint now = clock_();
    for (auto& [id, e] : entries_)
      if (e->sub.status == SubscriptionStatus::Active && e->sub.expires_at > now && e->sub.admits(action))
        targets.push_back(e);
  }
  DeliverySummary summary;
  summary.results.resize(targets.size());
  if (targets.size() == 1) {
    summary.results[0] = deliver(targets[0], action, body);
  } else if (!targets.empty()) {
    std::vector<std::thread> workers;
    workers.reserve(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i)
      workers.emplace_back([&, i] { summary.results[i] = deliver(targets[i], action, body); });
    for (auto& w : workers) w.join();
  }
  return summary;
}

DeliveryResult SubscriptionManager::deliver(const std::shared_ptr<Entry>& entry, const std::string& action,
                                            const Element& body) {
  std::lock_guard order(entry->delivery);
  DeliveryResult result;
  Subscription sub;
  {
    std::lock_guard lock(mutex_);
    if (entry->sub.status != SubscriptionStatus::Active || entry->sub.expires_at <= clock_()) {
      result.subscription_id = entry->sub.id;
      result.error = "subscription no longer active";
      return result;
    }
    result.sequence = ++entry->sub.last_sequence;
    sub = entry->sub;
  }
  result.subscription_id = sub.id;

  SoapEnvelope env = make_request(sub.version, action, sub.notify_to.address, body);
  address_to(env, sub.notify_to);
  env.extension_headers.emplace_back(subscription_id_header(), sub.id);
  env.extension_headers.emplace_back(sequence_header(), std::to_string(result.sequence));
  try {
    int status = transport_(sub.notify_to.address, serialize_envelope(env), options_.delivery_timeout);
    result.ok = status >= 200 && status < 300;
    if (!result.ok) result.error = "sink answered HTTP " + std::to_string(status);
  } catch (const std::exception& e) {
    result.error = e.what();
  }

  bool send_cancel = false;
  {
    std::lock_guard lock(mutex_);
    if (result.ok) {
      entry->sub.failure_count = 0;
    } else if (++entry->sub.failure_count >= options_.failure_limit &&
               entry->sub.status == SubscriptionStatus::Active) {
      entry->sub.status = SubscriptionStatus::Cancelled;
      entry->ended_at = clock_();
      result.cancelled = send_cancel = true;
      sub = entry->sub;
    }
  }
  if (!result.ok) spdlog::warn("delivery {} to {} failed: {}", result.sequence, sub.notify_to.address, result.error);
  if (send_cancel) send_end(sub, action::kDeliveryFailure, "delivery failed " + std::to_string(sub.failure_count) + " times");
  return result;
}

void SubscriptionManager::send_end(const Subscription& sub, const std::string& status, const std::string& reason) {
  const auto& p = VersionProfile::get(sub.version);
  const EndpointReference& target = sub.end_to ? *sub.end_to : sub.notify_to;
  Element body(wse("SubscriptionEnd"));
  Element id(identifier_qname(), sub.id);
  body.add(epr_to_xml(EndpointReference{address_, {id}}, wse("SubscriptionManager"), p));
  body.add(wse("Status"), status);
  Element& r = body.add(wse("Reason"), reason);
  r.set_attribute(QName(std::string(ns::kXml), "lang"), "en");
  SoapEnvelope env = make_request(sub.version, action::kSubscriptionEnd, target.address, std::move(body));
  address_to(env, target);
  env.extension_headers.emplace_back(subscription_id_header(), sub.id);
  try {
    transport_(target.address, serialize_envelope(env), options_.end_timeout);
  } catch (const std::exception& e) {
    spdlog::warn("SubscriptionEnd for {} to {} failed: {}", sub.id, target.address, e.what());
  }
}

std::size_t SubscriptionManager::expire(TimePoint now) {
  std::lock_guard lock(mutex_);
  std::size_t count = 0;
  for (auto it = entries_.begin(); it != entries_.end();) {
    auto& e = *it->second;
    if (e.sub.status == SubscriptionStatus::Active && e.sub.expires_at <= now) {
      e.sub.status = SubscriptionStatus::Expired;
      e.ended_at = now;
      ++count;
    }
    if (e.sub.status != SubscriptionStatus::Active && now - e.ended_at > minutes(5))
      it = entries_.erase(it);
    else
      ++it;
  }
  return count;
}

void SubscriptionManager::end_all(const std::string& status, const std::string& reason) {
  std::vector<Subscription> ended;
  {
    std::lock_guard lock(mutex_);
    TimePoint now = clock_();
    for (auto& [id, e] : entries_) {
      if (e->sub.status != SubscriptionStatus::Active) continue;
      if (e->sub.expires_at <= now) {
        e->sub.status = SubscriptionStatus::Expired;
      } else {
        e->sub.status = SubscriptionStatus::Cancelled;
        ended.push_back(e->sub);
      }
      e->ended_at = now;
    }
  }
  for (const auto& sub : ended) send_end(sub, status, reason);
}

std::optional<Subscription> SubscriptionManager::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(id);
  if (it == entries_.end()) return std::nullopt;
  return it->second->sub;
}

std::vector<Subscription> SubscriptionManager::subscriptions() const {
  std::lock_guard lock(mutex_);
  std::vector<Subscription> out;
  for (const auto& [id, e] : entries_) out.push_back(e->sub);
  return out;
}

std::size_t SubscriptionManager::active_count() const {
  std::lock_guard lock(mutex_);
  TimePoint now = clock_();
  return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [&](const auto& kv) {
    return kv.second->sub.status == SubscriptionStatus::Active && kv.second->sub.expires_at > now;
  }));
}

struct EventSink::Registration {
  Handlers handlers;
  std::mutex serial;
};

EventSink::EventSink(std::string advertise_host, std::string bind_host)
    : advertise_host_(std::move(advertise_host)), bind_host_(std::move(bind_host)) {}

EventSink::~EventSink() { stop(); }

void EventSink::start() {
  if (server_) return;
  HttpServerOptions opts;
  opts.host = bind_host_;
  opts.port = 0;
  opts.drain_window = Millis(500);
  auto server = std::make_unique<HttpServer>([this](const HttpRequest& r) { return handle(r); }, opts);
  try {
    server->start();
  } catch (const Error& e) {
    fail(ErrorCode::SinkBindFailure, std::string("event sink: ") + e.what());
  }
  server_ = std::move(server);
}

void EventSink::stop() {
  if (server_) server_->stop();
  server_.reset();
}

bool EventSink::running() const { return server_ && server_->running(); }

std::uint16_t EventSink::port() const { return server_ ? server_->port() : 0; }

std::string EventSink::add(const std::string& key, Handlers handlers) {
  if (!server_) start();
  auto reg = std::make_shared<Registration>();
  reg->handlers = std::move(handlers);
  std::lock_guard lock(mutex_);
  registrations_[key] = std::move(reg);
  return "http://" + advertise_host_ + ":" + std::to_string(port()) + "/sink/" + key;
}

void EventSink::remove(const std::string& key) {
  std::lock_guard lock(mutex_);
  registrations_.erase(key);
}

HttpResponse EventSink::handle(const HttpRequest& request) {
  HttpResponse response;
  response.body.clear();
  const std::string prefix = "/sink/";
  std::shared_ptr<Registration> reg;
  if (request.path.rfind(prefix, 0) == 0) {
    std::lock_guard lock(mutex_);
    auto it = registrations_.find(request.path.substr(prefix.size()));
    if (it != registrations_.end()) reg = it->second;
  }
  if (!reg) {
    response.status = 404;
    return response;
  }
  SoapEnvelope env;
  try {
    env = parse_envelope(request.body);
  } catch (const Error& e) {
    response.status = 400;
    return response;
  }
  std::lock_guard serial(reg->serial);
  try {
    if (env.addressing.action == action::kSubscriptionEnd) {
      if (reg->handlers.on_end) reg->handlers.on_end(env);
    } else if (reg->handlers.on_notification) {
      reg->handlers.on_notification(env);
    }
  } catch (const std::exception& e) {
    spdlog::warn("event sink handler threw: {}", e.what());
  }
  response.status = 202;
  return response;
}

}  // namespace dpws
