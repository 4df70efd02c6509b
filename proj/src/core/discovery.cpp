#include "core/discovery.hpp"

#include <poll.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <thread>

#include "core/error.hpp"

namespace dpws {

using xml::Element;
using xml::QName;

bool is_newer(const AppSequence& a, const AppSequence& b) noexcept {
  if (a.instance_id != b.instance_id) return a.instance_id > b.instance_id;
  return a.message_number > b.message_number;
}

AppSequencer& AppSequencer::process() {
  static AppSequencer instance(static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count()));
  return instance;
}

AppSequence AppSequencer::next() { return {instance_id_, ++counter_, std::nullopt}; }

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

struct SplitUri {
  std::string scheme;
  std::string authority;
  std::vector<std::string> segments;
};

SplitUri split_uri(std::string_view uri) {
  SplitUri out;
  auto cut = uri.find_first_of("?#");
  if (cut != std::string_view::npos) uri = uri.substr(0, cut);
  auto colon = uri.find(':');
  std::string_view rest = uri;
  if (colon != std::string_view::npos) {
    out.scheme = lower(uri.substr(0, colon));
    rest = uri.substr(colon + 1);
  }
  if (rest.substr(0, 2) == "//") {
    rest.remove_prefix(2);
    auto slash = rest.find('/');
    out.authority = lower(rest.substr(0, slash));
    rest = slash == std::string_view::npos ? std::string_view{} : rest.substr(slash);
  }
  std::size_t i = 0;
  while (i <= rest.size()) {
    auto next = rest.find('/', i);
    if (next == std::string_view::npos) next = rest.size();
    if (next > i) out.segments.emplace_back(rest.substr(i, next - i));
    i = next + 1;
  }
  return out;
}

}  // namespace

bool scope_matches_rfc3986(std::string_view probe_scope, std::string_view device_scope) {
  SplitUri p = split_uri(probe_scope);
  SplitUri d = split_uri(device_scope);
  if (p.scheme != d.scheme || p.authority != d.authority) return false;
  if (p.segments.size() > d.segments.size()) return false;
  return std::equal(p.segments.begin(), p.segments.end(), d.segments.begin());
}

bool match_probe(const ProbeFilter& filter, const DeviceAdvertisement& adv) {
  for (const auto& t : filter.types)
    if (std::find(adv.types.begin(), adv.types.end(), t) == adv.types.end()) return false;
  for (const auto& s : filter.scopes) {
    bool found = false;
    for (const auto& ds : adv.scopes) {
      switch (filter.rule) {
        case ScopeRule::Rfc3986: found = scope_matches_rfc3986(s, ds); break;
        case ScopeRule::Strcmp0: found = s == ds; break;
        case ScopeRule::None: found = false; break;
      }
      if (found) break;
    }
    if (!found) return false;
  }
  return true;
}

std::string_view to_string(DiscoveryKind kind) {
  switch (kind) {
    case DiscoveryKind::Hello: return "Hello";
    case DiscoveryKind::Bye: return "Bye";
    case DiscoveryKind::Probe: return "Probe";
    case DiscoveryKind::ProbeMatch: return "ProbeMatch";
    case DiscoveryKind::Resolve: return "Resolve";
    case DiscoveryKind::ResolveMatch: return "ResolveMatch";
  }
  return "?";
}

namespace {

QName wsd(const VersionProfile& p, std::string local) { return QName(p.wsd, std::move(local)); }

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out.push_back(' ');
    out += s;
  }
  return out;
}

std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    auto start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (start != i) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::uint64_t to_u64(std::string_view text, const char* what) {
  std::uint64_t v = 0;
  auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc{} || r.ptr != text.data() + text.size())
    fail(ErrorCode::NotSoap, std::string("bad ") + what + ": '" + std::string(text) + "'");
  return v;
}

std::string rule_uri(const VersionProfile& p, ScopeRule rule) {
  switch (rule) {
    case ScopeRule::Rfc3986: return p.scope_rule_rfc3986();
    case ScopeRule::Strcmp0: return p.scope_rule_strcmp0();
    case ScopeRule::None: return p.scope_rule_none();
  }
  return p.scope_rule_rfc3986();
}

ScopeRule rule_from_uri(const VersionProfile& p, std::string_view uri) {
  if (uri.empty() || uri == p.scope_rule_rfc3986()) return ScopeRule::Rfc3986;
  if (uri == p.scope_rule_strcmp0()) return ScopeRule::Strcmp0;
  // Unknown rules can never match a non-empty scope list.
  return ScopeRule::None;
}

void write_advertisement(Element& parent, const DeviceAdvertisement& adv, const VersionProfile& p, bool full) {
  parent.add(epr_to_xml(adv.epr, QName(p.wsa, "EndpointReference"), p));
  if (!full) return;
  if (!adv.types.empty()) parent.add(wsd(p, "Types"), xml::join_qname_list(adv.types));
  if (!adv.scopes.empty()) parent.add(wsd(p, "Scopes"), join(adv.scopes));
  if (!adv.xaddrs.empty()) parent.add(wsd(p, "XAddrs"), join(adv.xaddrs));
  parent.add(wsd(p, "MetadataVersion"), std::to_string(adv.metadata_version));
}

DeviceAdvertisement read_advertisement(const Element& el, const VersionProfile& p) {
  DeviceAdvertisement adv;
  const Element* epr = el.child(QName(p.wsa, "EndpointReference"));
  if (!epr) fail(ErrorCode::NotSoap, "discovery message without EndpointReference");
  adv.epr = epr_from_xml(*epr, p);
  if (const Element* t = el.child(wsd(p, "Types"))) adv.types = xml::parse_qname_list(t->text);
  if (const Element* s = el.child(wsd(p, "Scopes"))) adv.scopes = split_ws(s->text);
  if (const Element* x = el.child(wsd(p, "XAddrs"))) adv.xaddrs = split_ws(x->text);
  if (const Element* m = el.child(wsd(p, "MetadataVersion"))) adv.metadata_version = to_u64(m->trimmed_text(), "MetadataVersion");
  return adv;
}

}  // namespace

SoapEnvelope to_envelope(const DiscoveryMessage& msg) {
  const VersionProfile& p = VersionProfile::get(msg.version);
  SoapEnvelope env;
  env.version = msg.version;
  env.addressing.message_id = msg.message_id.empty() ? new_message_id() : msg.message_id;
  env.addressing.relates_to = msg.relates_to;

  Element body;
  switch (msg.kind) {
    case DiscoveryKind::Hello:
      env.addressing.action = p.hello_action();
      env.addressing.to = p.wsd_multicast_to;
      body = Element(wsd(p, "Hello"));
      write_advertisement(body, msg.advertisement, p, true);
      break;
    case DiscoveryKind::Bye:
      env.addressing.action = p.bye_action();
      env.addressing.to = p.wsd_multicast_to;
      body = Element(wsd(p, "Bye"));
      write_advertisement(body, msg.advertisement, p, false);
      break;
    case DiscoveryKind::Probe: {
      env.addressing.action = p.probe_action();
      env.addressing.to = p.wsd_multicast_to;
      body = Element(wsd(p, "Probe"));
      if (!msg.filter.types.empty()) body.add(wsd(p, "Types"), xml::join_qname_list(msg.filter.types));
      if (!msg.filter.scopes.empty() || msg.filter.rule != ScopeRule::Rfc3986) {
        Element& scopes = body.add(wsd(p, "Scopes"), join(msg.filter.scopes));
        if (msg.filter.rule != ScopeRule::Rfc3986) scopes.set_attribute(QName({}, "MatchBy"), rule_uri(p, msg.filter.rule));
      }
      break;
    }
    case DiscoveryKind::ProbeMatch: {
      env.addressing.action = p.probe_matches_action();
      env.addressing.to = p.wsa_anonymous;
      body = Element(wsd(p, "ProbeMatches"));
      const auto& list = msg.matches.empty() ? std::vector<DeviceAdvertisement>{msg.advertisement} : msg.matches;
      for (const auto& adv : list) write_advertisement(body.add(Element(wsd(p, "ProbeMatch"))), adv, p, true);
      break;
    }
    case DiscoveryKind::Resolve:
      env.addressing.action = p.resolve_action();
      env.addressing.to = p.wsd_multicast_to;
      body = Element(wsd(p, "Resolve"));
      write_advertisement(body, msg.advertisement, p, false);
      break;
    case DiscoveryKind::ResolveMatch:
      env.addressing.action = p.resolve_matches_action();
      env.addressing.to = p.wsa_anonymous;
      body = Element(wsd(p, "ResolveMatches"));
      write_advertisement(body.add(Element(wsd(p, "ResolveMatch"))), msg.advertisement, p, true);
      break;
  }
  if (msg.app_sequence) {
    Element seq(wsd(p, "AppSequence"));
    seq.set_attribute(QName({}, "InstanceId"), std::to_string(msg.app_sequence->instance_id));
    if (msg.app_sequence->sequence_id) seq.set_attribute(QName({}, "SequenceId"), *msg.app_sequence->sequence_id);
    seq.set_attribute(QName({}, "MessageNumber"), std::to_string(msg.app_sequence->message_number));
    env.extension_headers.push_back(std::move(seq));
  }
  env.body = std::move(body);
  return env;
}

DiscoveryMessage from_envelope(const SoapEnvelope& env) {
  const VersionProfile& p = env.profile();
  if (!env.body || env.body->name.ns != p.wsd) fail(ErrorCode::NotSoap, "not a discovery message");
  DiscoveryMessage msg;
  msg.version = env.version;
  msg.message_id = env.addressing.message_id;
  msg.relates_to = env.addressing.relates_to;
  if (const Element* seq = env.header(wsd(p, "AppSequence"))) {
    AppSequence s;
    const std::string* inst = seq->attribute(QName({}, "InstanceId"));
    const std::string* num = seq->attribute(QName({}, "MessageNumber"));
    if (!inst || !num) fail(ErrorCode::NotSoap, "AppSequence missing InstanceId or MessageNumber");
    s.instance_id = to_u64(*inst, "InstanceId");
    s.message_number = to_u64(*num, "MessageNumber");
    if (const std::string* sid = seq->attribute(QName({}, "SequenceId"))) s.sequence_id = *sid;
    msg.app_sequence = s;
  }
  const Element& body = *env.body;
  const auto& local = body.name.local;
  if (local == "Hello") {
    msg.kind = DiscoveryKind::Hello;
    msg.advertisement = read_advertisement(body, p);
  } else if (local == "Bye") {
    msg.kind = DiscoveryKind::Bye;
    msg.advertisement = read_advertisement(body, p);
  } else if (local == "Probe") {
    msg.kind = DiscoveryKind::Probe;
    if (const Element* t = body.child(wsd(p, "Types"))) msg.filter.types = xml::parse_qname_list(t->text);
    if (const Element* s = body.child(wsd(p, "Scopes"))) {
      msg.filter.scopes = split_ws(s->text);
      const std::string* by = s->attribute(QName({}, "MatchBy"));
      msg.filter.rule = rule_from_uri(p, by ? *by : std::string());
    }
  } else if (local == "ProbeMatches") {
    msg.kind = DiscoveryKind::ProbeMatch;
    for (const Element* m : body.children_named(wsd(p, "ProbeMatch"))) msg.matches.push_back(read_advertisement(*m, p));
    if (!msg.matches.empty()) msg.advertisement = msg.matches.front();
  } else if (local == "Resolve") {
    msg.kind = DiscoveryKind::Resolve;
    msg.advertisement = read_advertisement(body, p);
  } else if (local == "ResolveMatches") {
    msg.kind = DiscoveryKind::ResolveMatch;
    const Element* m = body.child(wsd(p, "ResolveMatch"));
    if (!m) fail(ErrorCode::NotSoap, "empty ResolveMatches");
    msg.advertisement = read_advertisement(*m, p);
    msg.matches.push_back(msg.advertisement);
  } else {
    fail(ErrorCode::NotSoap, "unknown discovery body " + local);
  }
  return msg;
}

std::string encode_datagram(const DiscoveryMessage& msg) {
  std::string out = serialize_envelope(to_envelope(msg));
  if (out.size() > kUdpEnvelopeLimit)
    fail(ErrorCode::Oversize, to_string(msg.kind).data() + std::string(" message of ") + std::to_string(out.size()) +
                                  " octets exceeds the UDP limit");
  return out;
}

DiscoveryMessage decode_datagram(std::string_view payload) {
  return from_envelope(parse_envelope(payload, kUdpEnvelopeLimit));
}

bool DedupeCache::check_and_insert(const std::string& id, Clock::time_point now) {
  while (!order_.empty() && now - order_.front().second > window_) {
    index_.erase(order_.front().first);
    order_.pop_front();
  }
  if (auto it = index_.find(id); it != index_.end()) return true;
  order_.emplace_back(id, now);
  index_.emplace(id, std::prev(order_.end()));
  while (order_.size() > capacity_) {
    index_.erase(order_.front().first);
    order_.pop_front();
  }
  return false;
}

Responder::Responder(DiscoveryOptions options, AppSequencer* sequencer)
    : options_(std::move(options)),
      sequencer_(sequencer ? sequencer : &AppSequencer::process()),
      dedupe_(options_.dedupe_capacity, options_.dedupe_window) {}

Responder::~Responder() { stop(); }

void Responder::start() {
  if (listener_) return;
  scheduler_ = std::make_unique<Scheduler>();
  listener_ = std::make_unique<UdpListener>(
      options_.endpoint, [this](const std::string& payload, const SocketAddress& source) { handle_datagram(payload, source); });
}

void Responder::stop() {
  if (listener_) listener_->stop();
  if (scheduler_) scheduler_->stop();
  listener_.reset();
  scheduler_.reset();
}

void Responder::add(const DeviceAdvertisement& adv) {
  std::lock_guard lock(mutex_);
  registry_[adv.epr.address] = adv;
}

bool Responder::remove(const std::string& epr_address) {
  std::lock_guard lock(mutex_);
  return registry_.erase(epr_address) > 0;
}

std::vector<DeviceAdvertisement> Responder::registered() const {
  std::lock_guard lock(mutex_);
  std::vector<DeviceAdvertisement> out;
  for (const auto& [_, adv] : registry_) out.push_back(adv);
  return out;
}

const UdpSocket& Responder::sender(int family) {
  std::lock_guard lock(mutex_);
  auto& slot = family == AF_INET6 ? sender_v6_ : sender_v4_;
  if (!slot) {
    slot = std::make_unique<UdpSocket>(family, options_.endpoint);
    slot->bind(0, false);
  }
  return *slot;
}

void Responder::send_multicast(const DiscoveryMessage& msg) {
  auto payload = encode_datagram(msg);
  if (observer_) observer_(msg);
  const auto& ep = options_.endpoint;
  if (ep.ipv4 && !ep.ipv6) {
    udp_send(sender(AF_INET), payload, ep.group_address_v4(), options_.multicast_policy);
    return;
  }
  std::vector<std::thread> senders;
  if (ep.ipv4) senders.emplace_back([&] { udp_send(sender(AF_INET), payload, ep.group_address_v4(), options_.multicast_policy); });
  if (ep.ipv6) {
    try {
      udp_send(sender(AF_INET6), payload, ep.group_address_v6(), options_.multicast_policy);
    } catch (const Error& e) {
      spdlog::warn("IPv6 announcement failed: {}", e.what());
    }
  }
  for (auto& t : senders) t.join();
}

AppSequence Responder::announce_hello(const DeviceAdvertisement& adv) {
  DiscoveryMessage msg;
  msg.kind = DiscoveryKind::Hello;
  msg.version = options_.version;
  msg.message_id = new_message_id();
  msg.app_sequence = sequencer_->next();
  msg.advertisement = adv;
  send_multicast(msg);
  return *msg.app_sequence;
}

std::optional<AppSequence> Responder::announce_bye(const EndpointReference& epr) {
  if (!remove(epr.address)) {
    spdlog::warn("Bye requested for unregistered endpoint {}", epr.address);
    return std::nullopt;
  }
  DiscoveryMessage msg;
  msg.kind = DiscoveryKind::Bye;
  msg.version = options_.version;
  msg.message_id = new_message_id();
  msg.app_sequence = sequencer_->next();
  msg.advertisement.epr = epr;
  send_multicast(msg);
  return msg.app_sequence;
}

std::vector<PlannedReply> Responder::plan(const DiscoveryMessage& request) {
  std::vector<PlannedReply> out;
  if (request.kind != DiscoveryKind::Probe && request.kind != DiscoveryKind::Resolve) return out;
  std::lock_guard lock(mutex_);
  if (!request.message_id.empty() && dedupe_.check_and_insert(request.message_id)) return out;
  std::uniform_int_distribution<long> delay(0, options_.max_match_delay.count());
  for (const auto& [address, adv] : registry_) {
    bool hit = request.kind == DiscoveryKind::Probe ? match_probe(request.filter, adv)
                                                    : request.advertisement.epr.address == address;
    if (!hit) continue;
    DiscoveryMessage reply;
    reply.kind = request.kind == DiscoveryKind::Probe ? DiscoveryKind::ProbeMatch : DiscoveryKind::ResolveMatch;
    reply.version = request.version;
    reply.message_id = new_message_id();
    reply.relates_to = request.message_id;
    reply.app_sequence = sequencer_->next();
    reply.advertisement = adv;
    reply.matches = {adv};
    out.push_back({std::move(reply), Millis{delay(rng_)}});
  }
  return out;
}

void Responder::respond(const DiscoveryMessage& request, const SocketAddress& source) {
  auto replies = plan(request);
  if (replies.empty() || !scheduler_ || !listener_) return;
  const UdpSocket* socket = &listener_->reply_socket(source.family());
  for (auto& r : replies) {
    auto payload = std::make_shared<std::string>(encode_datagram(r.message));
    auto delays = options_.unicast_policy.draw_delays(rng_);
    auto send = [this, socket, payload, source, msg = r.message] {
      if (observer_) observer_(msg);
      socket->send_to(*payload, source);
    };
    scheduler_->schedule_after(r.delay, send);
    Millis at = r.delay;
    for (auto d : delays) {
      at += d;
      scheduler_->schedule_after(at, [socket, payload, source] { socket->send_to(*payload, source); });
    }
  }
}

void Responder::handle_datagram(const std::string& payload, const SocketAddress& source) {
  DiscoveryMessage msg;
  try {
    msg = decode_datagram(payload);
  } catch (const Error& e) {
    spdlog::debug("ignoring datagram from {}: {}", source.to_string(), e.what());
    return;
  }
  if (msg.kind == DiscoveryKind::Probe || msg.kind == DiscoveryKind::Resolve) respond(msg, source);
}

void merge_match(std::vector<std::pair<DeviceAdvertisement, AppSequence>>& results, const DeviceAdvertisement& adv,
                 const AppSequence& seq) {
  for (auto& [existing, existing_seq] : results) {
    if (existing.epr.address != adv.epr.address) continue;
    if (is_newer(seq, existing_seq)) {
      existing = adv;
      existing_seq = seq;
    }
    return;
  }
  results.emplace_back(adv, seq);
}

namespace {

// Sends `request` and feeds every reply whose RelatesTo matches into `on_reply`
// until the deadline or until `on_reply` returns true.
void exchange(const DiscoveryMessage& request, Millis timeout, const ProbeOptions& options,
              const std::function<bool(const DiscoveryMessage&)>& on_reply) {
  auto payload = encode_datagram(request);
  std::vector<std::shared_ptr<UdpSocket>> sockets;
  auto open = [&](int family, const SocketAddress& group) {
    auto s = std::make_shared<UdpSocket>(family, options.endpoint);
    s->bind(0, false);
    sockets.push_back(s);
    // Repetitions continue in the background; the socket stays alive with them.
    std::thread([s, payload, group, policy = options.policy] {
      try {
        udp_send(*s, payload, group, policy);
      } catch (const std::exception& e) {
        spdlog::warn("discovery send failed: {}", e.what());
      }
    }).detach();
  };
  if (options.endpoint.ipv4) open(AF_INET, options.endpoint.group_address_v4());
  if (options.endpoint.ipv6) {
    try {
      open(AF_INET6, options.endpoint.group_address_v6());
    } catch (const Error& e) {
      if (sockets.empty()) throw;
      spdlog::warn("IPv6 discovery unavailable: {}", e.what());
    }
  }
  if (sockets.empty()) fail(ErrorCode::SocketError, "no address family enabled for discovery");

  auto deadline = std::chrono::steady_clock::now() + timeout;
  std::vector<pollfd> fds;
  for (const auto& s : sockets) fds.push_back({s->fd(), POLLIN, 0});
  std::string buf(65536, '\0');
  for (;;) {
    auto left = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return;
    for (auto& p : fds) p.revents = 0;
    if (::poll(fds.data(), fds.size(), static_cast<int>(left.count())) <= 0) continue;
    for (const auto& p : fds) {
      if (!(p.revents & POLLIN)) continue;
      auto n = ::recv(p.fd, buf.data(), buf.size(), 0);
      if (n <= 0) continue;
      DiscoveryMessage reply;
      try {
        reply = decode_datagram(std::string_view(buf.data(), static_cast<std::size_t>(n)));
      } catch (const Error&) {
        continue;
      }
      if (reply.relates_to != request.message_id) continue;
      if (on_reply(reply)) return;
    }
  }
}

}  // namespace

std::vector<DeviceAdvertisement> probe(const ProbeFilter& filter, Millis timeout, const ProbeOptions& options) {
  if (timeout.count() <= 0) fail(ErrorCode::InvalidTimeout, "probe timeout must be positive");
  DiscoveryMessage request;
  request.kind = DiscoveryKind::Probe;
  request.version = options.version;
  request.message_id = new_message_id();
  request.filter = filter;

  std::vector<std::pair<DeviceAdvertisement, AppSequence>> results;
  exchange(request, timeout, options, [&](const DiscoveryMessage& reply) {
    if (reply.kind != DiscoveryKind::ProbeMatch) return false;
    AppSequence seq = reply.app_sequence.value_or(AppSequence{});
    for (const auto& adv : reply.matches) merge_match(results, adv, seq);
    return options.max_results > 0 && results.size() >= options.max_results;
  });
  std::vector<DeviceAdvertisement> out;
  for (auto& [adv, _] : results) out.push_back(std::move(adv));
  return out;
}

std::optional<DeviceAdvertisement> resolve(const std::string& epr_address, Millis timeout, const ProbeOptions& options) {
  if (timeout.count() <= 0) fail(ErrorCode::InvalidTimeout, "resolve timeout must be positive");
  DiscoveryMessage request;
  request.kind = DiscoveryKind::Resolve;
  request.version = options.version;
  request.message_id = new_message_id();
  request.advertisement.epr.address = epr_address;

  std::optional<DeviceAdvertisement> found;
  exchange(request, timeout, options, [&](const DiscoveryMessage& reply) {
    if (reply.kind != DiscoveryKind::ResolveMatch || reply.advertisement.epr.address != epr_address) return false;
    found = reply.advertisement;
    return true;
  });
  return found;
}

}  // namespace dpws
