#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "core/scheduler.hpp"
#include "core/soap.hpp"
#include "core/udp.hpp"

namespace dpws {

/// Ordering metadata carried by announcements and responses.
struct AppSequence {
  std::uint64_t instance_id = 0;
  std::uint64_t message_number = 0;
  std::optional<std::string> sequence_id;

  bool operator==(const AppSequence&) const = default;
};

/// a is newer than b: larger instance id, or same instance and larger
/// message number.
bool is_newer(const AppSequence& a, const AppSequence& b) noexcept;

/// Process-wide sequence source. The instance id is the process start time
/// in Unix seconds; message numbers start at 1 and never repeat.
class AppSequencer {
 public:
  explicit AppSequencer(std::uint64_t instance_id) : instance_id_(instance_id) {}
  static AppSequencer& process();

  AppSequence next();
  std::uint64_t instance_id() const { return instance_id_; }

 private:
  std::uint64_t instance_id_;
  std::atomic<std::uint64_t> counter_{0};
};

struct DeviceAdvertisement {
  EndpointReference epr;
  std::vector<xml::QName> types;
  std::vector<std::string> scopes;
  std::vector<std::string> xaddrs;
  std::uint64_t metadata_version = 0;

  bool operator==(const DeviceAdvertisement&) const = default;
};

enum class ScopeRule { Rfc3986, Strcmp0, None };

struct ProbeFilter {
  std::vector<xml::QName> types;
  std::vector<std::string> scopes;
  ScopeRule rule = ScopeRule::Rfc3986;

  bool universal() const { return types.empty() && scopes.empty(); }
  bool operator==(const ProbeFilter&) const = default;
};

/// RFC 3986 scope rule: scheme and authority compared case-insensitively,
/// then the probe's path segments must prefix the device's. Empty segments
/// are ignored; query and fragment never take part.
bool scope_matches_rfc3986(std::string_view probe_scope, std::string_view device_scope);
bool match_probe(const ProbeFilter& filter, const DeviceAdvertisement& adv);

enum class DiscoveryKind { Hello, Bye, Probe, ProbeMatch, Resolve, ResolveMatch };
std::string_view to_string(DiscoveryKind kind);

struct DiscoveryMessage {
  DiscoveryKind kind = DiscoveryKind::Hello;
  ProfileVersion version = ProfileVersion::V1_1;
  std::string message_id;
  std::optional<std::string> relates_to;
  std::optional<AppSequence> app_sequence;
  /// Hello/ProbeMatch/ResolveMatch: full advertisement. Bye/Resolve: epr only.
  DeviceAdvertisement advertisement;
  /// ProbeMatch may carry several matches in one message.
  std::vector<DeviceAdvertisement> matches;
  ProbeFilter filter;
};

SoapEnvelope to_envelope(const DiscoveryMessage& msg);
/// Throws NotSoap when the envelope carries no discovery body.
DiscoveryMessage from_envelope(const SoapEnvelope& env);
/// Serialized datagram; throws Oversize above 4096 octets.
std::string encode_datagram(const DiscoveryMessage& msg);
DiscoveryMessage decode_datagram(std::string_view payload);

/// Message-id cache: `check_and_insert` is true for a repeat seen within the
/// window. Oldest entries are evicted past `capacity`.
class DedupeCache {
 public:
  using Clock = std::chrono::steady_clock;
  DedupeCache(std::size_t capacity = 1024, Clock::duration window = std::chrono::seconds(60))
      : capacity_(capacity), window_(window) {}

  bool check_and_insert(const std::string& id, Clock::time_point now = Clock::now());
  std::size_t size() const { return index_.size(); }

 private:
  std::size_t capacity_;
  Clock::duration window_;
  std::list<std::pair<std::string, Clock::time_point>> order_;
  std::unordered_map<std::string, std::list<std::pair<std::string, Clock::time_point>>::iterator> index_;
};

struct DiscoveryOptions {
  MulticastEndpoint endpoint;
  RetransmitPolicy multicast_policy;
  RetransmitPolicy unicast_policy{1, Millis{50}, Millis{250}, Millis{500}};
  Millis max_match_delay{500};
  std::size_t dedupe_capacity = 1024;
  std::chrono::seconds dedupe_window{60};
  ProfileVersion version = ProfileVersion::V1_1;
};

/// A reply the responder decided to send.
struct PlannedReply {
  DiscoveryMessage message;
  Millis delay{0};
};

/// Ad-hoc mode responder: answers Probe/Resolve for the registered devices
/// and sends Hello/Bye announcements.
class Responder {
 public:
  explicit Responder(DiscoveryOptions options = {}, AppSequencer* sequencer = nullptr);
  ~Responder();
  Responder(const Responder&) = delete;
  Responder& operator=(const Responder&) = delete;

  /// Binds the multicast listener. Throws BindFailure/JoinFailure.
  void start();
  void stop();
  bool running() const { return listener_ != nullptr; }

  void add(const DeviceAdvertisement& adv);
  /// False when the address was not registered.
  bool remove(const std::string& epr_address);
  std::vector<DeviceAdvertisement> registered() const;

  /// Hello for `adv` with a fresh AppSequence; returns it. Blocks until the
  /// last repetition has been sent.
  AppSequence announce_hello(const DeviceAdvertisement& adv);
  /// Deregisters, then sends Bye. Unknown addresses log a warning and send nothing.
  std::optional<AppSequence> announce_bye(const EndpointReference& epr);

  /// Decides the replies to a Probe/Resolve; duplicates (same message id
  /// within the window) yield nothing. Does not send.
  std::vector<PlannedReply> plan(const DiscoveryMessage& request);
  /// Plans and schedules unicast replies to `source`.
  void respond(const DiscoveryMessage& request, const SocketAddress& source);

  /// Observer for outgoing datagrams (tests).
  void on_send(std::function<void(const DiscoveryMessage&)> observer) { observer_ = std::move(observer); }
  const DiscoveryOptions& options() const { return options_; }

 private:
  void handle_datagram(const std::string& payload, const SocketAddress& source);
  void send_multicast(const DiscoveryMessage& msg);
  const UdpSocket& sender(int family);

  DiscoveryOptions options_;
  AppSequencer* sequencer_;
  mutable std::mutex mutex_;
  std::map<std::string, DeviceAdvertisement> registry_;
  DedupeCache dedupe_;
  std::mt19937_64 rng_{std::random_device{}()};
  std::unique_ptr<UdpListener> listener_;
  std::unique_ptr<UdpSocket> sender_v4_;
  std::unique_ptr<UdpSocket> sender_v6_;
  std::unique_ptr<Scheduler> scheduler_;
  std::function<void(const DiscoveryMessage&)> observer_;
};

struct ProbeOptions {
  MulticastEndpoint endpoint;
  RetransmitPolicy policy;
  ProfileVersion version = ProfileVersion::V1_1;
  /// Return as soon as this many distinct devices answered (0 = wait for timeout).
  std::size_t max_results = 0;
};

/// Multicasts a Probe and gathers ProbeMatches until the timeout. Results are
/// deduplicated by EPR address, keeping the newest AppSequence.
std::vector<DeviceAdvertisement> probe(const ProbeFilter& filter, Millis timeout, const ProbeOptions& options = {});
/// Multicasts a Resolve for `epr_address`.
std::optional<DeviceAdvertisement> resolve(const std::string& epr_address, Millis timeout,
                                           const ProbeOptions& options = {});

/// Folds one more match into a result set (newest AppSequence wins).
void merge_match(std::vector<std::pair<DeviceAdvertisement, AppSequence>>& results, const DeviceAdvertisement& adv,
                 const AppSequence& seq);

}  // namespace dpws
