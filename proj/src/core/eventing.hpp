#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "core/http.hpp"
#include "core/soap.hpp"
#include "core/udp.hpp"

namespace dpws {

using SystemClock = std::chrono::system_clock;
using TimePoint = SystemClock::time_point;
using ClockFn = std::function<TimePoint()>;

/// xs:duration ("PT600S", "P1DT2H", "-PT5S"). Years count 365 days and months
/// 30 days. Throws InvalidExpiry.
std::chrono::milliseconds parse_duration(std::string_view text);
/// "PT3600S", or "PT1.5S" when the value has a fractional second.
std::string format_duration(std::chrono::milliseconds d);
/// xs:dateTime; a missing zone means UTC. Throws InvalidExpiry.
TimePoint parse_datetime(std::string_view text);
std::string format_datetime(TimePoint t);

/// An Expires value is either a duration or an absolute time; the result is
/// the requested lifetime relative to `now` (negative for past times).
std::chrono::milliseconds requested_lifetime(std::string_view expires, TimePoint now);

struct EventingOptions {
  std::chrono::seconds default_grant{3600};
  std::chrono::seconds max_grant{3600};
  unsigned failure_limit = 3;
  Millis delivery_timeout{5000};
  Millis end_timeout{2000};
};

enum class SubscriptionStatus { Active, Cancelled, Expired };
std::string_view to_string(SubscriptionStatus s);

struct Subscription {
  std::string id;
  ProfileVersion version = ProfileVersion::V1_1;
  EndpointReference notify_to;
  std::optional<EndpointReference> end_to;
  TimePoint created_at;
  TimePoint expires_at;
  /// Admitted event actions; empty admits every event of the service.
  std::vector<std::string> filter;
  SubscriptionStatus status = SubscriptionStatus::Active;
  unsigned failure_count = 0;
  std::uint64_t last_sequence = 0;

  bool admits(const std::string& action) const;
};

/// Sends `body` to `url`, returns the HTTP status. Throws on network errors.
using DeliveryTransport = std::function<int(const std::string& url, const std::string& body, Millis timeout)>;
DeliveryTransport default_delivery_transport();

struct DeliveryResult {
  std::string subscription_id;
  std::uint64_t sequence = 0;
  bool ok = false;
  std::string error;
  /// This failure reached the strike limit and cancelled the subscription.
  bool cancelled = false;
};

struct DeliverySummary {
  std::vector<DeliveryResult> results;
  std::size_t delivered() const;
  std::size_t failed() const;
};

/// Header names stamped on notifications.
xml::QName subscription_id_header();
xml::QName sequence_header();
xml::QName identifier_qname();

/// Device-side WS-Eventing subscription manager for one event source.
class SubscriptionManager {
 public:
  SubscriptionManager(std::string manager_address, std::vector<std::string> event_actions,
                      EventingOptions options = {}, ClockFn clock = {}, DeliveryTransport transport = {});
  ~SubscriptionManager();
  SubscriptionManager(const SubscriptionManager&) = delete;
  SubscriptionManager& operator=(const SubscriptionManager&) = delete;

  static bool is_eventing_action(const std::string& action);

  /// Subscribe/Renew/GetStatus/Unsubscribe. Errors come back as fault envelopes.
  SoapEnvelope handle(const SoapEnvelope& request);

  /// Pushes one notification per admitting subscription. Deliveries to
  /// distinct sinks run concurrently.
  DeliverySummary emit(const std::string& action, const xml::Element& body);

  /// Active subscriptions with expires_at <= now become expired.
  std::size_t expire(TimePoint now);
  std::size_t expire() { return expire(now()); }

  /// Cancels everything and sends each subscriber one SubscriptionEnd.
  void end_all(const std::string& status, const std::string& reason);

  std::optional<Subscription> find(const std::string& id) const;
  std::vector<Subscription> subscriptions() const;
  std::size_t active_count() const;
  TimePoint now() const { return clock_(); }
  const std::string& address() const { return address_; }
  const std::vector<std::string>& event_actions() const { return actions_; }

 private:
  struct Entry;
  SoapEnvelope subscribe(const SoapEnvelope& request);
  std::shared_ptr<Entry> lookup(const SoapEnvelope& request);
  DeliveryResult deliver(const std::shared_ptr<Entry>& entry, const std::string& action, const xml::Element& body);
  void send_end(const Subscription& sub, const std::string& status, const std::string& reason);
  std::chrono::milliseconds grant(std::chrono::milliseconds requested) const;

  std::string address_;
  std::vector<std::string> actions_;
  EventingOptions options_;
  ClockFn clock_;
  DeliveryTransport transport_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Entry>> entries_;
};

/// Client-side HTTP endpoint receiving notifications and SubscriptionEnd.
/// Each registration's callbacks run one at a time in arrival order.
class EventSink {
 public:
  using Callback = std::function<void(const SoapEnvelope&)>;
  struct Handlers {
    Callback on_notification;
    Callback on_end;
  };

  /// `advertise_host` is the host written into sink addresses.
  explicit EventSink(std::string advertise_host, std::string bind_host = "0.0.0.0");
  ~EventSink();

  /// Throws SinkBindFailure.
  void start();
  void stop();
  bool running() const;
  std::uint16_t port() const;

  /// Registers a receiver and returns its address.
  std::string add(const std::string& key, Handlers handlers);
  void remove(const std::string& key);

 private:
  struct Registration;
  HttpResponse handle(const HttpRequest& request);

  std::string advertise_host_;
  std::string bind_host_;
  std::unique_ptr<HttpServer> server_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Registration>> registrations_;
};

}  // namespace dpws
