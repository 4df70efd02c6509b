#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "core/discovery.hpp"
#include "core/eventing.hpp"
#include "core/metadata.hpp"
#include "core/model.hpp"

namespace dpws {

struct RemoteService {
  EndpointReference epr;
  std::string service_id;
  std::vector<xml::QName> types;
  ServiceDescription description;

  const std::string& address() const { return epr.address; }
  const OperationDescription* find_operation(std::string_view name) const { return description.find_operation(name); }
};

struct RemoteDevice {
  DeviceAdvertisement advertisement;
  std::optional<DeviceMetadata> metadata;
  std::vector<RemoteService> services;

  const RemoteService* find_service(std::string_view service_id) const;
};

struct Notification {
  std::string action;
  std::string event;
  std::string subscription_id;
  std::uint64_t sequence = 0;
  Value value;
};

struct SubscriptionEndNotice {
  std::string subscription_id;
  std::string status;
  std::string reason;
};

struct ClientOptions {
  ProbeOptions probe;
  ProfileVersion version = ProfileVersion::V1_1;
  /// Host written into sink addresses; empty picks the local address that
  /// routes to the device.
  std::string sink_host;
  std::string sink_bind_host = "0.0.0.0";
  /// Idle keep-alive connections kept per origin.
  std::size_t max_idle_per_origin = 128;
};

class Client;

/// Client-side view of one subscription.
class ClientSubscription {
 public:
  ~ClientSubscription();
  const std::string& id() const { return id_; }
  const EndpointReference& manager() const { return manager_; }
  std::chrono::milliseconds granted() const { return granted_; }
  /// Returns the newly granted lifetime.
  std::chrono::milliseconds renew(std::optional<std::chrono::milliseconds> expires, Millis timeout = Millis(5000));
  /// Remaining lifetime reported by the device.
  std::chrono::milliseconds status(Millis timeout = Millis(5000));
  void unsubscribe(Millis timeout = Millis(5000));
  bool ended() const;

 private:
  friend class Client;
  SoapEnvelope request(const std::string& action, xml::Element body, Millis timeout);

  std::shared_ptr<Client> owner_;
  std::string id_;
  std::string sink_key_;
  EndpointReference manager_;
  ProfileVersion version_ = ProfileVersion::V1_1;
  std::chrono::milliseconds granted_{0};
  std::shared_ptr<std::atomic<bool>> ended_;
};

/// High-level consumer API. Shareable across threads.
class Client : public std::enable_shared_from_this<Client> {
 public:
  static std::shared_ptr<Client> create(ClientOptions options = {});
  ~Client();

  /// Advertisements only. Throws InvalidTimeout, SocketError.
  std::vector<RemoteDevice> discover(const ProbeFilter& filter, Millis timeout);
  /// Fetches metadata and every service description. Resolves first when
  /// the advertisement carries no xaddr.
  RemoteDevice open(const RemoteDevice& device, Millis timeout);
  /// Opens a device by transport address.
  RemoteDevice open(const std::string& xaddr, Millis timeout);

  /// Local validation (UnknownOperation, TypeMismatch) happens before any
  /// network traffic.
  Value invoke(const RemoteService& service, const std::string& operation, const Value& input, Millis timeout);

  using NotificationHandler = std::function<void(const Notification&)>;
  using EndHandler = std::function<void(const SubscriptionEndNotice&)>;
  /// Empty `event` subscribes to every event of the service.
  std::shared_ptr<ClientSubscription> subscribe(const RemoteService& service, const std::string& event,
                                                NotificationHandler on_notification, EndHandler on_end = {},
                                                std::optional<std::chrono::milliseconds> expires = std::nullopt,
                                                Millis timeout = Millis(5000));

  /// SOAP exchange over a pooled keep-alive connection.
  SoapEnvelope call(const std::string& url, const SoapEnvelope& request, Millis timeout);

  const ClientOptions& options() const { return options_; }
  std::size_t idle_connections() const;

 private:
  friend class ClientSubscription;
  explicit Client(ClientOptions options);
  EventSink& sink(const std::string& peer_host);
  void release_sink(const std::string& key);

  ClientOptions options_;
  mutable std::mutex pool_mutex_;
  std::map<std::string, std::vector<std::unique_ptr<HttpConnection>>> idle_;
  std::mutex sink_mutex_;
  std::unique_ptr<EventSink> sink_;
};

}  // namespace dpws
