#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "core/discovery.hpp"
#include "core/eventing.hpp"
#include "core/http.hpp"
#include "core/metadata.hpp"
#include "core/model.hpp"

namespace dpws {

struct DeviceConfig {
  /// Bare UUID or urn:uuid: form.
  std::string address;
  std::vector<xml::QName> types;
  std::uint64_t metadata_version = 1;
  ThisModel this_model;
  ThisDevice this_device;
  std::vector<std::string> scopes;
  int http_port = 8080;
  ProfileVersion version = ProfileVersion::V1_1;

  /// Listener bind address.
  std::string bind_host = "0.0.0.0";
  /// Host written into xaddrs; empty picks the first non-loopback IPv4 address.
  std::string advertise_host;
  MulticastEndpoint discovery;
  RetransmitPolicy multicast_policy;
  /// Turns discovery off entirely (no responder, no Hello/Bye).
  bool discovery_enabled = true;
  EventingOptions eventing;
  Millis handler_timeout{30000};
  Millis drain_window{2000};
  bool strict_input = true;
  ClockFn clock;
};

/// Throws InvalidConfig naming the field.
void validate_config(const DeviceConfig& config);
/// Lowercase bare UUID from either accepted form, or empty when invalid.
std::string normalize_uuid(std::string_view address);

/// Device runtime: registry, SOAP dispatch over HTTP, discovery lifecycle.
class Device {
 public:
  explicit Device(DeviceConfig config);
  ~Device();
  Device(const Device&) = delete;
  Device& operator=(const Device&) = delete;

  /// Throws DuplicateServiceId or InvalidService. After start the metadata
  /// version bumps and a fresh Hello goes out.
  void add_service(ServiceDefinition service);

  /// Throws AlreadyStarted, BindFailure, JoinFailure.
  void start();
  /// Bye, SubscriptionEnd to every subscriber, then HTTP drain. Idempotent.
  void stop();
  bool running() const;

  std::uint16_t port() const;
  std::string uuid() const;
  std::string epr_address() const;
  std::vector<std::string> xaddrs() const;
  /// Full URL of a hosted service.
  std::string service_address(const std::string& service_id) const;
  std::string service_path(const std::string& service_id) const;

  DeviceMetadata metadata() const;
  DeviceAdvertisement advertisement() const;
  std::vector<std::string> service_ids() const;
  const DeviceConfig& config() const;

  /// Throws UnknownService, UnknownEvent or TypeMismatch.
  DeliverySummary emit(const std::string& service_id, const std::string& event, const Value& payload);
  /// Throws UnknownService or UnknownEvent.
  PrimitiveType event_payload_type(const std::string& service_id, const std::string& event) const;
  /// Expires subscriptions across all services at the configured clock.
  std::size_t expire_subscriptions();
  SubscriptionManager* subscriptions(const std::string& service_id);

  /// Routes one request for `path`. Always yields exactly one envelope.
  SoapEnvelope dispatch(const SoapEnvelope& request, const std::string& path);

  struct Core;

 private:
  std::shared_ptr<Core> core_;
};

}  // namespace dpws
