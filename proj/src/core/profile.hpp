#pragma once

#include <string>
#include <string_view>

namespace dpws {

namespace ns {
inline constexpr std::string_view kSoap = "http://www.w3.org/2003/05/soap-envelope";
inline constexpr std::string_view kXml = "http://www.w3.org/XML/1998/namespace";
inline constexpr std::string_view kXsi = "http://www.w3.org/2001/XMLSchema-instance";
inline constexpr std::string_view kMex = "http://schemas.xmlsoap.org/ws/2004/09/mex";
inline constexpr std::string_view kTransfer = "http://schemas.xmlsoap.org/ws/2004/09/transfer";
inline constexpr std::string_view kEventing = "http://schemas.xmlsoap.org/ws/2004/08/eventing";
// Addressing, discovery and devices-profile namespaces per version.
inline constexpr std::string_view kWsa2005 = "http://www.w3.org/2005/08/addressing";
inline constexpr std::string_view kWsa2004 = "http://schemas.xmlsoap.org/ws/2004/08/addressing";
inline constexpr std::string_view kWsd2009 = "http://docs.oasis-open.org/ws-dd/ns/discovery/2009/01";
inline constexpr std::string_view kWsd2005 = "http://schemas.xmlsoap.org/ws/2005/04/discovery";
inline constexpr std::string_view kDpws2009 = "http://docs.oasis-open.org/ws-dd/ns/dpws/2009/01";
inline constexpr std::string_view kDpws2006 = "http://schemas.xmlsoap.org/ws/2006/02/devprof";
/// Stack-specific extensions: service descriptions and notification numbering.
inline constexpr std::string_view kExt = "urn:dpws-cpp:ext:2024";
}  // namespace ns

enum class ProfileVersion { V1_1, V1_0 };

/// Namespace and action IRI set for one DPWS version. Both versions use the
/// same message layout; only the URIs differ.
struct VersionProfile {
  ProfileVersion version;
  std::string wsa;
  std::string wsa_anonymous;
  std::string wsd;
  std::string wsd_multicast_to;
  std::string dpws;

  static const VersionProfile& get(ProfileVersion v);
  static const VersionProfile& v1_1() { return get(ProfileVersion::V1_1); }
  static const VersionProfile& v1_0() { return get(ProfileVersion::V1_0); }
  /// Picks the profile whose addressing namespace is `wsa_ns`, if any.
  static const VersionProfile* from_addressing(std::string_view wsa_ns);

  std::string hello_action() const { return wsd + "/Hello"; }
  std::string bye_action() const { return wsd + "/Bye"; }
  std::string probe_action() const { return wsd + "/Probe"; }
  std::string probe_matches_action() const { return wsd + "/ProbeMatches"; }
  std::string resolve_action() const { return wsd + "/Resolve"; }
  std::string resolve_matches_action() const { return wsd + "/ResolveMatches"; }
  std::string scope_rule_rfc3986() const { return wsd + "/rfc3986"; }
  std::string scope_rule_strcmp0() const { return wsd + "/strcmp0"; }
  std::string scope_rule_none() const { return wsd + "/none"; }

  std::string device_type_local() const { return "Device"; }
  std::string dialect_this_model() const { return dpws + "/ThisModel"; }
  std::string dialect_this_device() const { return dpws + "/ThisDevice"; }
  std::string dialect_relationship() const { return dpws + "/Relationship"; }
  std::string relationship_host() const { return dpws + "/host"; }
  std::string action_filter_dialect() const { return dpws + "/Action"; }
  std::string fault_action() const { return wsa + "/fault"; }
  std::string soap_fault_action() const { return wsa + "/soap/fault"; }
};

namespace action {
inline const std::string kTransferGet = std::string(ns::kTransfer) + "/Get";
inline const std::string kTransferGetResponse = std::string(ns::kTransfer) + "/GetResponse";
inline const std::string kMexGetMetadata = std::string(ns::kMex) + "/GetMetadata/Request";
inline const std::string kMexGetMetadataResponse = std::string(ns::kMex) + "/GetMetadata/Response";
inline const std::string kSubscribe = std::string(ns::kEventing) + "/Subscribe";
inline const std::string kSubscribeResponse = std::string(ns::kEventing) + "/SubscribeResponse";
inline const std::string kRenew = std::string(ns::kEventing) + "/Renew";
inline const std::string kRenewResponse = std::string(ns::kEventing) + "/RenewResponse";
inline const std::string kGetStatus = std::string(ns::kEventing) + "/GetStatus";
inline const std::string kGetStatusResponse = std::string(ns::kEventing) + "/GetStatusResponse";
inline const std::string kUnsubscribe = std::string(ns::kEventing) + "/Unsubscribe";
inline const std::string kUnsubscribeResponse = std::string(ns::kEventing) + "/UnsubscribeResponse";
inline const std::string kSubscriptionEnd = std::string(ns::kEventing) + "/SubscriptionEnd";
inline const std::string kPushDelivery = std::string(ns::kEventing) + "/DeliveryModes/Push";
inline const std::string kDeliveryFailure = std::string(ns::kEventing) + "/DeliveryFailure";
inline const std::string kSourceShuttingDown = std::string(ns::kEventing) + "/SourceShuttingDown";
inline const std::string kSourceCancelling = std::string(ns::kEventing) + "/SourceCancelling";
}  // namespace action

/// Dialect of the compact service description carried in GetMetadata.
inline const std::string kServiceDescriptionDialect = std::string(ns::kExt) + "/ServiceDescription";

}  // namespace dpws
