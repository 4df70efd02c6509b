#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/model.hpp"
#include "core/soap.hpp"

namespace dpws {

struct ThisModel {
  std::string manufacturer;
  std::string model_name;
  std::string model_number;
  std::string model_url;
  std::string presentation_url;
  bool operator==(const ThisModel&) const = default;
};

struct ThisDevice {
  std::string friendly_name;
  std::string firmware_version;
  std::string serial_number;
  bool operator==(const ThisDevice&) const = default;
};

struct HostedService {
  EndpointReference epr;
  std::vector<xml::QName> types;
  std::string service_id;
  bool operator==(const HostedService&) const = default;
};

struct Relationship {
  EndpointReference host;
  std::vector<xml::QName> host_types;
  std::vector<HostedService> hosted;
  bool operator==(const Relationship&) const = default;

  const HostedService* find(const std::string& service_id) const;
};

struct DeviceMetadata {
  ThisModel this_model;
  ThisDevice this_device;
  Relationship relationship;
  std::uint64_t metadata_version = 0;
  bool operator==(const DeviceMetadata&) const = default;
};

/// GetResponse for a transfer Get. A request with any other action yields an
/// action-not-supported fault.
SoapEnvelope build_metadata_response(const SoapEnvelope& request, const DeviceMetadata& meta);
/// Throws MalformedMetadata when a section is missing.
DeviceMetadata parse_metadata_response(const SoapEnvelope& response);

/// Fetches device metadata from a transport address (http://...). Errors:
/// Timeout, ConnectFailure, FaultReceived, MalformedMetadata.
DeviceMetadata get_metadata(const std::string& xaddr, std::chrono::milliseconds timeout,
                            ProfileVersion version = ProfileVersion::V1_1);

struct ParameterDescription {
  xml::QName element;
  PrimitiveType type = PrimitiveType::String;
  bool operator==(const ParameterDescription&) const = default;
};

struct OperationDescription {
  std::string name;
  std::string action;
  std::string response_action;
  std::optional<ParameterDescription> input;
  std::optional<ParameterDescription> output;
  bool operator==(const OperationDescription&) const = default;
};

struct EventDescription {
  std::string name;
  std::string action;
  ParameterDescription payload;
  bool operator==(const EventDescription&) const = default;
};

/// Compact, typed description of one hosted service.
struct ServiceDescription {
  std::string service_id;
  std::string ns;
  std::string port_type;
  std::vector<OperationDescription> operations;
  std::vector<EventDescription> events;
  bool operator==(const ServiceDescription&) const = default;

  const OperationDescription* find_operation(std::string_view name) const;
  const EventDescription* find_event(std::string_view name) const;
  /// Type map reconstructed from the parameter elements.
  std::map<std::string, PrimitiveType> types() const;
};

ServiceDescription describe(const ServiceDefinition& service);
xml::Element describe_service(const ServiceDefinition& service);
xml::Element to_xml(const ServiceDescription& description);
/// Throws MalformedMetadata.
ServiceDescription parse_service_description(const xml::Element& el);

/// GetMetadata response carrying the service description.
SoapEnvelope build_description_response(const SoapEnvelope& request, const ServiceDefinition& service);
ServiceDescription parse_description_response(const SoapEnvelope& response);
ServiceDescription get_service_description(const std::string& service_address, std::chrono::milliseconds timeout,
                                           ProfileVersion version = ProfileVersion::V1_1);

/// Sends `request` to `url` and parses the reply; a fault reply raises
/// FaultError. Shared by every client-side exchange.
SoapEnvelope soap_call(const std::string& url, const SoapEnvelope& request, std::chrono::milliseconds timeout);

}  // namespace dpws
