#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "core/profile.hpp"
#include "core/xml.hpp"

namespace dpws {

inline constexpr std::size_t kUdpEnvelopeLimit = 4096;
inline constexpr std::size_t kHttpEnvelopeLimit = 1 << 20;

struct EndpointReference {
  std::string address;
  std::vector<xml::Element> reference_parameters;

  bool operator==(const EndpointReference&) const = default;
};

struct AddressingHeaders {
  std::string message_id;
  std::string to;
  std::string action;
  std::optional<std::string> relates_to;
  std::optional<EndpointReference> reply_to;

  bool operator==(const AddressingHeaders&) const = default;
};

struct SoapEnvelope {
  ProfileVersion version = ProfileVersion::V1_1;
  AddressingHeaders addressing;
  std::vector<xml::Element> extension_headers;
  std::optional<xml::Element> body;
  bool is_fault = false;

  bool operator==(const SoapEnvelope&) const = default;

  const VersionProfile& profile() const { return VersionProfile::get(version); }
  /// First extension header with this name.
  const xml::Element* header(const xml::QName& name) const;
};

struct FaultInfo {
  std::string code;     // canonical form, e.g. "s:Sender"
  std::string subcode;  // canonical/Clark form, may be empty
  std::string reason;
};

/// urn:uuid:<random v4 uuid>
std::string new_message_id();
bool is_uuid(std::string_view text);

SoapEnvelope parse_envelope(std::string_view bytes, std::size_t max_bytes = kHttpEnvelopeLimit);
std::string serialize_envelope(const SoapEnvelope& env, const xml::WriteOptions& options = {});

/// New request envelope with a fresh MessageID.
SoapEnvelope make_request(ProfileVersion version, std::string action, std::string to,
                          std::optional<xml::Element> body = std::nullopt);
/// Reply to `request`: RelatesTo = request MessageID, To = anonymous.
SoapEnvelope make_reply(const SoapEnvelope& request, std::string action,
                        std::optional<xml::Element> body = std::nullopt);

/// Sender-side faults use "s:Sender", receiver-side "s:Receiver". `subcode`
/// is a QName (often an addressing or eventing fault name).
SoapEnvelope make_fault(const SoapEnvelope& request, std::string_view code, const xml::QName& subcode,
                        const std::string& reason);
SoapEnvelope make_fault(ProfileVersion version, std::string_view code, const xml::QName& subcode,
                        const std::string& reason);
std::optional<FaultInfo> read_fault(const SoapEnvelope& env);

/// Points `env` at `epr`: To = address, reference parameters echoed as
/// headers marked IsReferenceParameter.
void address_to(SoapEnvelope& env, const EndpointReference& epr);

xml::Element epr_to_xml(const EndpointReference& epr, xml::QName element_name, const VersionProfile& profile);
EndpointReference epr_from_xml(const xml::Element& el, const VersionProfile& profile);

namespace soapq {
inline xml::QName soap(std::string local) { return {std::string(ns::kSoap), std::move(local)}; }
}  // namespace soapq

}  // namespace dpws
