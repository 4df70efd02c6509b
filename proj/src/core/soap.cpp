#include "core/soap.hpp"

#include <boost/uuid/random_generator.hpp>
#include <boost/uuid/uuid_io.hpp>
#include <cctype>

#include "core/error.hpp"

namespace dpws {

using xml::Element;
using xml::QName;

namespace {

QName wsa(const VersionProfile& p, std::string local) { return QName(p.wsa, std::move(local)); }

bool fault_well_formed(const Element& body) {
  if (body.name != soapq::soap("Fault")) return false;
  const Element* code = body.child(soapq::soap("Code"));
  const Element* reason = body.child(soapq::soap("Reason"));
  if (!code || !reason) return false;
  const Element* value = code->child(soapq::soap("Value"));
  const Element* text = reason->child(soapq::soap("Text"));
  return value && !value->trimmed_text().empty() && text && !text->trimmed_text().empty();
}

}  // namespace

const Element* SoapEnvelope::header(const QName& name) const {
  for (const auto& h : extension_headers)
    if (h.name == name) return &h;
  return nullptr;
}

std::string new_message_id() {
  thread_local boost::uuids::random_generator gen;
  return "urn:uuid:" + boost::uuids::to_string(gen());
}

bool is_uuid(std::string_view text) {
  if (text.size() != 36) return false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (i == 8 || i == 13 || i == 18 || i == 23) {
      if (text[i] != '-') return false;
    } else if (!std::isxdigit(static_cast<unsigned char>(text[i]))) {
      return false;
    }
  }
  return true;
}

Element epr_to_xml(const EndpointReference& epr, QName element_name, const VersionProfile& profile) {
  Element el(std::move(element_name));
  el.add(wsa(profile, "Address"), epr.address);
  if (!epr.reference_parameters.empty()) {
    Element& params = el.add(Element(wsa(profile, "ReferenceParameters")));
    for (const auto& p : epr.reference_parameters) params.add(p);
  }
  return el;
}

EndpointReference epr_from_xml(const Element& el, const VersionProfile& profile) {
  EndpointReference epr;
  const Element* address = el.child(wsa(profile, "Address"));
  if (!address) fail(ErrorCode::NotSoap, "endpoint reference without Address");
  epr.address = address->trimmed_text();
  if (const Element* params = el.child(wsa(profile, "ReferenceParameters")))
    epr.reference_parameters = params->children;
  return epr;
}

SoapEnvelope parse_envelope(std::string_view bytes, std::size_t max_bytes) {
  Element root = xml::parse(bytes, {max_bytes, 32});
  if (root.name != soapq::soap("Envelope")) fail(ErrorCode::NotSoap, "root element is " + root.name.clark());

  SoapEnvelope env;
  const Element* header = root.child(soapq::soap("Header"));
  const Element* body = root.child(soapq::soap("Body"));
  if (!body) fail(ErrorCode::NotSoap, "envelope has no Body");

  const VersionProfile* profile = nullptr;
  if (header) {
    for (const auto& h : header->children) {
      if (h.name.local == "Action") profile = VersionProfile::from_addressing(h.name.ns);
      if (profile) break;
    }
  }
  if (!profile) fail(ErrorCode::MissingAction, "no WS-Addressing Action header");
  env.version = profile->version;

  bool seen_action = false;
  for (const auto& h : header->children) {
    if (h.name.ns != profile->wsa || h.attribute(wsa(*profile, "IsReferenceParameter"))) {
      env.extension_headers.push_back(h);
      continue;
    }
    const auto& local = h.name.local;
    if (local == "Action") {
      env.addressing.action = h.trimmed_text();
      seen_action = true;
    } else if (local == "MessageID") {
      env.addressing.message_id = h.trimmed_text();
    } else if (local == "To") {
      env.addressing.to = h.trimmed_text();
    } else if (local == "RelatesTo") {
      env.addressing.relates_to = h.trimmed_text();
    } else if (local == "ReplyTo") {
      env.addressing.reply_to = epr_from_xml(h, *profile);
    } else {
      env.extension_headers.push_back(h);
    }
  }
  if (!seen_action || env.addressing.action.empty()) fail(ErrorCode::MissingAction, "empty Action header");

  if (!body->children.empty()) {
    env.body = body->children.front();
    env.is_fault = env.body->name == soapq::soap("Fault");
  }
  return env;
}

std::string serialize_envelope(const SoapEnvelope& env, const xml::WriteOptions& options) {
  if (env.is_fault != (env.body && env.body->name == soapq::soap("Fault")))
    fail(ErrorCode::InvariantViolation, "fault flag does not match body");
  if (env.is_fault && !fault_well_formed(*env.body))
    fail(ErrorCode::InvariantViolation, "fault body lacks code or reason");
  if (env.addressing.action.empty()) fail(ErrorCode::InvariantViolation, "envelope without action");

  const VersionProfile& p = env.profile();
  Element root(soapq::soap("Envelope"));
  Element& header = root.add(Element(soapq::soap("Header")));
  header.add(wsa(p, "Action"), env.addressing.action);
  if (!env.addressing.message_id.empty()) header.add(wsa(p, "MessageID"), env.addressing.message_id);
  if (env.addressing.relates_to) header.add(wsa(p, "RelatesTo"), *env.addressing.relates_to);
  if (env.addressing.reply_to) header.add(epr_to_xml(*env.addressing.reply_to, wsa(p, "ReplyTo"), p));
  if (!env.addressing.to.empty()) header.add(wsa(p, "To"), env.addressing.to);
  for (const auto& h : env.extension_headers) header.add(h);
  Element& body = root.add(Element(soapq::soap("Body")));
  if (env.body) body.add(*env.body);
  return xml::write(root, options);
}

SoapEnvelope make_request(ProfileVersion version, std::string action, std::string to,
                          std::optional<Element> body) {
  SoapEnvelope env;
  env.version = version;
  env.addressing.message_id = new_message_id();
  env.addressing.action = std::move(action);
  env.addressing.to = std::move(to);
  env.body = std::move(body);
  return env;
}

SoapEnvelope make_reply(const SoapEnvelope& request, std::string action, std::optional<Element> body) {
  SoapEnvelope env;
  env.version = request.version;
  env.addressing.message_id = new_message_id();
  env.addressing.action = std::move(action);
  env.addressing.to = request.addressing.reply_to ? request.addressing.reply_to->address
                                                  : request.profile().wsa_anonymous;
  if (!request.addressing.message_id.empty()) env.addressing.relates_to = request.addressing.message_id;
  env.body = std::move(body);
  return env;
}

namespace {

Element fault_body(std::string_view code, const QName& subcode, const std::string& reason) {
  Element fault(soapq::soap("Fault"));
  Element& c = fault.add(Element(soapq::soap("Code")));
  c.add(soapq::soap("Value"), std::string(code));
  if (!subcode.local.empty()) {
    Element& sc = c.add(Element(soapq::soap("Subcode")));
    auto prefix = xml::canonical_prefix(subcode.ns);
    sc.add(soapq::soap("Value"), prefix ? *prefix + ":" + subcode.local : subcode.clark());
  }
  Element& r = fault.add(Element(soapq::soap("Reason")));
  Element text(soapq::soap("Text"), reason.empty() ? std::string("unspecified") : reason);
  text.set_attribute(QName(std::string(ns::kXml), "lang"), "en");
  r.add(std::move(text));
  return fault;
}

}  // namespace

SoapEnvelope make_fault(const SoapEnvelope& request, std::string_view code, const QName& subcode,
                        const std::string& reason) {
  SoapEnvelope env = make_reply(request, request.profile().fault_action(), fault_body(code, subcode, reason));
  env.is_fault = true;
  return env;
}

SoapEnvelope make_fault(ProfileVersion version, std::string_view code, const QName& subcode,
                        const std::string& reason) {
  const auto& p = VersionProfile::get(version);
  SoapEnvelope env = make_request(version, p.fault_action(), p.wsa_anonymous, fault_body(code, subcode, reason));
  env.is_fault = true;
  return env;
}

std::optional<FaultInfo> read_fault(const SoapEnvelope& env) {
  if (!env.is_fault || !env.body) return std::nullopt;
  FaultInfo info;
  if (const Element* code = env.body->child(soapq::soap("Code"))) {
    if (const Element* v = code->child(soapq::soap("Value"))) info.code = v->trimmed_text();
    if (const Element* sc = code->child(soapq::soap("Subcode")))
      if (const Element* v = sc->child(soapq::soap("Value"))) info.subcode = v->trimmed_text();
  }
  if (const Element* reason = env.body->child(soapq::soap("Reason")))
    if (const Element* t = reason->child(soapq::soap("Text"))) info.reason = t->trimmed_text();
  return info;
}

void address_to(SoapEnvelope& env, const EndpointReference& epr) {
  env.addressing.to = epr.address;
  const auto& p = env.profile();
  for (auto param : epr.reference_parameters) {
    param.set_attribute(wsa(p, "IsReferenceParameter"), "true");
    env.extension_headers.push_back(std::move(param));
  }
}

}  // namespace dpws
