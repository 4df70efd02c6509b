#include "core/metadata.hpp"

#include <charconv>

#include "core/error.hpp"
#include "core/http.hpp"

namespace dpws {

using xml::Element;
using xml::QName;

namespace {

QName dp(const VersionProfile& p, std::string local) { return QName(p.dpws, std::move(local)); }
QName mex(std::string local) { return QName(std::string(ns::kMex), std::move(local)); }
QName ext(std::string local) { return QName(std::string(ns::kExt), std::move(local)); }
QName plain(std::string local) { return QName({}, std::move(local)); }

void add_if(Element& parent, QName name, const std::string& value) {
  if (!value.empty()) parent.add(std::move(name), value);
}

std::string text_of(const Element& parent, const QName& name) {
  const Element* c = parent.child(name);
  return c ? c->trimmed_text() : std::string();
}

[[noreturn]] void malformed(const std::string& why) { fail(ErrorCode::MalformedMetadata, why); }

const Element& section(const Element& metadata, const std::string& dialect) {
  for (const Element* s : metadata.children_named(mex("MetadataSection"))) {
    const std::string* d = s->attribute(plain("Dialect"));
    if (d && *d == dialect && !s->children.empty()) return s->children.front();
  }
  malformed("metadata section " + dialect + " missing");
}

Element service_entry(const QName& name, const EndpointReference& epr, const std::vector<QName>& types,
                      const std::string& service_id, const VersionProfile& p) {
  Element el(name);
  el.add(epr_to_xml(epr, QName(p.wsa, "EndpointReference"), p));
  if (!types.empty()) el.add(dp(p, "Types"), xml::join_qname_list(types));
  if (!service_id.empty()) el.add(dp(p, "ServiceId"), service_id);
  return el;
}

}  // namespace

const HostedService* Relationship::find(const std::string& service_id) const {
  for (const auto& h : hosted)
    if (h.service_id == service_id) return &h;
  return nullptr;
}

SoapEnvelope build_metadata_response(const SoapEnvelope& request, const DeviceMetadata& meta) {
  if (request.addressing.action != action::kTransferGet)
    return make_fault(request, "s:Sender", QName(request.profile().wsa, "ActionNotSupported"),
                      "action not supported on the device endpoint: " + request.addressing.action);
  const VersionProfile& p = request.profile();
  Element metadata(mex("Metadata"));

  Element& model_section = metadata.add(Element(mex("MetadataSection")));
  model_section.set_attribute(plain("Dialect"), p.dialect_this_model());
  Element& model = model_section.add(Element(dp(p, "ThisModel")));
  model.add(dp(p, "Manufacturer"), meta.this_model.manufacturer);
  model.add(dp(p, "ModelName"), meta.this_model.model_name);
  add_if(model, dp(p, "ModelNumber"), meta.this_model.model_number);
  add_if(model, dp(p, "ModelUrl"), meta.this_model.model_url);
  add_if(model, dp(p, "PresentationUrl"), meta.this_model.presentation_url);

  Element& device_section = metadata.add(Element(mex("MetadataSection")));
  device_section.set_attribute(plain("Dialect"), p.dialect_this_device());
  Element& device = device_section.add(Element(dp(p, "ThisDevice")));
  device.add(dp(p, "FriendlyName"), meta.this_device.friendly_name);
  add_if(device, dp(p, "FirmwareVersion"), meta.this_device.firmware_version);
  add_if(device, dp(p, "SerialNumber"), meta.this_device.serial_number);

  Element& rel_section = metadata.add(Element(mex("MetadataSection")));
  rel_section.set_attribute(plain("Dialect"), p.dialect_relationship());
  Element& rel = rel_section.add(Element(dp(p, "Relationship")));
  rel.set_attribute(plain("Type"), p.relationship_host());
  rel.add(service_entry(dp(p, "Host"), meta.relationship.host, meta.relationship.host_types, {}, p));
  for (const auto& h : meta.relationship.hosted) rel.add(service_entry(dp(p, "Hosted"), h.epr, h.types, h.service_id, p));

  metadata.add(ext("MetadataVersion"), std::to_string(meta.metadata_version));
  return make_reply(request, action::kTransferGetResponse, std::move(metadata));
}

DeviceMetadata parse_metadata_response(const SoapEnvelope& response) {
  if (!response.body || response.body->name != mex("Metadata")) malformed("GetResponse without a Metadata element");
  const VersionProfile& p = response.profile();
  const Element& metadata = *response.body;
  DeviceMetadata meta;

  const Element& model = section(metadata, p.dialect_this_model());
  meta.this_model.manufacturer = text_of(model, dp(p, "Manufacturer"));
  meta.this_model.model_name = text_of(model, dp(p, "ModelName"));
  meta.this_model.model_number = text_of(model, dp(p, "ModelNumber"));
  meta.this_model.model_url = text_of(model, dp(p, "ModelUrl"));
  meta.this_model.presentation_url = text_of(model, dp(p, "PresentationUrl"));

  const Element& device = section(metadata, p.dialect_this_device());
  meta.this_device.friendly_name = text_of(device, dp(p, "FriendlyName"));
  meta.this_device.firmware_version = text_of(device, dp(p, "FirmwareVersion"));
  meta.this_device.serial_number = text_of(device, dp(p, "SerialNumber"));

  const Element& rel = section(metadata, p.dialect_relationship());
  const Element* host = rel.child(dp(p, "Host"));
  if (!host) malformed("Relationship without Host");
  auto read_entry = [&](const Element& el) {
    HostedService h;
    const Element* epr = el.child(QName(p.wsa, "EndpointReference"));
    if (!epr) malformed("relationship entry without EndpointReference");
    h.epr = epr_from_xml(*epr, p);
    if (const Element* t = el.child(dp(p, "Types"))) h.types = xml::parse_qname_list(t->text);
    h.service_id = text_of(el, dp(p, "ServiceId"));
    return h;
  };
  HostedService host_entry = read_entry(*host);
  meta.relationship.host = host_entry.epr;
  meta.relationship.host_types = host_entry.types;
  for (const Element* h : rel.children_named(dp(p, "Hosted"))) {
    auto entry = read_entry(*h);
    if (entry.service_id.empty()) malformed("hosted service without ServiceId");
    meta.relationship.hosted.push_back(std::move(entry));
  }

  if (meta.this_model.manufacturer.empty() || meta.this_model.model_name.empty())
    malformed("ThisModel lacks manufacturer or model name");
  if (meta.this_device.friendly_name.empty()) malformed("ThisDevice lacks a friendly name");

  if (const Element* v = metadata.child(ext("MetadataVersion"))) {
    auto t = v->trimmed_text();
    auto r = std::from_chars(t.data(), t.data() + t.size(), meta.metadata_version);
    if (r.ec != std::errc{} || r.ptr != t.data() + t.size()) malformed("bad MetadataVersion '" + t + "'");
  }
  return meta;
}

SoapEnvelope soap_call(const std::string& url, const SoapEnvelope& request, std::chrono::milliseconds timeout) {
  HttpExchange ex = http_post(url, serialize_envelope(request), timeout);
  SoapEnvelope response;
  try {
    response = parse_envelope(ex.response_body);
  } catch (const Error& e) {
    fail(ErrorCode::ProtocolError, "HTTP " + std::to_string(ex.status) + " from " + url + ": " + e.what());
  }
  if (auto fault = read_fault(response)) throw FaultError(fault->code, fault->subcode, fault->reason);
  return response;
}

DeviceMetadata get_metadata(const std::string& xaddr, std::chrono::milliseconds timeout, ProfileVersion version) {
  SoapEnvelope request = make_request(version, action::kTransferGet, xaddr);
  request.addressing.reply_to = EndpointReference{VersionProfile::get(version).wsa_anonymous, {}};
  return parse_metadata_response(soap_call(xaddr, request, timeout));
}

ServiceDescription describe(const ServiceDefinition& service) {
  ServiceDescription d;
  d.service_id = service.service_id;
  d.ns = service.ns;
  d.port_type = service.port_type_name();
  auto param = [&](const std::optional<std::string>& type_name) -> std::optional<ParameterDescription> {
    if (!type_name) return std::nullopt;
    return ParameterDescription{QName(service.ns, *type_name), service.types.at(*type_name)};
  };
  for (const auto& op : service.operations)
    d.operations.push_back({op.name, service.action_for(op.name), service.response_action_for(op.name), param(op.input),
                            param(op.output)});
  for (const auto& ev : service.events)
    d.events.push_back({ev.name, service.event_action(ev.name), *param(ev.payload)});
  return d;
}

const OperationDescription* ServiceDescription::find_operation(std::string_view name) const {
  for (const auto& op : operations)
    if (op.name == name) return &op;
  return nullptr;
}

const EventDescription* ServiceDescription::find_event(std::string_view name) const {
  for (const auto& ev : events)
    if (ev.name == name) return &ev;
  return nullptr;
}

std::map<std::string, PrimitiveType> ServiceDescription::types() const {
  std::map<std::string, PrimitiveType> out;
  for (const auto& op : operations) {
    if (op.input) out[op.input->element.local] = op.input->type;
    if (op.output) out[op.output->element.local] = op.output->type;
  }
  for (const auto& ev : events) out[ev.payload.element.local] = ev.payload.type;
  return out;
}

namespace {

Element param_xml(const char* tag, const ParameterDescription& p) {
  Element el(ext(tag));
  el.set_attribute(plain("Element"), p.element.local);
  el.set_attribute(plain("Type"), std::string(to_string(p.type)));
  return el;
}

ParameterDescription param_from_xml(const Element& el, const std::string& service_ns) {
  const std::string* name = el.attribute(plain("Element"));
  const std::string* type = el.attribute(plain("Type"));
  if (!name || !type) malformed("parameter without Element or Type");
  auto prim = primitive_from_string(*type);
  if (!prim) malformed("unknown primitive type '" + *type + "'");
  return {QName(service_ns, *name), *prim};
}

std::string required_attr(const Element& el, const char* name) {
  const std::string* v = el.attribute(plain(name));
  if (!v || v->empty()) malformed(el.name.local + " without " + name);
  return *v;
}

}  // namespace

Element to_xml(const ServiceDescription& d) {
  Element root(ext("ServiceDescription"));
  root.set_attribute(plain("ServiceId"), d.service_id);
  root.set_attribute(plain("Namespace"), d.ns);
  root.set_attribute(plain("PortType"), d.port_type);
  for (const auto& op : d.operations) {
    Element& el = root.add(Element(ext("Operation")));
    el.set_attribute(plain("Name"), op.name);
    el.set_attribute(plain("Action"), op.action);
    el.set_attribute(plain("ResponseAction"), op.response_action);
    if (op.input) el.add(param_xml("Input", *op.input));
    if (op.output) el.add(param_xml("Output", *op.output));
  }
  for (const auto& ev : d.events) {
    Element& el = root.add(Element(ext("Event")));
    el.set_attribute(plain("Name"), ev.name);
    el.set_attribute(plain("Action"), ev.action);
    el.add(param_xml("Payload", ev.payload));
  }
  return root;
}

Element describe_service(const ServiceDefinition& service) { return to_xml(describe(service)); }

ServiceDescription parse_service_description(const Element& el) {
  if (el.name != ext("ServiceDescription")) malformed("not a service description: " + el.name.clark());
  ServiceDescription d;
  d.service_id = required_attr(el, "ServiceId");
  d.ns = required_attr(el, "Namespace");
  d.port_type = required_attr(el, "PortType");
  for (const auto& c : el.children) {
    if (c.name == ext("Operation")) {
      OperationDescription op;
      op.name = required_attr(c, "Name");
      op.action = required_attr(c, "Action");
      op.response_action = required_attr(c, "ResponseAction");
      if (const Element* in = c.child(ext("Input"))) op.input = param_from_xml(*in, d.ns);
      if (const Element* out = c.child(ext("Output"))) op.output = param_from_xml(*out, d.ns);
      if (d.find_operation(op.name)) malformed("duplicate operation '" + op.name + "'");
      d.operations.push_back(std::move(op));
    } else if (c.name == ext("Event")) {
      EventDescription ev;
      ev.name = required_attr(c, "Name");
      ev.action = required_attr(c, "Action");
      const Element* payload = c.child(ext("Payload"));
      if (!payload) malformed("event '" + ev.name + "' without Payload");
      ev.payload = param_from_xml(*payload, d.ns);
      d.events.push_back(std::move(ev));
    }
  }
  return d;
}

SoapEnvelope build_description_response(const SoapEnvelope& request, const ServiceDefinition& service) {
  Element metadata(mex("Metadata"));
  Element& s = metadata.add(Element(mex("MetadataSection")));
  s.set_attribute(plain("Dialect"), kServiceDescriptionDialect);
  s.add(describe_service(service));
  return make_reply(request, action::kMexGetMetadataResponse, std::move(metadata));
}

ServiceDescription parse_description_response(const SoapEnvelope& response) {
  if (!response.body || response.body->name != mex("Metadata")) malformed("GetMetadata response without Metadata");
  return parse_service_description(section(*response.body, kServiceDescriptionDialect));
}

ServiceDescription get_service_description(const std::string& service_address, std::chrono::milliseconds timeout,
                                           ProfileVersion version) {
  SoapEnvelope request = make_request(version, action::kMexGetMetadata, service_address);
  request.addressing.reply_to = EndpointReference{VersionProfile::get(version).wsa_anonymous, {}};
  return parse_description_response(soap_call(service_address, request, timeout));
}

}  // namespace dpws
