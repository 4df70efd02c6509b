#include "core/model.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <set>

#include "core/error.hpp"

namespace dpws {

std::string_view to_string(PrimitiveType t) {
  switch (t) {
    case PrimitiveType::Int: return "int";
    case PrimitiveType::Float: return "float";
    case PrimitiveType::Bool: return "bool";
    case PrimitiveType::String: return "string";
  }
  return "?";
}

std::optional<PrimitiveType> primitive_from_string(std::string_view name) {
  if (name == "int") return PrimitiveType::Int;
  if (name == "float") return PrimitiveType::Float;
  if (name == "bool") return PrimitiveType::Bool;
  if (name == "string") return PrimitiveType::String;
  return std::nullopt;
}

bool is_absent(const Value& v) { return std::holds_alternative<std::monostate>(v); }

std::optional<PrimitiveType> type_of(const Value& v) {
  switch (v.index()) {
    case 1: return PrimitiveType::Int;
    case 2: return PrimitiveType::Float;
    case 3: return PrimitiveType::Bool;
    case 4: return PrimitiveType::String;
    default: return std::nullopt;
  }
}

std::string describe(const Value& v) {
  if (is_absent(v)) return "(none)";
  return encode_value(v);
}

std::string encode_value(const Value& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return {};
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(x);
        } else if constexpr (std::is_same_v<T, double>) {
          if (std::isnan(x)) return "NaN";
          if (std::isinf(x)) return x > 0 ? "INF" : "-INF";
          char buf[64];
          auto r = std::to_chars(buf, buf + sizeof(buf), x);
          return std::string(buf, r.ptr);
        } else if constexpr (std::is_same_v<T, bool>) {
          return x ? "true" : "false";
        } else {
          return x;
        }
      },
      v);
}

namespace {

std::string_view trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void mismatch(PrimitiveType type, std::string_view text, std::string_view element) {
  fail(ErrorCode::TypeMismatch, "element '" + std::string(element) + "': '" + std::string(text) + "' is not a valid " +
                                    std::string(to_string(type)));
}

}  // namespace

Value decode_value(PrimitiveType type, std::string_view text, std::string_view element) {
  if (type == PrimitiveType::String) return std::string(text);
  auto t = trim(text);
  switch (type) {
    case PrimitiveType::Int: {
      std::int64_t v = 0;
      auto s = t;
      if (!s.empty() && s.front() == '+') s.remove_prefix(1);
      auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (s.empty() || r.ec != std::errc{} || r.ptr != s.data() + s.size()) mismatch(type, text, element);
      return v;
    }
    case PrimitiveType::Float: {
      if (t == "INF" || t == "+INF") return HUGE_VAL;
      if (t == "-INF") return -HUGE_VAL;
      if (t == "NaN") return std::nan("");
      double v = 0;
      auto s = t;
      if (!s.empty() && s.front() == '+') s.remove_prefix(1);
      // from_chars also accepts "inf"/"nan" spellings; only the xs:double ones above are allowed.
      if (s.empty() || !(std::isdigit(static_cast<unsigned char>(s.front())) || s.front() == '-' || s.front() == '.'))
        mismatch(type, text, element);
      auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || std::isinf(v) || std::isnan(v))
        mismatch(type, text, element);
      return v;
    }
    case PrimitiveType::Bool:
      if (t == "true") return true;
      if (t == "false") return false;
      mismatch(type, text, element);
    case PrimitiveType::String: break;
  }
  return std::string(text);
}

struct Completion::State {
  Sink sink;
  std::atomic<bool> done{false};
};

Completion::Completion(Sink sink) : state_(std::make_shared<State>()) { state_->sink = std::move(sink); }

void Completion::operator()(Value output) const {
  if (state_->done.exchange(true)) dpws::fail(ErrorCode::InternalError, "operation completion invoked more than once");
  state_->sink({true, std::move(output), {}});
}

void Completion::fail(std::string reason) const {
  if (state_->done.exchange(true)) dpws::fail(ErrorCode::InternalError, "operation completion invoked more than once");
  state_->sink({false, {}, std::move(reason)});
}

bool Completion::completed() const { return state_->done; }

std::string ServiceDefinition::action_for(std::string_view operation) const {
  std::string base = ns;
  if (!base.empty() && base.back() == '/') base.pop_back();
  return base + "/" + port_type_name() + "/" + std::string(operation);
}

const OperationDefinition* ServiceDefinition::find_operation(std::string_view name) const {
  for (const auto& op : operations)
    if (op.name == name) return &op;
  return nullptr;
}

const EventSourceDefinition* ServiceDefinition::find_event(std::string_view name) const {
  for (const auto& ev : events)
    if (ev.name == name) return &ev;
  return nullptr;
}

bool is_iri_safe_token(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '.' ||
              c == '_' || c == '~';
    if (!ok) return false;
  }
  return true;
}

void validate_service(const ServiceDefinition& svc) {
  auto bad = [&](const std::string& why) { fail(ErrorCode::InvalidService, "service '" + svc.service_id + "': " + why); };
  if (!is_iri_safe_token(svc.service_id)) bad("service id must be a non-empty IRI-safe token");
  if (svc.ns.empty()) bad("namespace must not be empty");
  if (!xml::is_valid_local_name(svc.port_type_name())) bad("port type is not a valid local name");
  for (const auto& [name, _] : svc.types)
    if (!xml::is_valid_local_name(name)) bad("type name '" + name + "' is not a valid element name");
  std::set<std::string> names;
  for (const auto& op : svc.operations) {
    if (!xml::is_valid_local_name(op.name)) bad("operation name '" + op.name + "' is not a valid element name");
    if (!names.insert(op.name).second) bad("duplicate operation '" + op.name + "'");
    for (const auto* ref : {&op.input, &op.output})
      if (*ref && !svc.types.count(**ref))
        bad("operation '" + op.name + "' references unknown type '" + **ref + "'");
    if (!op.handler) bad("operation '" + op.name + "' has no handler");
  }
  std::set<std::string> events;
  for (const auto& ev : svc.events) {
    if (!xml::is_valid_local_name(ev.name)) bad("event name '" + ev.name + "' is not a valid element name");
    if (!events.insert(ev.name).second) bad("duplicate event '" + ev.name + "'");
    if (names.count(ev.name)) bad("event '" + ev.name + "' clashes with an operation name");
    if (!svc.types.count(ev.payload)) bad("event '" + ev.name + "' references unknown type '" + ev.payload + "'");
  }
}

xml::Element encode_payload(const std::string& ns, const std::string& wrapper, const std::optional<std::string>& type_name,
                            const std::map<std::string, PrimitiveType>& types, const Value& value) {
  xml::Element el(xml::QName(ns, wrapper));
  if (!type_name) {
    if (!is_absent(value)) fail(ErrorCode::TypeMismatch, "'" + wrapper + "' takes no value");
    return el;
  }
  auto it = types.find(*type_name);
  if (it == types.end()) fail(ErrorCode::TypeMismatch, "unknown type '" + *type_name + "'");
  if (type_of(value) != it->second)
    fail(ErrorCode::TypeMismatch, "'" + wrapper + "' expects " + std::string(to_string(it->second)) + " for '" +
                                      *type_name + "'");
  el.add(xml::QName(ns, *type_name), encode_value(value));
  return el;
}

Value decode_payload(const xml::Element& wrapper, const std::optional<std::string>& type_name,
                     const std::map<std::string, PrimitiveType>& types, const std::string& ns, bool strict) {
  if (!type_name) {
    if (strict && !wrapper.children.empty())
      fail(ErrorCode::TypeMismatch, "unexpected element '" + wrapper.children.front().name.local + "' in '" +
                                        wrapper.name.local + "'");
    return {};
  }
  auto it = types.find(*type_name);
  if (it == types.end()) fail(ErrorCode::TypeMismatch, "unknown type '" + *type_name + "'");
  const xml::Element* found = nullptr;
  for (const auto& c : wrapper.children) {
    if (c.name == xml::QName(ns, *type_name) && !found) {
      found = &c;
    } else if (strict) {
      fail(ErrorCode::TypeMismatch, "unexpected element '" + c.name.local + "' in '" + wrapper.name.local + "'");
    }
  }
  if (!found) fail(ErrorCode::TypeMismatch, "missing element '" + *type_name + "' in '" + wrapper.name.local + "'");
  return decode_value(it->second, found->text, *type_name);
}

}  // namespace dpws
