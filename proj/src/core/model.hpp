#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "core/xml.hpp"

namespace dpws {

/// The four primitive types a service type map may name.
enum class PrimitiveType { Int, Float, Bool, String };

std::string_view to_string(PrimitiveType t);
std::optional<PrimitiveType> primitive_from_string(std::string_view name);

/// Typed value at API boundaries; monostate means "absent".
using Value = std::variant<std::monostate, std::int64_t, double, bool, std::string>;

bool is_absent(const Value& v);
std::optional<PrimitiveType> type_of(const Value& v);
/// Human-readable rendering (strings unquoted, absent as "(none)").
std::string describe(const Value& v);

/// Lexical forms: int = decimal 64-bit, float = shortest round-trip decimal
/// (INF/-INF/NaN), bool = true/false, string = verbatim.
std::string encode_value(const Value& v);
/// Throws TypeMismatch naming `element` when the text is not a valid lexical
/// form of `type`. Surrounding whitespace is ignored except for strings.
Value decode_value(PrimitiveType type, std::string_view text, std::string_view element = "value");

/// Handler completion. The first call delivers the result; any later call
/// throws InternalError and is otherwise ignored.
class Completion {
 public:
  struct Outcome {
    bool ok = true;
    Value value;
    std::string error;
  };
  using Sink = std::function<void(Outcome)>;

  explicit Completion(Sink sink);

  void operator()(Value output = {}) const;
  void fail(std::string reason) const;
  bool completed() const;

 private:
  struct State;
  std::shared_ptr<State> state_;
};

using OperationHandler = std::function<void(const Value& input, const Completion& done)>;

struct OperationDefinition {
  std::string name;
  std::optional<std::string> input;   // type name from the service type map
  std::optional<std::string> output;
  OperationHandler handler;
};

struct EventSourceDefinition {
  std::string name;
  std::string payload;  // type name
};

inline constexpr std::string_view kDefaultServiceNamespace = "http://dpws.local/services";

struct ServiceDefinition {
  std::string service_id;
  /// Namespace for the port type, operation elements and action IRIs.
  std::string ns = std::string(kDefaultServiceNamespace);
  /// Port type local name; defaults to service_id when empty.
  std::string port_type;
  std::map<std::string, PrimitiveType> types;
  std::vector<OperationDefinition> operations;
  std::vector<EventSourceDefinition> events;
  /// Run handlers one at a time instead of concurrently.
  bool serialized = false;

  const std::string& port_type_name() const { return port_type.empty() ? service_id : port_type; }
  xml::QName port_type_qname() const { return {ns, port_type_name()}; }
  std::string action_for(std::string_view operation) const;
  std::string response_action_for(std::string_view operation) const { return action_for(operation) + "Response"; }
  std::string event_action(std::string_view event) const { return action_for(event); }

  const OperationDefinition* find_operation(std::string_view name) const;
  const EventSourceDefinition* find_event(std::string_view name) const;
};

/// Throws InvalidService for duplicate operation/event names, dangling type
/// names, or an unusable identifier.
void validate_service(const ServiceDefinition& svc);
bool is_iri_safe_token(std::string_view s);

/// Encodes a typed operation/event payload as `<ns:{wrapper}>` with one child
/// named after the type (`<ns:{type}>text</ns:{type}>`), or no child when absent.
xml::Element encode_payload(const std::string& ns, const std::string& wrapper, const std::optional<std::string>& type_name,
                            const std::map<std::string, PrimitiveType>& types, const Value& value);
/// Strict inverse of encode_payload: unknown children raise TypeMismatch.
Value decode_payload(const xml::Element& wrapper, const std::optional<std::string>& type_name,
                     const std::map<std::string, PrimitiveType>& types, const std::string& ns, bool strict = true);

}  // namespace dpws
