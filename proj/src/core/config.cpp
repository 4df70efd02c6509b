#include "core/config.hpp"

#include <spdlog/spdlog.h>
#include <yaml-cpp/yaml.h>

#include <atomic>
#include <charconv>
#include <fstream>
#include <random>
#include <set>
#include <thread>

#include "core/error.hpp"

namespace dpws {

namespace {

struct Ctx {
  std::string source;
  std::map<std::string, std::string> namespaces;
};

[[noreturn]] void config_error(const Ctx& ctx, const YAML::Mark& mark, const std::string& path, const std::string& why) {
  std::string where = ctx.source;
  if (mark.line >= 0) where += ":" + std::to_string(mark.line + 1) + ":" + std::to_string(mark.column + 1);
  fail(ErrorCode::InvalidConfig, where + ": " + path + ": " + why);
}

std::string snake(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (std::isupper(static_cast<unsigned char>(c))) {
      out += '_';
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else {
      out += c;
    }
  }
  return out;
}

/// Map view with snake_case keys and an allow-list.
class Fields {
 public:
  Fields(const Ctx& ctx, const YAML::Node& node, std::string path, std::set<std::string> allowed)
      : ctx_(ctx), node_(node), path_(std::move(path)) {
    if (!node.IsMap()) config_error(ctx, node.Mark(), path_, "expected a mapping");
    for (auto it : node) {
      std::string key = snake(it.first.as<std::string>());
      if (!allowed.count(key)) config_error(ctx, it.first.Mark(), path_, "unknown field '" + it.first.as<std::string>() + "'");
      if (fields_.count(key)) config_error(ctx, it.first.Mark(), path_, "duplicate field '" + key + "'");
      fields_[key] = it.second;
    }
  }

  bool has(const std::string& key) const { return fields_.count(key) && !fields_.at(key).IsNull(); }
  YAML::Node get(const std::string& key) const { return has(key) ? fields_.at(key) : YAML::Node(); }
  std::string at(const std::string& key) const { return path_ + "." + key; }
  const YAML::Mark mark(const std::string& key) const { return has(key) ? fields_.at(key).Mark() : node_.Mark(); }

  [[noreturn]] void error(const std::string& key, const std::string& why) const {
    config_error(ctx_, mark(key), at(key), why);
  }

  std::string string(const std::string& key, const std::string& fallback = {}) const {
    if (!has(key)) return fallback;
    auto n = get(key);
    if (!n.IsScalar()) error(key, "expected a string");
    return n.Scalar();
  }

  std::string required(const std::string& key) const {
    if (!has(key)) config_error(ctx_, node_.Mark(), at(key), "required field missing");
    return string(key);
  }

  long long integer(const std::string& key, long long fallback, long long lo, long long hi) const {
    if (!has(key)) return fallback;
    auto n = get(key);
    long long v = 0;
    const std::string& s = n.IsScalar() ? n.Scalar() : std::string();
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (!n.IsScalar() || s.empty() || r.ec != std::errc{} || r.ptr != s.data() + s.size())
      error(key, "expected an integer, got '" + s + "'");
    if (v < lo || v > hi) error(key, std::to_string(v) + " is outside " + std::to_string(lo) + ".." + std::to_string(hi));
    return v;
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    auto s = string(key);
    if (s == "true") return true;
    if (s == "false") return false;
    error(key, "expected true or false");
  }

  std::vector<std::string> strings(const std::string& key) const {
    std::vector<std::string> out;
    if (!has(key)) return out;
    auto n = get(key);
    if (n.IsScalar()) return {n.Scalar()};
    if (!n.IsSequence()) error(key, "expected a string or a list of strings");
    for (auto item : n) {
      if (!item.IsScalar()) config_error(ctx_, item.Mark(), at(key), "expected a string");
      out.push_back(item.Scalar());
    }
    return out;
  }

  const Ctx& ctx() const { return ctx_; }
  const YAML::Node& node() const { return node_; }
  const std::string& path() const { return path_; }

 private:
  const Ctx& ctx_;
  YAML::Node node_;
  std::string path_;
  std::map<std::string, YAML::Node> fields_;
};

xml::QName parse_qname(const Fields& f, const std::string& key, const std::string& text, ProfileVersion version) {
  if (!text.empty() && text.front() == '{') {
    auto q = xml::QName::from_clark(text);
    if (q.ns.empty() || !xml::is_valid_local_name(q.local)) f.error(key, "'" + text + "' is not a QName");
    return q;
  }
  auto colon = text.find(':');
  if (colon == std::string::npos) {
    if (!xml::is_valid_local_name(text)) f.error(key, "'" + text + "' is not a valid name");
    auto it = f.ctx().namespaces.find("");
    return {it != f.ctx().namespaces.end() ? it->second : std::string(kDefaultServiceNamespace), text};
  }
  std::string prefix = text.substr(0, colon), local = text.substr(colon + 1);
  std::string ns;
  if (auto it = f.ctx().namespaces.find(prefix); it != f.ctx().namespaces.end()) ns = it->second;
  else if (prefix == "dpws") ns = VersionProfile::get(version).dpws;
  if (ns.empty()) f.error(key, "undeclared prefix '" + prefix + "' in '" + text + "'");
  if (!xml::is_valid_local_name(local)) f.error(key, "'" + text + "' is not a QName");
  return {ns, local};
}

std::optional<PrimitiveType> type_ref(const Fields& f, const std::string& key,
                                      const std::map<std::string, PrimitiveType>& types, std::optional<std::string>& name) {
  if (!f.has(key)) return std::nullopt;
  name = f.string(key);
  auto it = types.find(*name);
  if (it == types.end()) f.error(key, "unknown type '" + *name + "'");
  return it->second;
}

struct BehaviorContext {
  const Fields& owner;
  std::string label;
  std::optional<PrimitiveType> input;
  std::optional<PrimitiveType> output;
  const HookRegistry& hooks;
};

[[noreturn]] void behavior_error(const BehaviorContext& b, const YAML::Node& node, const std::string& why) {
  config_error(b.owner.ctx(), node.Mark(), b.owner.at("behavior"), b.label + ": " + why);
}

Value scalar_value(const BehaviorContext& b, const YAML::Node& node, PrimitiveType type) {
  if (!node.IsScalar()) behavior_error(b, node, "expected a " + std::string(to_string(type)) + " value");
  try {
    return decode_value(type, node.Scalar(), "value");
  } catch (const Error& e) {
    behavior_error(b, node, e.what());
  }
}

OperationHandler build_behavior(const BehaviorContext& b, const YAML::Node& spec) {
  std::string kind;
  YAML::Node arg;
  if (spec.IsScalar()) {
    kind = spec.Scalar();
  } else if (spec.IsMap() && spec.size() == 1) {
    kind = spec.begin()->first.as<std::string>();
    arg = spec.begin()->second;
  } else {
    behavior_error(b, spec, "expected a behavior name or a single-key mapping");
  }

  if (kind == "constant") {
    if (!b.output) {
      if (arg && !arg.IsNull()) behavior_error(b, spec, "constant value given but the operation has no output");
      return [](const Value&, const Completion& done) { done(); };
    }
    if (!arg || arg.IsNull()) behavior_error(b, spec, "constant needs a value");
    Value v = scalar_value(b, arg, *b.output);
    return [v](const Value&, const Completion& done) { done(v); };
  }
  if (kind == "counter") {
    if (b.output != PrimitiveType::Int && b.output != PrimitiveType::Float)
      behavior_error(b, spec, "counter needs an int or float output");
    double start = 0, step = 1;
    if (arg && arg.IsMap()) {
      for (auto it : arg) {
        auto key = it.first.as<std::string>();
        Value v = scalar_value(b, it.second, PrimitiveType::Float);
        if (key == "start") start = std::get<double>(v);
        else if (key == "step") step = std::get<double>(v);
        else behavior_error(b, it.first, "unknown counter field '" + key + "'");
      }
    } else if (arg && !arg.IsNull()) {
      behavior_error(b, arg, "counter takes {start, step}");
    }
    auto n = std::make_shared<std::atomic<std::int64_t>>(0);
    bool as_int = b.output == PrimitiveType::Int;
    return [n, start, step, as_int](const Value&, const Completion& done) {
      double v = start + step * static_cast<double>(n->fetch_add(1));
      if (as_int) done(static_cast<std::int64_t>(v));
      else done(v);
    };
  }
  if (kind == "echo") {
    if (!b.input || b.input != b.output) behavior_error(b, spec, "echo needs matching input and output types");
    return [](const Value& in, const Completion& done) { done(in); };
  }
  if (kind == "random") {
    if (b.output != PrimitiveType::Int && b.output != PrimitiveType::Float)
      behavior_error(b, spec, "random needs an int or float output");
    if (!arg || !arg.IsSequence() || arg.size() != 2) behavior_error(b, spec, "random takes [min, max]");
    Value lo = scalar_value(b, arg[0], *b.output), hi = scalar_value(b, arg[1], *b.output);
    if (hi < lo) behavior_error(b, spec, "random min exceeds max");
    auto rng = std::make_shared<std::pair<std::mutex, std::mt19937_64>>();
    rng->second.seed(std::random_device{}());
    if (*b.output == PrimitiveType::Int) {
      std::uniform_int_distribution<std::int64_t> dist(std::get<std::int64_t>(lo), std::get<std::int64_t>(hi));
      return [rng, dist](const Value&, const Completion& done) mutable {
        std::int64_t v;
        {
          std::lock_guard lock(rng->first);
          v = dist(rng->second);
        }
        done(v);
      };
    }
    std::uniform_real_distribution<double> dist(std::get<double>(lo), std::get<double>(hi));
    return [rng, dist](const Value&, const Completion& done) mutable {
      double v;
      {
        std::lock_guard lock(rng->first);
        v = dist(rng->second);
      }
      done(v);
    };
  }
  if (kind == "script") {
    if (!arg || !arg.IsScalar()) behavior_error(b, spec, "script takes a hook name");
    auto it = b.hooks.find(arg.Scalar());
    if (it == b.hooks.end()) behavior_error(b, arg, "unknown script hook '" + arg.Scalar() + "'");
    OperationHandler hook = it->second;
    auto out = b.output;
    // Hooks may answer with the lexical form; coerce it to the declared output type.
    return [hook, out](const Value& in, const Completion& done) {
      hook(in, Completion([done, out](Completion::Outcome o) {
        if (!o.ok) return done.fail(o.error);
        if (out && *out != PrimitiveType::String && std::holds_alternative<std::string>(o.value)) {
          try {
            o.value = decode_value(*out, std::get<std::string>(o.value), "output");
          } catch (const Error& e) {
            return done.fail(e.what());
          }
        }
        done(std::move(o.value));
      }));
    };
  }
  behavior_error(b, spec, "unknown behavior '" + kind + "'");
}

OperationHandler with_delay(OperationHandler inner, Millis delay) {
  if (delay.count() <= 0) return inner;
  return [inner, delay](const Value& in, const Completion& done) {
    std::this_thread::sleep_for(delay);
    inner(in, done);
  };
}

ProfileVersion parse_version(const Fields& f) {
  auto v = f.string("version", "1.1");
  if (v == "1.1" || v == "v1_1") return ProfileVersion::V1_1;
  if (v == "1.0" || v == "v1_0") return ProfileVersion::V1_0;
  f.error("version", "expected 1.1 or 1.0, got '" + v + "'");
}

DeviceConfig parse_device(const Ctx& ctx, const YAML::Node& node) {
  Fields f(ctx, node, "device",
           {"address", "types", "metadata_version", "manufacturer", "model_name", "model_number", "model_url",
            "presentation_url", "friendly_name", "firmware_version", "serial_number", "scopes", "http_port",
            "version", "host", "advertise_host", "interface", "ipv6", "handler_timeout_ms", "strict_input",
            "max_grant_s", "default_grant_s", "drain_ms"});
  DeviceConfig c;
  c.version = parse_version(f);
  c.address = f.required("address");
  if (normalize_uuid(c.address).empty()) f.error("address", "'" + c.address + "' is not a UUID");
  for (const auto& t : f.strings("types")) c.types.push_back(parse_qname(f, "types", t, c.version));

  if (f.has("metadata_version")) {
    auto s = f.string("metadata_version");
    if (s == "now") {
      c.metadata_version = static_cast<std::uint64_t>(
          std::chrono::duration_cast<std::chrono::milliseconds>(SystemClock::now().time_since_epoch()).count());
    } else {
      auto r = std::from_chars(s.data(), s.data() + s.size(), c.metadata_version);
      if (s.empty() || r.ec != std::errc{} || r.ptr != s.data() + s.size())
        f.error("metadata_version", "expected an unsigned integer or 'now', got '" + s + "'");
    }
  }
  c.this_model.manufacturer = f.required("manufacturer");
  c.this_model.model_name = f.required("model_name");
  c.this_model.model_number = f.string("model_number");
  c.this_model.model_url = f.string("model_url");
  c.this_model.presentation_url = f.string("presentation_url");
  c.this_device.friendly_name = f.required("friendly_name");
  c.this_device.firmware_version = f.string("firmware_version");
  c.this_device.serial_number = f.string("serial_number");
  c.scopes = f.strings("scopes");
  c.http_port = static_cast<int>(f.integer("http_port", 8080, 1, 65535));
  c.bind_host = f.string("host", c.bind_host);
  c.advertise_host = f.string("advertise_host");
  c.discovery.interface_v4 = f.string("interface");
  c.discovery.ipv6 = f.boolean("ipv6", false);
  c.handler_timeout = Millis(f.integer("handler_timeout_ms", 30000, 1, 3600000));
  c.strict_input = f.boolean("strict_input", true);
  c.eventing.max_grant = std::chrono::seconds(f.integer("max_grant_s", 3600, 1, 86400 * 365));
  c.eventing.default_grant = std::chrono::seconds(f.integer("default_grant_s", 3600, 1, 86400 * 365));
  c.drain_window = Millis(f.integer("drain_ms", 2000, 0, 60000));
  try {
    validate_config(c);
  } catch (const Error& e) {
    config_error(ctx, node.Mark(), "device", e.what());
  }
  return c;
}

void parse_service(const Ctx& ctx, const YAML::Node& node, const std::string& path, const HookRegistry& hooks,
                   LoadedConfig& out) {
  Fields f(ctx, node, path, {"id", "namespace", "port_type", "serialized", "types", "operations", "events"});
  ServiceDefinition svc;
  svc.service_id = f.required("id");
  if (!is_iri_safe_token(svc.service_id)) f.error("id", "'" + svc.service_id + "' is not an IRI-safe token");
  svc.ns = f.string("namespace", svc.ns);
  svc.port_type = f.string("port_type");
  svc.serialized = f.boolean("serialized", false);
  if (f.has("types")) {
    auto types = f.get("types");
    if (!types.IsMap()) f.error("types", "expected a mapping of name to primitive type");
    for (auto it : types) {
      auto name = it.first.as<std::string>();
      auto t = it.second.IsScalar() ? primitive_from_string(it.second.Scalar()) : std::nullopt;
      if (!t) config_error(ctx, it.second.Mark(), f.at("types") + "." + name, "expected int, float, bool or string");
      svc.types[name] = *t;
    }
  }
  if (f.has("operations")) {
    auto ops = f.get("operations");
    if (!ops.IsSequence()) f.error("operations", "expected a list");
    std::size_t i = 0;
    for (auto opnode : ops) {
      Fields of(ctx, opnode, f.at("operations") + "[" + std::to_string(i++) + "]",
                {"name", "input", "output", "behavior", "delay_ms"});
      OperationDefinition op;
      op.name = of.required("name");
      auto in = type_ref(of, "input", svc.types, op.input);
      auto outt = type_ref(of, "output", svc.types, op.output);
      if (!of.has("behavior")) of.error("behavior", "operation '" + op.name + "' needs a behavior");
      BehaviorContext b{of, "operation '" + op.name + "'", in, outt, hooks};
      op.handler = with_delay(build_behavior(b, of.get("behavior")), Millis(of.integer("delay_ms", 0, 0, 600000)));
      svc.operations.push_back(std::move(op));
    }
  }
  if (f.has("events")) {
    auto evs = f.get("events");
    if (!evs.IsSequence()) f.error("events", "expected a list");
    std::size_t i = 0;
    for (auto evnode : evs) {
      Fields ef(ctx, evnode, f.at("events") + "[" + std::to_string(i++) + "]",
                {"name", "payload", "every_ms", "behavior"});
      EventSourceDefinition ev;
      ev.name = ef.required("name");
      std::optional<std::string> payload;
      auto pt = type_ref(ef, "payload", svc.types, payload);
      if (!payload) ef.error("payload", "event '" + ev.name + "' needs a payload type");
      ev.payload = *payload;
      if (ef.has("every_ms")) {
        PeriodicEvent pe;
        pe.service_id = svc.service_id;
        pe.event = ev.name;
        pe.interval = Millis(ef.integer("every_ms", 1000, 10, 86400000));
        BehaviorContext b{ef, "event '" + ev.name + "'", std::nullopt, pt, hooks};
        YAML::Node spec = ef.has("behavior") ? ef.get("behavior") : YAML::Node("counter");
        pe.source = build_behavior(b, spec);
        out.periodic.push_back(std::move(pe));
      } else if (ef.has("behavior")) {
        ef.error("behavior", "event behavior needs every_ms");
      }
      svc.events.push_back(std::move(ev));
    }
  }
  try {
    validate_service(svc);
  } catch (const Error& e) {
    config_error(ctx, node.Mark(), path, e.what());
  }
  for (const auto& existing : out.services)
    if (existing.service_id == svc.service_id) f.error("id", "duplicate service id '" + svc.service_id + "'");
  out.services.push_back(std::move(svc));
}

}  // namespace

HookRegistry builtin_hooks() {
  HookRegistry hooks;
  hooks["fail"] = [](const Value&, const Completion& done) { done.fail("operation configured to fail"); };
  return hooks;
}

LoadedConfig load_config_string(const std::string& text, const HookRegistry& hooks, const std::string& source_name) {
  Ctx ctx{source_name, {}};
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    config_error(ctx, e.mark, "(document)", e.msg);
  }
  if (!root.IsMap()) config_error(ctx, root.Mark(), "(document)", "expected a mapping with a device section");
  LoadedConfig out;
  try {
    Fields top(ctx, root, "", {"namespaces", "device", "services"});
    if (top.has("namespaces")) {
      auto nsmap = top.get("namespaces");
      if (!nsmap.IsMap()) top.error("namespaces", "expected a mapping of prefix to namespace");
      for (auto it : nsmap) ctx.namespaces[it.first.as<std::string>()] = it.second.as<std::string>();
    }
    if (!top.has("device")) config_error(ctx, root.Mark(), "device", "required section missing");
    out.device = parse_device(ctx, top.get("device"));
    if (top.has("services")) {
      auto services = top.get("services");
      if (!services.IsSequence()) top.error("services", "expected a list");
      std::size_t i = 0;
      for (auto s : services) parse_service(ctx, s, "services[" + std::to_string(i++) + "]", hooks, out);
    }
  } catch (const YAML::Exception& e) {
    config_error(ctx, e.mark, "(document)", e.msg);
  }
  return out;
}

LoadedConfig load_config_file(const std::string& path, const HookRegistry& hooks) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::InvalidConfig, path + ": cannot open config file");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_config_string(text, hooks, path);
}

HostedDevice::HostedDevice(LoadedConfig config)
    : device_(std::make_unique<Device>(std::move(config.device))), periodic_(std::move(config.periodic)) {
  for (auto& svc : config.services) device_->add_service(std::move(svc));
}

HostedDevice::~HostedDevice() { stop(); }

void HostedDevice::start() {
  device_->start();
  if (periodic_.empty()) return;
  timers_ = std::make_unique<Scheduler>();
  for (const auto& pe : periodic_) {
    Device* dev = device_.get();
    timers_->every(pe.interval, [dev, pe] {
      Completion done([dev, pe](Completion::Outcome o) {
        if (!o.ok) {
          spdlog::warn("event source {}/{} failed: {}", pe.service_id, pe.event, o.error);
          return;
        }
        try {
          dev->emit(pe.service_id, pe.event, o.value);
        } catch (const std::exception& e) {
          spdlog::warn("emit {}/{} failed: {}", pe.service_id, pe.event, e.what());
        }
      });
      pe.source({}, done);
    });
  }
}

void HostedDevice::stop() {
  if (timers_) timers_->stop();
  timers_.reset();
  if (device_) device_->stop();
}

}  // namespace dpws
