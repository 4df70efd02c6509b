#pragma once

#include <algorithm>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "core/eventing.hpp"

namespace test::eventing {

using namespace dpws;
using xml::Element;
using xml::QName;

inline const std::string kManager = "http://127.0.0.1:1/dev/svc";
inline const std::string kTempAction = "urn:ex/Temperature";
inline const std::string kDoorAction = "urn:ex/Door";

inline QName wse(const char* local) { return {std::string(ns::kEventing), local}; }

struct FakeClock {
  TimePoint now = TimePoint(std::chrono::seconds(1'700'000'000));
  ClockFn fn() {
    return [this] { return now; };
  }
};

struct Recorder {
  struct Call {
    std::string url;
    SoapEnvelope env;
  };
  std::mutex mutex;
  std::vector<Call> calls;
  std::function<int(const std::string&)> status = [](const std::string&) { return 202; };

  DeliveryTransport transport() {
    return [this](const std::string& url, const std::string& body, Millis) {
      {
        std::lock_guard lock(mutex);
        calls.push_back({url, parse_envelope(body)});
      }
      return status(url);
    };
  }
  std::size_t count(const std::string& action) {
    std::lock_guard lock(mutex);
    return std::count_if(calls.begin(), calls.end(), [&](const Call& c) { return c.env.addressing.action == action; });
  }
};

inline SoapEnvelope subscribe_request(const std::string& sink, std::optional<std::string> expires = std::nullopt,
                               std::vector<std::string> filter = {}, std::optional<std::string> end_to = std::nullopt,
                               std::string mode = action::kPushDelivery) {
  const auto& p = VersionProfile::v1_1();
  Element body(wse("Subscribe"));
  if (end_to) body.add(epr_to_xml({*end_to, {}}, wse("EndTo"), p));
  Element& delivery = body.add(Element(wse("Delivery")));
  delivery.set_attribute({"", "Mode"}, mode);
  delivery.add(epr_to_xml({sink, {}}, wse("NotifyTo"), p));
  if (expires) body.add(wse("Expires"), *expires);
  if (!filter.empty()) {
    std::string text;
    for (auto& f : filter) text += (text.empty() ? "" : " ") + f;
    Element& fe = body.add(wse("Filter"), text);
    fe.set_attribute({"", "Dialect"}, p.action_filter_dialect());
  }
  return make_request(ProfileVersion::V1_1, action::kSubscribe, kManager, body);
}

struct Granted {
  std::string id;
  std::chrono::milliseconds expires;
};

inline Granted subscribe_ok(SubscriptionManager& m, const SoapEnvelope& req) {
  SoapEnvelope res = m.handle(req);
  if (auto f = read_fault(res)) throw std::runtime_error("subscribe faulted: " + f->reason);
  if (res.addressing.action != action::kSubscribeResponse) throw std::runtime_error("not a SubscribeResponse");
  const auto& p = VersionProfile::v1_1();
  EndpointReference mgr = epr_from_xml(*res.body->child(wse("SubscriptionManager")), p);
  if (mgr.reference_parameters.size() != 1) throw std::runtime_error("expected one reference parameter");
  return {mgr.reference_parameters[0].text, parse_duration(res.body->child(wse("Expires"))->text)};
}

inline SoapEnvelope manage_request(const std::string& action, const std::string& id,
                            std::optional<std::string> expires = std::nullopt) {
  std::string local = action.substr(action.rfind('/') + 1);
  Element body(wse(local.c_str()));
  if (expires) body.add(wse("Expires"), *expires);
  SoapEnvelope req = make_request(ProfileVersion::V1_1, action, kManager, body);
  Element ident(identifier_qname(), id);
  address_to(req, EndpointReference{kManager, {ident}});
  return req;
}

inline std::string fault_subcode(const SoapEnvelope& env) {
  auto f = read_fault(env);
  return f ? f->subcode : "";
}

inline Element temp_body(int v) { return Element({"urn:ex", "Temperature"}, std::to_string(v)); }

}  // namespace test::eventing
