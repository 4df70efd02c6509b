#include <cmath>
#include <cstring>

#include "core/metadata.hpp"
#include "core/model.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace dpws;
using namespace std::chrono_literals;
using xml::Element;
using xml::QName;

namespace {

DeviceMetadata sample_metadata() {
  const auto& p = VersionProfile::v1_1();
  DeviceMetadata m;
  m.this_model = {"_MANUFACTURER_", "_MODEL_NAME_", "_MODEL_NUMBER_", "http://example.com/_MODEL_URL",
                  "http://example.com/_PRESENTATION_URL"};
  m.this_device = {"_FRIENDLY_NAME_", "0.0.1", "12345"};
  m.relationship.host.address = "urn:uuid:" + test::kSampleAddress;
  m.relationship.host_types = {{p.dpws, "Device"}, {std::string(kDefaultServiceNamespace), "_PORT_TYPE_"}};
  HostedService svc;
  svc.epr.address = "http://127.0.0.1:8080/" + test::kSampleAddress + "/_SERVICE_ID_";
  svc.types = {{std::string(kDefaultServiceNamespace), "_SERVICE_ID_"}};
  svc.service_id = "_SERVICE_ID_";
  m.relationship.hosted = {svc};
  m.metadata_version = 1700000000000;
  return m;
}

SoapEnvelope get_request() {
  return make_request(ProfileVersion::V1_1, action::kTransferGet, "urn:uuid:" + test::kSampleAddress);
}

ServiceDefinition sample_service() {
  ServiceDefinition s;
  s.service_id = "_SERVICE_ID_";
  s.types = {{"temperature", PrimitiveType::Int}};
  s.operations.push_back({"GetTemperature", std::nullopt, "temperature", [](const Value&, const Completion& done) {
                            done(std::int64_t{0});
                          }});
  return s;
}

}  // namespace

TEST_CASE("metadata response round trips and carries the sample attributes") {
  DeviceMetadata m = sample_metadata();
  SoapEnvelope res = build_metadata_response(get_request(), m);
  std::string wire = serialize_envelope(res);
  CHECK(wire.find("_FRIENDLY_NAME_") != std::string::npos);
  CHECK(wire.find("12345") != std::string::npos);
  DeviceMetadata back = parse_metadata_response(parse_envelope(wire));
  CHECK(back == m);
  CHECK(back.this_model.manufacturer == "_MANUFACTURER_");
}

TEST_CASE("device without hosted services has a host-only relationship") {
  DeviceMetadata m = sample_metadata();
  m.relationship.hosted.clear();
  DeviceMetadata back = parse_metadata_response(parse_envelope(serialize_envelope(build_metadata_response(get_request(), m))));
  CHECK(back.relationship.hosted.empty());
  CHECK(back.relationship.host == m.relationship.host);
}

TEST_CASE("missing sections are MalformedMetadata") {
  const auto& p = VersionProfile::v1_1();
  SoapEnvelope res = build_metadata_response(get_request(), sample_metadata());
  auto drop = [&](const std::string& dialect) {
    SoapEnvelope copy = res;
    auto& sections = copy.body->children;
    sections.erase(std::remove_if(sections.begin(), sections.end(),
                                  [&](const Element& e) {
                                    const std::string* d = e.attribute({"", "Dialect"});
                                    return d && *d == dialect;
                                  }),
                   sections.end());
    REQUIRE(sections.size() < res.body->children.size());
    return copy;
  };
  for (const auto& d : {p.dialect_relationship(), p.dialect_this_model(), p.dialect_this_device()}) {
    SoapEnvelope broken = drop(d);
    CHECK_MESSAGE(test::code_of([&] { parse_metadata_response(broken); }) == ErrorCode::MalformedMetadata, d);
  }
}

TEST_CASE("non-Get request yields a fault") {
  SoapEnvelope req = make_request(ProfileVersion::V1_1, "urn:other", "urn:to");
  CHECK(read_fault(build_metadata_response(req, sample_metadata())).has_value());
}

TEST_CASE("temperature sample service description") {
  ServiceDescription d = describe(sample_service());
  REQUIRE(d.operations.size() == 1);
  const auto& op = d.operations[0];
  CHECK(op.name == "GetTemperature");
  CHECK_FALSE(op.input.has_value());
  REQUIRE(op.output.has_value());
  CHECK(op.output->type == PrimitiveType::Int);
  CHECK(op.output->element.local == "temperature");
  CHECK(op.action == sample_service().action_for("GetTemperature"));

  Element xml_form = describe_service(sample_service());
  CHECK(parse_service_description(xml::parse(xml::write(xml_form))) == d);
}

TEST_CASE("description with every primitive round trips through GetMetadata") {
  ServiceDefinition s;
  s.service_id = "mixed";
  s.ns = "urn:example:mixed";
  s.port_type = "MixedPort";
  s.types = {{"i", PrimitiveType::Int}, {"f", PrimitiveType::Float}, {"b", PrimitiveType::Bool},
             {"s", PrimitiveType::String}};
  auto noop = [](const Value&, const Completion& done) { done(); };
  s.operations = {{"A", "i", "f", noop}, {"B", "b", std::nullopt, noop}, {"C", std::nullopt, "s", noop}};
  s.events = {{"Changed", "f"}};
  SoapEnvelope req = make_request(ProfileVersion::V1_1, action::kMexGetMetadata, "http://h/mixed");
  SoapEnvelope res = parse_envelope(serialize_envelope(build_description_response(req, s)));
  ServiceDescription d = parse_description_response(res);
  CHECK(d == describe(s));
  CHECK(d.types() == s.types);
  CHECK(d.port_type == "MixedPort");
  REQUIRE(d.find_event("Changed"));
  CHECK(d.find_event("Changed")->payload.type == PrimitiveType::Float);
}

TEST_CASE("metadata fetch from a closed port fails with a transport error") {
  auto port = test::free_port();
  auto code = test::code_of([&] { get_metadata("http://127.0.0.1:" + std::to_string(port) + "/x", 500ms); });
  CHECK((code == ErrorCode::ConnectFailure || code == ErrorCode::Timeout));
}

TEST_CASE("primitive codec table") {
  struct Row {
    PrimitiveType type;
    const char* text;
    bool ok;
    Value want;
  };
  const std::vector<Row> rows = {
      {PrimitiveType::Int, "42", true, std::int64_t{42}},
      {PrimitiveType::Int, "-7", true, std::int64_t{-7}},
      {PrimitiveType::Int, " 5 ", true, std::int64_t{5}},
      {PrimitiveType::Int, "+3", true, std::int64_t{3}},
      {PrimitiveType::Int, "9223372036854775807", true, std::int64_t{9223372036854775807}},
      {PrimitiveType::Int, "9223372036854775808", false, {}},
      {PrimitiveType::Int, "12.5", false, {}},
      {PrimitiveType::Int, "abc", false, {}},
      {PrimitiveType::Int, "", false, {}},
      {PrimitiveType::Int, "0x10", false, {}},
      {PrimitiveType::Float, "1.5", true, 1.5},
      {PrimitiveType::Float, "-2e3", true, -2000.0},
      {PrimitiveType::Float, ".25", true, 0.25},
      {PrimitiveType::Float, "INF", true, HUGE_VAL},
      {PrimitiveType::Float, "-INF", true, -HUGE_VAL},
      {PrimitiveType::Float, "inf", false, {}},
      {PrimitiveType::Float, "abc", false, {}},
      {PrimitiveType::Float, "1.5.5", false, {}},
      {PrimitiveType::Float, "", false, {}},
      {PrimitiveType::Bool, "true", true, true},
      {PrimitiveType::Bool, "false", true, false},
      {PrimitiveType::Bool, "yes", false, {}},
      {PrimitiveType::Bool, "TRUE", false, {}},
      {PrimitiveType::String, " keep  spaces ", true, std::string(" keep  spaces ")},
      {PrimitiveType::String, "", true, std::string()},
  };
  for (const auto& r : rows) {
    CAPTURE(r.text);
    if (r.ok) {
      CHECK(decode_value(r.type, r.text) == r.want);
    } else {
      try {
        decode_value(r.type, r.text, "temperature");
        FAIL("accepted");
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::TypeMismatch);
        CHECK(std::string(e.what()).find("temperature") != std::string::npos);
      }
    }
  }
  CHECK(std::isnan(std::get<double>(decode_value(PrimitiveType::Float, "NaN"))));
}

TEST_CASE("encode then decode is the identity for every primitive") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 5000; ++i) {
    std::int64_t n = static_cast<std::int64_t>(rng());
    CHECK(decode_value(PrimitiveType::Int, encode_value(n)) == Value(n));
    double d;
    std::uint64_t bits = rng();
    std::memcpy(&d, &bits, sizeof(d));
    if (std::isnan(d)) continue;
    CHECK(decode_value(PrimitiveType::Float, encode_value(d)) == Value(d));
  }
  CHECK(encode_value(true) == "true");
  CHECK(encode_value(HUGE_VAL) == "INF");
}

TEST_CASE("completion delivers exactly once") {
  int calls = 0;
  Completion c([&](Completion::Outcome) { ++calls; });
  c(std::int64_t{1});
  CHECK(c.completed());
  CHECK(test::code_of([&] { c(std::int64_t{2}); }) == ErrorCode::InternalError);
  CHECK(test::code_of([&] { c.fail("late"); }) == ErrorCode::InternalError);
  CHECK(calls == 1);
}

TEST_CASE("service validation") {
  ServiceDefinition s = sample_service();
  s.operations[0].output = "pressure";
  CHECK(test::code_of([&] { validate_service(s); }) == ErrorCode::InvalidService);
  s = sample_service();
  s.operations.push_back(s.operations[0]);
  CHECK(test::code_of([&] { validate_service(s); }) == ErrorCode::InvalidService);
  s = sample_service();
  s.service_id = "has space";
  CHECK(test::code_of([&] { validate_service(s); }) == ErrorCode::InvalidService);
  CHECK(test::code_of([&] { validate_service(sample_service()); }) == ErrorCode::Ok);
}
