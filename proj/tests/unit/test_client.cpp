#include <arpa/inet.h>

#include <mutex>

#include "core/client.hpp"
#include "core/config.hpp"
#include "core/http.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace dpws;
using namespace std::chrono_literals;

namespace {

struct Sample {
  MulticastEndpoint ep = test::loopback_endpoint();
  std::unique_ptr<HostedDevice> host;
  std::shared_ptr<Client> client;

  explicit Sample(ProfileVersion version = ProfileVersion::V1_1) {
    auto cfg = test::sample_config(ep);
    cfg.device.version = version;
    cfg.device.multicast_policy = RetransmitPolicy::none();
    for (auto& s : cfg.services) {
      s.types["reading"] = PrimitiveType::Float;
      s.events.push_back({"TemperatureChanged", "temperature"});
      s.events.push_back({"Other", "reading"});
      s.operations.push_back({"Broken", std::nullopt, "temperature",
                              [](const Value&, const Completion& done) { done.fail("sensor offline"); }});
    }
    host = std::make_unique<HostedDevice>(cfg);
    host->start();
    ClientOptions opts;
    opts.version = version;
    opts.probe.version = version;
    opts.probe.endpoint = ep;
    opts.probe.policy = RetransmitPolicy::none();
    opts.sink_host = "127.0.0.1";
    opts.sink_bind_host = "127.0.0.1";
    client = Client::create(opts);
  }
  ~Sample() { host->stop(); }
  Device& device() { return host->device(); }
  RemoteDevice open() { return client->open(device().xaddrs()[0], 2000ms); }
};

}  // namespace

TEST_CASE("discover finds the local device and honours the filter") {
  Sample f;
  auto found = f.client->discover({}, 1000ms);
  REQUIRE(found.size() == 1);
  CHECK(found[0].advertisement.epr.address == "urn:uuid:" + test::kSampleAddress);
  CHECK(f.client->discover(ProbeFilter{{{"urn:other", "Lamp"}}, {}}, 300ms).empty());
  CHECK(test::code_of([&] { f.client->discover({}, 0ms); }) == ErrorCode::InvalidTimeout);

  RemoteDevice opened = f.client->open(found[0], 2000ms);
  REQUIRE(opened.metadata);
  CHECK(opened.metadata->this_model.manufacturer == "_MANUFACTURER_");
}

TEST_CASE("open exposes GetTemperature with an int output") {
  Sample f;
  RemoteDevice d = f.open();
  REQUIRE(d.metadata);
  CHECK(*d.metadata == f.device().metadata());
  const RemoteService* s = d.find_service("_SERVICE_ID_");
  REQUIRE(s);
  const OperationDescription* op = s->find_operation("GetTemperature");
  REQUIRE(op);
  REQUIRE(op->output);
  CHECK(op->output->type == PrimitiveType::Int);
  CHECK_FALSE(op->input.has_value());
}

TEST_CASE("invoke") {
  Sample f;
  RemoteDevice d = f.open();
  const RemoteService& s = *d.find_service("_SERVICE_ID_");
  CHECK(f.client->invoke(s, "GetTemperature", {}, 2000ms) == Value(std::int64_t{0}));
  CHECK(f.client->idle_connections() >= 1);
  CHECK(test::code_of([&] { f.client->invoke(s, "Nope", {}, 2000ms); }) == ErrorCode::UnknownOperation);
  try {
    f.client->invoke(s, "Broken", {}, 2000ms);
    FAIL("no fault");
  } catch (const FaultError& e) {
    CHECK(e.code() == ErrorCode::FaultReceived);
    CHECK(e.reason().find("sensor offline") != std::string::npos);
  }
}

TEST_CASE("local validation happens before any network traffic") {
  RemoteService s;
  s.service_id = "svc";
  s.epr.address = "http://127.0.0.1:" + std::to_string(test::free_port()) + "/nowhere";
  s.description.service_id = "svc";
  s.description.ns = "urn:x";
  s.description.operations.push_back({"Get", "urn:x/Get", "urn:x/GetResponse", std::nullopt,
                                      ParameterDescription{{"urn:x", "t"}, PrimitiveType::Int}});
  s.description.operations.push_back({"Set", "urn:x/Set", "urn:x/SetResponse",
                                      ParameterDescription{{"urn:x", "t"}, PrimitiveType::Int}, std::nullopt});
  auto client = Client::create();
  CHECK(test::code_of([&] { client->invoke(s, "Get", std::int64_t{1}, 500ms); }) == ErrorCode::TypeMismatch);
  CHECK(test::code_of([&] { client->invoke(s, "Set", std::string("1"), 500ms); }) == ErrorCode::TypeMismatch);
  CHECK(test::code_of([&] { client->invoke(s, "Set", Value{}, 500ms); }) == ErrorCode::TypeMismatch);
  CHECK(test::code_of([&] { client->invoke(s, "Get", {}, 0ms); }) == ErrorCode::InvalidTimeout);
  CHECK(test::code_of([&] { client->invoke(s, "Get", {}, 500ms); }) == ErrorCode::ConnectFailure);
}

TEST_CASE("unresponsive xaddr times out") {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) == 0);
  REQUIRE(::listen(fd, 8) == 0);
  socklen_t len = sizeof(sa);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len);
  auto client = Client::create();
  auto code = test::code_of([&] { client->open("http://127.0.0.1:" + std::to_string(ntohs(sa.sin_port)) + "/d", 300ms); });
  ::close(fd);
  CHECK(code == ErrorCode::Timeout);
}

TEST_CASE("description that names another service is MalformedMetadata") {
  ServiceDefinition other;
  other.service_id = "impostor";
  other.types = {{"t", PrimitiveType::Int}};
  DeviceMetadata meta;
  meta.this_model.manufacturer = "m";
  meta.this_model.model_name = "n";
  meta.this_device.friendly_name = "f";
  meta.relationship.host.address = "urn:uuid:" + test::kSampleAddress;
  HttpServer fake(
      [&](const HttpRequest& r) {
        SoapEnvelope req = parse_envelope(r.body);
        HttpResponse res;
        if (req.addressing.action == action::kTransferGet)
          res.body = serialize_envelope(build_metadata_response(req, meta));
        else
          res.body = serialize_envelope(build_description_response(req, other));
        return res;
      },
      HttpServerOptions{"127.0.0.1", 0});
  fake.start();
  std::string base = "http://127.0.0.1:" + std::to_string(fake.port());
  HostedService hs;
  hs.epr.address = base + "/svc";
  hs.service_id = "expected";
  meta.relationship.hosted = {hs};
  auto client = Client::create();
  CHECK(test::code_of([&] { client->open(base + "/dev", 1000ms); }) == ErrorCode::MalformedMetadata);
}

TEST_CASE("subscribe: five events, unsubscribe, then silence") {
  Sample f;
  RemoteDevice d = f.open();
  const RemoteService& s = *d.find_service("_SERVICE_ID_");
  std::mutex mutex;
  std::vector<std::uint64_t> seqs;
  std::vector<Value> values;
  auto sub = f.client->subscribe(s, "TemperatureChanged", [&](const Notification& n) {
    std::lock_guard lock(mutex);
    CHECK(n.event == "TemperatureChanged");
    seqs.push_back(n.sequence);
    values.push_back(n.value);
  });
  CHECK(sub->granted() == 3600s);
  for (int i = 0; i < 5; ++i) CHECK(f.device().emit("_SERVICE_ID_", "TemperatureChanged", std::int64_t{i}).delivered() == 1);
  CHECK(f.device().emit("_SERVICE_ID_", "Other", 1.5).delivered() == 0);
  REQUIRE(test::wait_until([&] {
    std::lock_guard lock(mutex);
    return seqs.size() == 5;
  }));
  CHECK(sub->status() > 3590s);
  CHECK(sub->renew(600s) == 600s);
  std::string id = sub->id();
  sub->unsubscribe();
  for (int i = 0; i < 5; ++i) CHECK(f.device().emit("_SERVICE_ID_", "TemperatureChanged", std::int64_t{i}).delivered() == 0);
  std::this_thread::sleep_for(100ms);
  {
    std::lock_guard lock(mutex);
    CHECK(seqs == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
    CHECK(values[4] == Value(std::int64_t{4}));
  }
  CHECK_FALSE(f.device().subscriptions("_SERVICE_ID_")->find(id)->status == SubscriptionStatus::Active);
  try {
    sub->status();
    FAIL("status after unsubscribe succeeded");
  } catch (const FaultError& e) {
    CHECK(e.fault_subcode().find("DestinationUnreachable") != std::string::npos);
  }
  CHECK(test::code_of([&] { f.client->subscribe(s, "Nope", [](const Notification&) {}); }) == ErrorCode::UnknownEvent);
}

TEST_CASE("subscribe to every event of a service") {
  Sample f;
  RemoteDevice d = f.open();
  std::atomic<int> got{0};
  auto sub = f.client->subscribe(*d.find_service("_SERVICE_ID_"), "", [&](const Notification&) { ++got; });
  f.device().emit("_SERVICE_ID_", "TemperatureChanged", std::int64_t{1});
  f.device().emit("_SERVICE_ID_", "Other", 2.5);
  CHECK(test::wait_until([&] { return got == 2; }));
}

TEST_CASE("the 1.0 profile works end to end and responders answer in the probe's profile") {
  Sample f(ProfileVersion::V1_0);
  CHECK(f.client->discover({}, 1000ms).size() == 1);
  RemoteDevice d = f.open();
  CHECK(f.client->invoke(*d.find_service("_SERVICE_ID_"), "GetTemperature", {}, 2000ms) == Value(std::int64_t{0}));
  ClientOptions other;
  other.probe.endpoint = f.ep;
  other.probe.policy = RetransmitPolicy::none();
  auto found = Client::create(other)->discover({}, 1000ms);
  REQUIRE(found.size() == 1);
  CHECK(found[0].advertisement.epr.address == "urn:uuid:" + test::kSampleAddress);
}
