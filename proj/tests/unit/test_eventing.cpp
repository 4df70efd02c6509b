#include <algorithm>
#include <mutex>

#include "core/eventing.hpp"
#include "doctest.h"
#include "eventing_fixture.hpp"
#include "support.hpp"

using namespace dpws;
using namespace std::chrono_literals;
using xml::Element;
using xml::QName;

using namespace test::eventing;

TEST_CASE("duration and dateTime parsing") {
  CHECK(parse_duration("PT600S") == 600s);
  CHECK(parse_duration("P1DT2H") == 26h);
  CHECK(parse_duration("PT1.5S") == 1500ms);
  CHECK(parse_duration("-PT5S") == -5s);
  CHECK(parse_duration("P1Y") == std::chrono::hours(24 * 365));
  CHECK(parse_duration("P1M") == std::chrono::hours(24 * 30));
  CHECK(parse_duration("PT1H1M1S") == 3661s);
  for (const char* bad : {"", "P", "PT", "600", "PT5", "P1S", "PTS", "P-1D", "PT1.5.5S", "pt5s"})
    CHECK_MESSAGE(test::code_of([&] { parse_duration(bad); }) == ErrorCode::InvalidExpiry, bad);
  CHECK(format_duration(3600s) == "PT3600S");
  CHECK(format_duration(1500ms) == "PT1.5S");
  for (auto d : {0ms, 1ms, 999ms, 3600000ms, 86400123ms}) CHECK(parse_duration(format_duration(d)) == d);

  TimePoint t = parse_datetime("2024-02-29T12:30:45Z");
  CHECK(std::chrono::duration_cast<std::chrono::seconds>(t.time_since_epoch()).count() == 1709209845);
  CHECK(parse_datetime("2024-02-29T14:30:45+02:00") == t);
  CHECK(parse_datetime("2024-02-29T12:30:45") == t);
  CHECK(parse_datetime(format_datetime(t)) == t);
  CHECK(test::code_of([] { parse_datetime("2024-13-01T00:00:00Z"); }) == ErrorCode::InvalidExpiry);
  CHECK(test::code_of([] { parse_datetime("yesterday"); }) == ErrorCode::InvalidExpiry);

  CHECK(requested_lifetime("PT10S", t) == 10s);
  CHECK(requested_lifetime("2024-02-29T12:31:45Z", t) == 60s);
  CHECK(requested_lifetime("2024-02-29T12:29:45Z", t) == -60s);
}

TEST_CASE("grant defaults and clamp") {
  FakeClock clock;
  Recorder rec;
  SubscriptionManager m(kManager, {kTempAction, kDoorAction}, {}, clock.fn(), rec.transport());
  CHECK(subscribe_ok(m, subscribe_request("http://127.0.0.1:2/sink")).expires == 3600s);
  CHECK(subscribe_ok(m, subscribe_request("http://127.0.0.1:2/sink", "PT7200S")).expires == 3600s);
  CHECK(subscribe_ok(m, subscribe_request("http://127.0.0.1:2/sink", "PT60S")).expires == 60s);
  CHECK(m.active_count() == 3);
}

TEST_CASE("subscribe faults") {
  FakeClock clock;
  Recorder rec;
  SubscriptionManager m(kManager, {kTempAction}, {}, clock.fn(), rec.transport());
  CHECK(fault_subcode(m.handle(subscribe_request("http://h/s", "PT0S"))).find("InvalidExpirationTime") !=
        std::string::npos);
  CHECK(fault_subcode(m.handle(subscribe_request("http://h/s", "bogus"))).find("InvalidExpirationTime") !=
        std::string::npos);
  CHECK(fault_subcode(m.handle(subscribe_request("http://h/s", std::nullopt, {}, std::nullopt, "urn:pull")))
            .find("DeliveryModeRequestedUnavailable") != std::string::npos);
  CHECK(fault_subcode(m.handle(subscribe_request("http://h/s", std::nullopt, {"urn:nope"})))
            .find("FilterActionNotSupported") != std::string::npos);
  CHECK(m.active_count() == 0);
}

TEST_CASE("renew, get status and unsubscribe") {
  FakeClock clock;
  Recorder rec;
  SubscriptionManager m(kManager, {kTempAction}, {}, clock.fn(), rec.transport());
  auto g = subscribe_ok(m, subscribe_request("http://127.0.0.1:2/sink", "PT100S"));
  clock.now += 50s;
  SoapEnvelope renew = m.handle(manage_request(action::kRenew, g.id, "PT600S"));
  REQUIRE_FALSE(read_fault(renew));
  CHECK(parse_duration(renew.body->child(wse("Expires"))->text) == 600s);
  clock.now += 1s;
  SoapEnvelope status = m.handle(manage_request(action::kGetStatus, g.id));
  REQUIRE_FALSE(read_fault(status));
  CHECK(parse_duration(status.body->child(wse("Expires"))->text) >= 599s);

  SoapEnvelope unsub = m.handle(manage_request(action::kUnsubscribe, g.id));
  CHECK(unsub.addressing.action == action::kUnsubscribeResponse);
  CHECK(m.emit(kTempAction, temp_body(1)).results.empty());
  CHECK(fault_subcode(m.handle(manage_request(action::kGetStatus, g.id))).find("DestinationUnreachable") !=
        std::string::npos);
  CHECK(fault_subcode(m.handle(manage_request(action::kGetStatus, "urn:uuid:nope"))).find("DestinationUnreachable") !=
        std::string::npos);
}

TEST_CASE("emit numbers notifications per subscription and honours filters") {
  FakeClock clock;
  Recorder rec;
  SubscriptionManager m(kManager, {kTempAction, kDoorAction}, {}, clock.fn(), rec.transport());
  CHECK(m.emit(kTempAction, temp_body(0)).results.empty());
  auto all = subscribe_ok(m, subscribe_request("http://127.0.0.1:2/all"));
  auto door = subscribe_ok(m, subscribe_request("http://127.0.0.1:2/door", std::nullopt, {kDoorAction}));
  auto s = m.emit(kTempAction, temp_body(21));
  CHECK(s.delivered() == 1);
  REQUIRE(rec.calls.size() == 1);
  CHECK(rec.calls[0].url == "http://127.0.0.1:2/all");
  CHECK(rec.calls[0].env.header(sequence_header())->text == "1");
  CHECK(rec.calls[0].env.header(subscription_id_header())->text == all.id);
  CHECK(*rec.calls[0].env.body == temp_body(21));
  m.emit(kTempAction, temp_body(22));
  m.emit(kDoorAction, Element({"urn:ex", "Door"}, "open"));
  CHECK(m.find(all.id)->last_sequence == 3);
  CHECK(m.find(door.id)->last_sequence == 1);
}

TEST_CASE("three consecutive failures cancel with one SubscriptionEnd") {
  FakeClock clock;
  Recorder rec;
  rec.status = [](const std::string& url) { return url.find("/down") != std::string::npos ? 503 : 202; };
  SubscriptionManager m(kManager, {kTempAction}, {}, clock.fn(), rec.transport());
  auto down = subscribe_ok(m, subscribe_request("http://127.0.0.1:2/down", std::nullopt, {}, "http://127.0.0.1:2/end"));
  auto up = subscribe_ok(m, subscribe_request("http://127.0.0.1:2/up"));
  for (int i = 0; i < 2; ++i) {
    auto s = m.emit(kTempAction, temp_body(i));
    CHECK(s.failed() == 1);
    CHECK(m.find(down.id)->status == SubscriptionStatus::Active);
  }
  auto third = m.emit(kTempAction, temp_body(3));
  CHECK(std::any_of(third.results.begin(), third.results.end(), [](auto& r) { return r.cancelled; }));
  CHECK(m.find(down.id)->status == SubscriptionStatus::Cancelled);
  m.emit(kTempAction, temp_body(4));
  std::lock_guard lock(rec.mutex);
  std::size_t to_down = 0, ends = 0;
  for (auto& c : rec.calls) {
    if (c.env.addressing.action == action::kSubscriptionEnd) {
      ++ends;
      CHECK(c.url == "http://127.0.0.1:2/end");
      CHECK(c.env.body->child(wse("Status"))->text == action::kDeliveryFailure);
    } else if (c.url.find("/down") != std::string::npos) {
      ++to_down;
    }
  }
  CHECK(to_down == 3);
  CHECK(ends == 1);
  CHECK(m.find(up.id)->last_sequence == 4);
}

TEST_CASE("transport exceptions count as failures") {
  FakeClock clock;
  int attempts = 0;
  DeliveryTransport t = [&](const std::string&, const std::string& body, Millis) -> int {
    ++attempts;
    if (parse_envelope(body).addressing.action == action::kSubscriptionEnd) return 202;
    fail(ErrorCode::ConnectFailure, "refused");
  };
  SubscriptionManager m(kManager, {kTempAction}, {}, clock.fn(), t);
  auto g = subscribe_ok(m, subscribe_request("http://127.0.0.1:2/x"));
  for (int i = 0; i < 5; ++i) m.emit(kTempAction, temp_body(i));
  CHECK(m.find(g.id)->status == SubscriptionStatus::Cancelled);
  CHECK(attempts == 4);
}

TEST_CASE("expired subscriptions receive nothing") {
  FakeClock clock;
  Recorder rec;
  SubscriptionManager m(kManager, {kTempAction}, {}, clock.fn(), rec.transport());
  CHECK(m.expire(clock.now) == 0);
  auto g = subscribe_ok(m, subscribe_request("http://127.0.0.1:2/s", "PT1S"));
  clock.now += 2s;
  CHECK(m.expire(clock.now) == 1);
  CHECK(m.find(g.id)->status == SubscriptionStatus::Expired);
  CHECK(m.emit(kTempAction, temp_body(1)).results.empty());
  CHECK(rec.calls.empty());
}

TEST_CASE("staggered expiry matches a replayed schedule") {
  FakeClock clock;
  Recorder rec;
  EventingOptions opts;
  opts.max_grant = std::chrono::seconds(3600);
  SubscriptionManager m(kManager, {kTempAction}, opts, clock.fn(), rec.transport());
  const TimePoint start = clock.now;
  std::mt19937_64 rng(11);
  std::vector<TimePoint> oracle;
  for (int i = 0; i < 100; ++i) {
    // Subscriptions arrive over 100 s and ask for 1..7200 s (clamped to 3600).
    clock.now = start + std::chrono::milliseconds(i * 1000);
    std::int64_t ask = 1 + static_cast<std::int64_t>(rng() % 7200);
    subscribe_ok(m, subscribe_request("http://127.0.0.1:2/s", "PT" + std::to_string(ask) + "S"));
    oracle.push_back(clock.now + std::chrono::seconds(std::min<std::int64_t>(ask, 3600)));
  }
  std::sort(oracle.begin(), oracle.end());
  std::size_t cumulative = 0;
  int mismatches = 0;
  for (TimePoint t = start + 100s; t <= start + 3800s; t += std::chrono::seconds(1 + rng() % 90)) {
    clock.now = t;
    cumulative += m.expire(t);
    auto want = static_cast<std::size_t>(std::upper_bound(oracle.begin(), oracle.end(), t) - oracle.begin());
    mismatches += cumulative != want;
    CHECK(m.active_count() == 100 - want);
  }
  CHECK(mismatches == 0);
  clock.now = start + 4000s;
  cumulative += m.expire(clock.now);
  CHECK(cumulative == 100);
}

TEST_CASE("end_all sends one SubscriptionEnd per active subscription") {
  FakeClock clock;
  Recorder rec;
  SubscriptionManager m(kManager, {kTempAction}, {}, clock.fn(), rec.transport());
  subscribe_ok(m, subscribe_request("http://127.0.0.1:2/a"));
  auto b = subscribe_ok(m, subscribe_request("http://127.0.0.1:2/b"));
  m.handle(manage_request(action::kUnsubscribe, b.id));
  m.end_all(action::kSourceShuttingDown, "bye");
  CHECK(rec.count(action::kSubscriptionEnd) == 1);
  CHECK(m.active_count() == 0);
}

TEST_CASE("loopback sink: 5 deliveries then unsubscribe then silence") {
  EventSink sink("127.0.0.1", "127.0.0.1");
  sink.start();
  std::mutex mutex;
  std::vector<std::uint64_t> sequences;
  std::string addr = sink.add("k", {[&](const SoapEnvelope& env) {
                                      std::lock_guard lock(mutex);
                                      sequences.push_back(std::stoull(env.header(sequence_header())->text));
                                    },
                                    {}});
  SubscriptionManager m(kManager, {kTempAction});
  auto g = subscribe_ok(m, subscribe_request(addr));
  for (int i = 0; i < 5; ++i) CHECK(m.emit(kTempAction, temp_body(i)).delivered() == 1);
  m.handle(manage_request(action::kUnsubscribe, g.id));
  for (int i = 0; i < 5; ++i) CHECK(m.emit(kTempAction, temp_body(i)).results.empty());
  std::this_thread::sleep_for(100ms);
  std::lock_guard lock(mutex);
  CHECK(sequences == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
}
