#include <algorithm>
#include <mutex>
#include <regex>
#include <set>

#include "core/discovery.hpp"
#include "doctest.h"
#include "generators.hpp"
#include "support.hpp"

using namespace dpws;
using namespace std::chrono_literals;
using xml::QName;

namespace {

using test::oracle_match;
using Gen = test::ProbeGen;

DeviceAdvertisement make_adv(int n, const std::string& host = "127.0.0.1") {
  DeviceAdvertisement a;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "urn:uuid:00000000-0000-4000-8000-%012d", n);
  a.epr.address = buf;
  a.types = {{VersionProfile::v1_1().dpws, "Device"}, {"urn:a", "TemperatureDevice"}};
  a.scopes = {"http://ex.com/floor1/room2"};
  a.xaddrs = {"http://" + host + ":8080/" + std::to_string(n)};
  a.metadata_version = 3;
  return a;
}

DiscoveryMessage probe_msg(ProbeFilter f = {}) {
  DiscoveryMessage m;
  m.kind = DiscoveryKind::Probe;
  m.message_id = new_message_id();
  m.filter = std::move(f);
  return m;
}

DiscoveryOptions loopback_options() {
  DiscoveryOptions o;
  o.endpoint = test::loopback_endpoint();
  o.multicast_policy = RetransmitPolicy::none();
  o.max_match_delay = Millis{20};
  return o;
}

}  // namespace

TEST_CASE("match_probe agrees with the brute-force oracle") {
  Gen gen(42);
  constexpr int kCases = 20000;
  int disagreements = 0, matches = 0;
  for (int i = 0; i < kCases; ++i) {
    ProbeFilter f = gen.filter();
    DeviceAdvertisement a = gen.adv();
    bool got = match_probe(f, a);
    bool want = oracle_match(f, a);
    matches += want;
    if (got != want && ++disagreements <= 3) {
      std::string dump;
      for (auto& s : f.scopes) dump += " probe:" + s;
      for (auto& s : a.scopes) dump += " dev:" + s;
      MESSAGE("disagreement:", dump);
    }
  }
  CHECK(disagreements == 0);
  // The generator must exercise both outcomes.
  CHECK(matches > kCases / 20);
  CHECK(matches < kCases - kCases / 20);
}

TEST_CASE("match_probe spot checks") {
  QName temp{"urn:a", "TemperatureDevice"};
  QName dev{VersionProfile::v1_1().dpws, "Device"};
  DeviceAdvertisement a;
  a.types = {temp, dev};
  CHECK(match_probe({}, a));
  CHECK(match_probe(ProbeFilter{{temp}, {}}, a));
  CHECK_FALSE(match_probe(ProbeFilter{{{"urn:a", "Lamp"}}, {}}, a));
  CHECK(scope_matches_rfc3986("http://ex.com/floor1", "http://ex.com/floor1/room2"));
  CHECK_FALSE(scope_matches_rfc3986("http://ex.com/floor1", "http://ex.com/floor10"));
  CHECK(scope_matches_rfc3986("HTTP://EX.COM/floor1", "http://ex.com/floor1"));
  CHECK_FALSE(scope_matches_rfc3986("http://ex.com/Floor1", "http://ex.com/floor1"));
}

TEST_CASE("is_newer agrees with tuple comparison") {
  CHECK(is_newer({5, 10, {}}, {5, 9, {}}));
  CHECK(is_newer({6, 1, {}}, {5, 999, {}}));
  CHECK_FALSE(is_newer({5, 9, {}}, {5, 9, {}}));
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::uint64_t> small(0, 5);
  std::uniform_int_distribution<std::uint64_t> any;
  int disagreements = 0;
  for (int i = 0; i < 100000; ++i) {
    bool narrow = i % 2 == 0;
    AppSequence a{narrow ? small(rng) : any(rng), narrow ? small(rng) : any(rng), {}};
    AppSequence b{narrow ? small(rng) : any(rng), narrow ? small(rng) : any(rng), {}};
    bool want = std::tie(a.instance_id, a.message_number) > std::tie(b.instance_id, b.message_number);
    disagreements += is_newer(a, b) != want;
  }
  CHECK(disagreements == 0);
}

TEST_CASE("message numbers strictly increase across 1000 mixed announcements") {
  AppSequencer seq(1234);
  std::vector<std::unique_ptr<Responder>> responders;
  std::mutex mutex;
  std::vector<AppSequence> sent;
  auto opts = loopback_options();
  for (int i = 0; i < 3; ++i) {
    responders.push_back(std::make_unique<Responder>(opts, &seq));
    responders.back()->on_send([&](const DiscoveryMessage& m) {
      std::lock_guard lock(mutex);
      if (m.app_sequence) sent.push_back(*m.app_sequence);
    });
  }
  std::mt19937_64 rng(5);
  std::vector<AppSequence> returned;
  for (int i = 0; i < 1000; ++i) {
    auto& r = *responders[rng() % responders.size()];
    auto adv = make_adv(static_cast<int>(rng() % 4));
    if (rng() % 2) {
      r.add(adv);
      returned.push_back(r.announce_hello(adv));
    } else {
      r.add(adv);
      returned.push_back(*r.announce_bye(adv.epr));
    }
  }
  REQUIRE(sent.size() == 1000);
  CHECK(sent == returned);
  for (std::size_t i = 0; i < sent.size(); ++i) {
    CHECK(sent[i].instance_id == 1234);
    if (i) CHECK(sent[i].message_number > sent[i - 1].message_number);
  }
}

TEST_CASE("two devices in one process share the instance id") {
  auto opts = loopback_options();
  Responder a(opts), b(opts);
  auto sa = a.announce_hello(make_adv(1));
  auto sb = b.announce_hello(make_adv(2));
  CHECK(sa.instance_id == sb.instance_id);
  CHECK(sa.message_number != sb.message_number);
}

TEST_CASE("planned replies: one per matching device, relating to the probe") {
  Responder r(loopback_options());
  for (int i = 1; i <= 3; ++i) r.add(make_adv(i));
  auto probe = probe_msg();
  auto replies = r.plan(probe);
  REQUIRE(replies.size() == 3);
  for (auto& p : replies) {
    CHECK(p.message.kind == DiscoveryKind::ProbeMatch);
    CHECK(p.message.relates_to == probe.message_id);
    CHECK(p.delay <= Millis{20});
  }
  SUBCASE("retransmitted probe yields no second reply set") { CHECK(r.plan(probe).empty()); }
  SUBCASE("filter that excludes the type") {
    CHECK(r.plan(probe_msg(ProbeFilter{{{"urn:a", "Lamp"}}, {}})).empty());
  }
}

TEST_CASE("resolve only answers for registered endpoints") {
  Responder r(loopback_options());
  r.add(make_adv(1));
  DiscoveryMessage res;
  res.kind = DiscoveryKind::Resolve;
  res.message_id = new_message_id();
  res.advertisement.epr = make_adv(2).epr;
  CHECK(r.plan(res).empty());
  res.message_id = new_message_id();
  res.advertisement.epr = make_adv(1).epr;
  auto replies = r.plan(res);
  REQUIRE(replies.size() == 1);
  CHECK(replies[0].message.kind == DiscoveryKind::ResolveMatch);
  CHECK(replies[0].message.advertisement == make_adv(1));
}

TEST_CASE("bye deregisters and is newer than hello") {
  Responder r(loopback_options());
  auto adv = make_adv(1);
  r.add(adv);
  auto hello = r.announce_hello(adv);
  auto bye = r.announce_bye(adv.epr);
  REQUIRE(bye);
  CHECK(is_newer(*bye, hello));
  CHECK(r.plan(probe_msg()).empty());
  CHECK_FALSE(r.announce_bye(make_adv(9).epr).has_value());
}

TEST_CASE("hello parsed by a second socket equals the advertisement") {
  auto opts = loopback_options();
  std::mutex mutex;
  std::vector<DiscoveryMessage> heard;
  UdpListener listener(opts.endpoint, [&](const std::string& p, const SocketAddress&) {
    std::lock_guard lock(mutex);
    heard.push_back(decode_datagram(p));
  });
  Responder r(opts);
  auto adv = make_adv(7);
  adv.scopes.push_back("urn:scope:x");
  r.add(adv);
  r.announce_hello(adv);
  REQUIRE(test::wait_until([&] {
    std::lock_guard lock(mutex);
    return !heard.empty();
  }));
  std::lock_guard lock(mutex);
  CHECK(heard[0].kind == DiscoveryKind::Hello);
  CHECK(heard[0].advertisement == adv);
}

TEST_CASE("start produces exactly one logical hello") {
  auto opts = loopback_options();
  opts.multicast_policy = RetransmitPolicy{2, Millis{50}, Millis{60}, Millis{100}};
  std::mutex mutex;
  std::vector<std::string> ids;
  UdpListener listener(opts.endpoint, [&](const std::string& p, const SocketAddress&) {
    std::lock_guard lock(mutex);
    ids.push_back(decode_datagram(p).message_id);
  });
  Responder r(opts);
  r.add(make_adv(1));
  r.announce_hello(make_adv(1));
  test::wait_until([&] {
    std::lock_guard lock(mutex);
    return ids.size() >= 3;
  });
  std::this_thread::sleep_for(150ms);
  std::lock_guard lock(mutex);
  CHECK(ids.size() == 3);
  CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == 1);
}

TEST_CASE("probe over loopback finds registered devices only") {
  auto opts = loopback_options();
  ProbeOptions popts;
  popts.endpoint = opts.endpoint;
  popts.policy = RetransmitPolicy::none();
  SUBCASE("no devices") { CHECK(probe({}, 300ms, popts).empty()); }
  SUBCASE("one device") {
    Responder r(opts);
    r.start();
    r.add(make_adv(1));
    auto found = probe({}, 500ms, popts);
    REQUIRE(found.size() == 1);
    CHECK(found[0].epr == make_adv(1).epr);
    CHECK(found[0] == make_adv(1));
    r.announce_bye(make_adv(1).epr);
    CHECK(probe({}, 300ms, popts).empty());
    r.stop();
  }
  SUBCASE("three devices answer one probe") {
    Responder r(opts);
    r.start();
    for (int i = 1; i <= 3; ++i) r.add(make_adv(i));
    CHECK(probe({}, 500ms, popts).size() == 3);
    CHECK(probe(ProbeFilter{{{"urn:a", "Lamp"}}, {}}, 300ms, popts).empty());
    r.stop();
  }
  SUBCASE("resolve") {
    Responder r(opts);
    r.start();
    r.add(make_adv(4));
    auto got = resolve(make_adv(4).epr.address, 500ms, popts);
    REQUIRE(got);
    CHECK(got->xaddrs == make_adv(4).xaddrs);
    CHECK_FALSE(resolve(make_adv(5).epr.address, 200ms, popts).has_value());
    r.stop();
  }
}

TEST_CASE("probe rejects a non-positive timeout") {
  CHECK(test::code_of([] { probe({}, 0ms); }) == ErrorCode::InvalidTimeout);
}

TEST_CASE("newer instance wins when a device restarts mid-probe") {
  std::vector<std::pair<DeviceAdvertisement, AppSequence>> results;
  auto old_adv = make_adv(1);
  auto new_adv = make_adv(1);
  new_adv.xaddrs = {"http://127.0.0.1:9999/restarted"};
  merge_match(results, new_adv, {200, 1, {}});
  merge_match(results, old_adv, {100, 50, {}});
  REQUIRE(results.size() == 1);
  CHECK(results[0].first.xaddrs == new_adv.xaddrs);
  results.clear();
  merge_match(results, old_adv, {100, 50, {}});
  merge_match(results, new_adv, {200, 1, {}});
  CHECK(results[0].first.xaddrs == new_adv.xaddrs);
}

TEST_CASE("discovery messages round trip through datagrams") {
  for (auto v : {ProfileVersion::V1_1, ProfileVersion::V1_0}) {
    for (auto kind : {DiscoveryKind::Hello, DiscoveryKind::Bye, DiscoveryKind::Probe, DiscoveryKind::ProbeMatch,
                      DiscoveryKind::Resolve, DiscoveryKind::ResolveMatch}) {
      DiscoveryMessage m;
      m.kind = kind;
      m.version = v;
      m.message_id = new_message_id();
      m.app_sequence = AppSequence{7, 8, std::nullopt};
      auto adv = make_adv(3);
      adv.types = {{VersionProfile::get(v).dpws, "Device"}, {"urn:a", "TemperatureDevice"}};
      if (kind == DiscoveryKind::Bye || kind == DiscoveryKind::Resolve) {
        m.advertisement.epr = adv.epr;
      } else if (kind == DiscoveryKind::Probe) {
        m.filter.types = adv.types;
        m.filter.scopes = adv.scopes;
        m.app_sequence.reset();
      } else {
        m.advertisement = adv;
      }
      if (kind == DiscoveryKind::ProbeMatch || kind == DiscoveryKind::ResolveMatch) {
        m.relates_to = new_message_id();
        m.matches = {adv};
      }
      if (kind == DiscoveryKind::Resolve) m.app_sequence.reset();
      DiscoveryMessage back = decode_datagram(encode_datagram(m));
      CAPTURE(to_string(kind));
      CHECK(back.kind == m.kind);
      CHECK(back.version == v);
      CHECK(back.message_id == m.message_id);
      CHECK(back.relates_to == m.relates_to);
      CHECK(back.app_sequence == m.app_sequence);
      CHECK(back.advertisement.epr == m.advertisement.epr);
      if (kind == DiscoveryKind::Probe) CHECK(back.filter == m.filter);
      if (kind == DiscoveryKind::Hello) CHECK(back.advertisement == m.advertisement);
    }
  }
}

TEST_CASE("dedupe cache honours window and capacity") {
  using C = DedupeCache::Clock;
  DedupeCache cache(2, std::chrono::seconds(10));
  auto t0 = C::now();
  CHECK_FALSE(cache.check_and_insert("a", t0));
  CHECK(cache.check_and_insert("a", t0 + std::chrono::seconds(1)));
  CHECK_FALSE(cache.check_and_insert("a", t0 + std::chrono::seconds(20)));
  CHECK_FALSE(cache.check_and_insert("b", t0 + std::chrono::seconds(21)));
  CHECK_FALSE(cache.check_and_insert("c", t0 + std::chrono::seconds(22)));
  CHECK(cache.size() == 2);
  CHECK_FALSE(cache.check_and_insert("a", t0 + std::chrono::seconds(23)));
}
