#include <arpa/inet.h>

#include <mutex>
#include <vector>

#include "core/http.hpp"
#include "core/udp.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace dpws;
using namespace std::chrono_literals;

namespace {

struct Captured {
  std::mutex mutex;
  std::vector<std::pair<std::string, std::chrono::steady_clock::time_point>> items;
  void add(const std::string& p) {
    std::lock_guard lock(mutex);
    items.emplace_back(p, std::chrono::steady_clock::now());
  }
  std::size_t size() {
    std::lock_guard lock(mutex);
    return items.size();
  }
};

UdpSocket sender(const MulticastEndpoint& ep) {
  UdpSocket s(AF_INET, ep);
  s.bind(0, false);
  return s;
}

// Receive-side timestamps jitter with thread wake-ups.
constexpr auto kGapEarly = 5ms;
constexpr auto kGapLate = 50ms;

}  // namespace

TEST_CASE("multicast datagram reaches the listener unchanged") {
  auto ep = test::loopback_endpoint();
  Captured got;
  UdpListener listener(ep, [&](const std::string& p, const SocketAddress&) { got.add(p); });
  auto s = sender(ep);
  s.send_to("hello group", ep.group_address_v4());
  REQUIRE(test::wait_until([&] { return got.size() == 1; }));
  CHECK(got.items[0].first == "hello group");
}

TEST_CASE("two listeners with port reuse both receive one datagram") {
  auto ep = test::loopback_endpoint();
  Captured a, b;
  UdpListener la(ep, [&](const std::string& p, const SocketAddress&) { a.add(p); });
  UdpListener lb(ep, [&](const std::string& p, const SocketAddress&) { b.add(p); });
  auto s = sender(ep);
  s.send_to("x", ep.group_address_v4());
  CHECK(test::wait_until([&] { return a.size() == 1 && b.size() == 1; }));
}

TEST_CASE("transport does not police the envelope limit on receive") {
  auto ep = test::loopback_endpoint();
  Captured got;
  UdpListener listener(ep, [&](const std::string& p, const SocketAddress&) { got.add(p); });
  auto s = sender(ep);
  std::string big(4097, 'a');
  s.send_to(big, ep.group_address_v4());
  REQUIRE(test::wait_until([&] { return got.size() == 1; }));
  CHECK(got.items[0].first.size() == 4097);
}

TEST_CASE("udp_send enforces 4096 octets") {
  auto ep = test::loopback_endpoint();
  Captured got;
  UdpListener listener(ep, [&](const std::string& p, const SocketAddress&) { got.add(p); });
  auto s = sender(ep);
  udp_send(s, std::string(4096, 'b'), ep.group_address_v4(), RetransmitPolicy::none());
  CHECK(test::code_of([&] { udp_send(s, std::string(4097, 'b'), ep.group_address_v4(), RetransmitPolicy::none()); }) ==
        ErrorCode::Oversize);
  REQUIRE(test::wait_until([&] { return got.size() == 1; }));
  std::this_thread::sleep_for(100ms);
  CHECK(got.size() == 1);
}

TEST_CASE("repeats=0 puts exactly one datagram on the wire") {
  auto ep = test::loopback_endpoint();
  Captured got;
  UdpListener listener(ep, [&](const std::string& p, const SocketAddress&) { got.add(p); });
  auto s = sender(ep);
  udp_send(s, "once", ep.group_address_v4(), RetransmitPolicy::none());
  REQUIRE(test::wait_until([&] { return got.size() >= 1; }));
  std::this_thread::sleep_for(300ms);
  CHECK(got.size() == 1);
}

TEST_CASE("default policy sends three datagrams with gaps in [50, 500] ms") {
  auto ep = test::loopback_endpoint();
  Captured got;
  UdpListener listener(ep, [&](const std::string& p, const SocketAddress&) { got.add(p); });
  auto s = sender(ep);
  udp_send(s, "thrice", ep.group_address_v4(), RetransmitPolicy{});
  REQUIRE(test::wait_until([&] { return got.size() >= 3; }));
  std::this_thread::sleep_for(300ms);
  REQUIRE(got.size() == 3);
  for (std::size_t i = 1; i < 3; ++i) {
    auto gap = got.items[i].second - got.items[i - 1].second;
    CHECK(gap >= 50ms - kGapEarly);
    CHECK(gap <= 500ms + kGapLate);
  }
}

TEST_CASE("retransmit delays double and respect the cap") {
  std::mt19937_64 rng(3);
  RetransmitPolicy p{5, Millis{50}, Millis{250}, Millis{500}};
  for (int i = 0; i < 1000; ++i) {
    auto d = p.draw_delays(rng);
    REQUIRE(d.size() == 5);
    CHECK(d[0] >= 50ms);
    CHECK(d[0] <= 250ms);
    for (std::size_t k = 1; k < d.size(); ++k) CHECK(d[k] == std::min(d[k - 1] * 2, Millis{500}));
  }
}

namespace {

struct EchoServer {
  HttpServer server;
  explicit EchoServer(HttpHandler h = [](const HttpRequest& r) {
    HttpResponse res;
    res.body = r.body;
    return res;
  })
      : server(std::move(h), HttpServerOptions{"127.0.0.1", 0}) {
    server.start();
  }
  std::string url(const std::string& path = "/echo") const {
    return "http://127.0.0.1:" + std::to_string(server.port()) + path;
  }
};

}  // namespace

TEST_CASE("http echo round trip") {
  EchoServer echo;
  HttpExchange ex = http_post(echo.url(), "<ping/>", 2000ms);
  CHECK(ex.status == 200);
  CHECK(ex.response_body == "<ping/>");
}

TEST_CASE("100 concurrent posts all succeed") {
  EchoServer echo;
  std::atomic<int> ok{0}, errors{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 100; ++i) {
    threads.emplace_back([&, i] {
      try {
        std::string body = "req-" + std::to_string(i);
        auto ex = http_post(echo.url(), body, 5000ms);
        if (ex.status == 200 && ex.response_body == body) ++ok;
        else ++errors;
      } catch (...) {
        ++errors;
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(ok == 100);
  CHECK(errors == 0);
}

TEST_CASE("malformed request line gets 400 and the server keeps serving") {
  EchoServer echo;
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(echo.server.port());
  sa.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) == 0);
  std::string junk = "THIS IS NOT HTTP\r\n\r\n";
  REQUIRE(::send(fd, junk.data(), junk.size(), 0) == static_cast<ssize_t>(junk.size()));
  char buf[256] = {};
  ssize_t n = ::recv(fd, buf, sizeof(buf) - 1, 0);
  ::close(fd);
  REQUIRE(n > 0);
  CHECK(std::string(buf).find(" 400 ") != std::string::npos);
  CHECK(http_post(echo.url(), "again", 2000ms).response_body == "again");
}

TEST_CASE("closed port is ConnectFailure") {
  auto port = test::free_port();
  CHECK(test::code_of([&] { http_post("http://127.0.0.1:" + std::to_string(port) + "/", "x", 1000ms); }) ==
        ErrorCode::ConnectFailure);
}

TEST_CASE("slow server is Timeout") {
  EchoServer slow([](const HttpRequest&) {
    std::this_thread::sleep_for(600ms);
    return HttpResponse{};
  });
  CHECK(test::code_of([&] { http_post(slow.url(), "x", 300ms); }) == ErrorCode::Timeout);
}

TEST_CASE("keep-alive connection serves many requests") {
  EchoServer echo;
  HttpConnection conn(Url::parse(echo.url()));
  for (int i = 0; i < 50; ++i) CHECK(conn.post("/echo", std::to_string(i), 2000ms).response_body == std::to_string(i));
}

TEST_CASE("url parsing") {
  Url u = Url::parse("http://127.0.0.1:8080/a/b");
  CHECK(u.host == "127.0.0.1");
  CHECK(u.port == 8080);
  CHECK(u.path == "/a/b");
  CHECK(Url::parse("http://[::1]:9/x").host == "::1");
  CHECK(Url::parse("http://host").port == 80);
  CHECK(test::code_of([] { Url::parse("ftp://x/"); }) == ErrorCode::InvalidArgument);
}
