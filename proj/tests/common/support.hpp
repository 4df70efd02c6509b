#pragma once

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <functional>
#include <random>
#include <string>
#include <thread>

#include "core/config.hpp"
#include "core/device.hpp"
#include "core/error.hpp"
#include "core/udp.hpp"

namespace test {

inline const std::string kFixtures = DPWS_FIXTURE_DIR;
inline const std::string kSampleAddress = "f7ef0fab-ba1d-4275-9a94-0f051090640f";

/// Asks the kernel for a free TCP port on loopback.
inline std::uint16_t free_port() {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa));
  socklen_t len = sizeof(sa);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len);
  ::close(fd);
  return ntohs(sa.sin_port);
}

/// Loopback-only multicast endpoint on a private port so concurrent test
/// processes never hear each other.
inline dpws::MulticastEndpoint loopback_endpoint() {
  static std::atomic<int> offset{0};
  dpws::MulticastEndpoint ep;
  ep.interface_v4 = "127.0.0.1";
  ep.port = static_cast<std::uint16_t>(20000 + (::getpid() % 2000) * 8 + (offset++ % 8));
  return ep;
}

/// Temperature sample device config bound to loopback on a free port.
inline dpws::LoadedConfig sample_config(const dpws::MulticastEndpoint& ep) {
  auto cfg = dpws::load_config_file(kFixtures + "/temperature.yaml");
  cfg.device.http_port = free_port();
  cfg.device.bind_host = "127.0.0.1";
  cfg.device.advertise_host = "127.0.0.1";
  cfg.device.discovery = ep;
  return cfg;
}

inline bool wait_until(const std::function<bool()>& pred, std::chrono::milliseconds limit = std::chrono::seconds(5)) {
  auto deadline = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return pred();
}

template <typename F>
dpws::ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const dpws::Error& e) {
    return e.code();
  }
  return dpws::ErrorCode::Ok;
}

}  // namespace test
