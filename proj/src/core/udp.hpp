#pragma once

#include <netinet/in.h>
#include <sys/socket.h>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace dpws {

using Millis = std::chrono::milliseconds;

/// IPv4 or IPv6 socket address.
class SocketAddress {
 public:
  SocketAddress() = default;
  SocketAddress(const sockaddr* sa, socklen_t len);
  /// Numeric host ("239.255.255.250", "ff02::c", "::1") and port.
  static SocketAddress from(std::string_view host, std::uint16_t port);

  int family() const { return storage_.ss_family; }
  std::uint16_t port() const;
  std::string host() const;
  /// "1.2.3.4:5" or "[::1]:5"
  std::string to_string() const;
  bool is_multicast() const;

  const sockaddr* data() const { return reinterpret_cast<const sockaddr*>(&storage_); }
  socklen_t size() const { return len_; }

  bool operator==(const SocketAddress& other) const { return to_string() == other.to_string(); }

 private:
  sockaddr_storage storage_{};
  socklen_t len_ = 0;
};

/// Multicast group and the interfaces it is joined/sent on.
struct MulticastEndpoint {
  std::string group_v4 = "239.255.255.250";
  std::string group_v6 = "ff02::c";
  std::uint16_t port = 3702;
  bool ipv4 = true;
  bool ipv6 = false;
  /// IPv4 address of the interface to use; empty selects every up IPv4 interface.
  std::string interface_v4;
  /// IPv6 interface name; empty selects the default interface.
  std::string interface_v6;
  int hop_limit = 1;

  SocketAddress group_address_v4() const { return SocketAddress::from(group_v4, port); }
  SocketAddress group_address_v6() const { return SocketAddress::from(group_v6, port); }
};

/// SOAP-over-UDP repetition: 1 + repeats transmissions, the first gap drawn
/// uniformly from [initial_min, initial_max], doubling up to `cap`.
struct RetransmitPolicy {
  int repeats = 2;
  Millis initial_min{50};
  Millis initial_max{250};
  Millis cap{500};

  static RetransmitPolicy none() { return {0, Millis{50}, Millis{250}, Millis{500}}; }
  /// Gaps before each repeat; size() == repeats.
  std::vector<Millis> draw_delays(std::mt19937_64& rng) const;
};

/// IPv4 addresses of every interface that is up (loopback included).
std::vector<in_addr> ipv4_interfaces();
/// First non-loopback IPv4 address, else 127.0.0.1.
std::string default_host_address();
/// Local address the kernel would use to reach `peer_host` (IPv6 bracketed).
std::string local_address_for(const std::string& peer_host);

/// RAII UDP socket.
class UdpSocket {
 public:
  UdpSocket() = default;
  UdpSocket(int family, const MulticastEndpoint& multicast);
  ~UdpSocket();
  UdpSocket(UdpSocket&& other) noexcept;
  UdpSocket& operator=(UdpSocket&& other) noexcept;
  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;

  /// Binds to the wildcard address; `reuse` sets SO_REUSEADDR/SO_REUSEPORT.
  void bind(std::uint16_t port, bool reuse);
  /// Joins the endpoint's group on its interface(s). Returns the number of
  /// successful joins; throws JoinFailure when none succeeded.
  int join_group();
  std::uint16_t local_port() const;
  int fd() const { return fd_; }
  int family() const { return family_; }

  /// One transmission. Multicast destinations go out once per selected interface.
  void send_to(std::string_view payload, const SocketAddress& dest) const;
  /// Waits up to `timeout` for one datagram.
  std::optional<std::pair<std::string, SocketAddress>> receive(Millis timeout) const;

 private:
  int fd_ = -1;
  int family_ = AF_INET;
  MulticastEndpoint multicast_;
};

/// Sends `payload` 1 + policy.repeats times with the policy's gaps; returns
/// after the last transmission. Payloads over 4096 octets raise Oversize.
void udp_send(const UdpSocket& socket, std::string_view payload, const SocketAddress& dest,
              const RetransmitPolicy& policy);

using DatagramHandler = std::function<void(const std::string& payload, const SocketAddress& source)>;

/// Background receiver bound to the multicast port with port reuse. Every
/// datagram is handed to the handler as received, duplicates included.
class UdpListener {
 public:
  UdpListener(const MulticastEndpoint& endpoint, DatagramHandler handler);
  ~UdpListener();
  UdpListener(const UdpListener&) = delete;
  UdpListener& operator=(const UdpListener&) = delete;

  void stop();
  /// Socket for unicast replies (bound to an ephemeral port, same family as
  /// the first listening socket).
  const UdpSocket& reply_socket(int family) const;

 private:
  void run();

  MulticastEndpoint endpoint_;
  DatagramHandler handler_;
  std::vector<UdpSocket> sockets_;
  UdpSocket reply_v4_;
  UdpSocket reply_v6_;
  std::atomic<bool> stopping_{false};
  std::thread thread_;
};

}  // namespace dpws
