#include "core/udp.hpp"

#include <arpa/inet.h>
#include <ifaddrs.h>
#include <net/if.h>
#include <poll.h>
#include <spdlog/spdlog.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "core/error.hpp"
#include "core/soap.hpp"

namespace dpws {

namespace {

std::string errno_text() { return std::strerror(errno); }

}  // namespace

SocketAddress::SocketAddress(const sockaddr* sa, socklen_t len) : len_(len) {
  std::memcpy(&storage_, sa, std::min<std::size_t>(len, sizeof(storage_)));
}

SocketAddress SocketAddress::from(std::string_view host, std::uint16_t port) {
  SocketAddress out;
  std::string h(host);
  if (!h.empty() && h.front() == '[' && h.back() == ']') h = h.substr(1, h.size() - 2);
  sockaddr_in v4{};
  if (inet_pton(AF_INET, h.c_str(), &v4.sin_addr) == 1) {
    v4.sin_family = AF_INET;
    v4.sin_port = htons(port);
    std::memcpy(&out.storage_, &v4, sizeof(v4));
    out.len_ = sizeof(v4);
    return out;
  }
  sockaddr_in6 v6{};
  if (inet_pton(AF_INET6, h.c_str(), &v6.sin6_addr) == 1) {
    v6.sin6_family = AF_INET6;
    v6.sin6_port = htons(port);
    std::memcpy(&out.storage_, &v6, sizeof(v6));
    out.len_ = sizeof(v6);
    return out;
  }
  fail(ErrorCode::InvalidArgument, "not a numeric address: " + h);
}

std::uint16_t SocketAddress::port() const {
  if (family() == AF_INET) return ntohs(reinterpret_cast<const sockaddr_in*>(&storage_)->sin_port);
  if (family() == AF_INET6) return ntohs(reinterpret_cast<const sockaddr_in6*>(&storage_)->sin6_port);
  return 0;
}

std::string SocketAddress::host() const {
  char buf[INET6_ADDRSTRLEN] = {};
  if (family() == AF_INET)
    inet_ntop(AF_INET, &reinterpret_cast<const sockaddr_in*>(&storage_)->sin_addr, buf, sizeof(buf));
  else if (family() == AF_INET6)
    inet_ntop(AF_INET6, &reinterpret_cast<const sockaddr_in6*>(&storage_)->sin6_addr, buf, sizeof(buf));
  return buf;
}

std::string SocketAddress::to_string() const {
  if (family() == AF_INET6) return "[" + host() + "]:" + std::to_string(port());
  return host() + ":" + std::to_string(port());
}

bool SocketAddress::is_multicast() const {
  if (family() == AF_INET)
    return IN_MULTICAST(ntohl(reinterpret_cast<const sockaddr_in*>(&storage_)->sin_addr.s_addr));
  if (family() == AF_INET6)
    return IN6_IS_ADDR_MULTICAST(&reinterpret_cast<const sockaddr_in6*>(&storage_)->sin6_addr);
  return false;
}

std::vector<Millis> RetransmitPolicy::draw_delays(std::mt19937_64& rng) const {
  std::vector<Millis> out;
  if (repeats <= 0) return out;
  std::uniform_int_distribution<long> first(initial_min.count(), initial_max.count());
  Millis delay{first(rng)};
  for (int i = 0; i < repeats; ++i) {
    out.push_back(std::min(delay, cap));
    delay *= 2;
  }
  return out;
}

std::vector<in_addr> ipv4_interfaces() {
  std::vector<in_addr> out;
  ifaddrs* list = nullptr;
  if (getifaddrs(&list) != 0) return out;
  for (ifaddrs* it = list; it; it = it->ifa_next) {
    if (!it->ifa_addr || it->ifa_addr->sa_family != AF_INET || !(it->ifa_flags & IFF_UP)) continue;
    out.push_back(reinterpret_cast<sockaddr_in*>(it->ifa_addr)->sin_addr);
  }
  freeifaddrs(list);
  return out;
}

std::string default_host_address() {
  for (const auto& a : ipv4_interfaces()) {
    if ((ntohl(a.s_addr) >> 24) == 127) continue;
    char buf[INET_ADDRSTRLEN] = {};
    inet_ntop(AF_INET, &a, buf, sizeof(buf));
    return buf;
  }
  return "127.0.0.1";
}

std::string local_address_for(const std::string& peer_host) {
  std::string host = peer_host;
  if (host == "localhost") return "127.0.0.1";
  if (host.size() > 2 && host.front() == '[') host = host.substr(1, host.size() - 2);
  SocketAddress peer;
  try {
    peer = SocketAddress::from(host, 9);
  } catch (const Error&) {
    return default_host_address();
  }
  int fd = ::socket(peer.family(), SOCK_DGRAM | SOCK_CLOEXEC, 0);
  if (fd < 0) return default_host_address();
  std::string out = default_host_address();
  sockaddr_storage local{};
  socklen_t len = sizeof(local);
  if (::connect(fd, peer.data(), peer.size()) == 0 &&
      ::getsockname(fd, reinterpret_cast<sockaddr*>(&local), &len) == 0) {
    char buf[INET6_ADDRSTRLEN] = {};
    if (local.ss_family == AF_INET)
      inet_ntop(AF_INET, &reinterpret_cast<sockaddr_in*>(&local)->sin_addr, buf, sizeof(buf));
    else
      inet_ntop(AF_INET6, &reinterpret_cast<sockaddr_in6*>(&local)->sin6_addr, buf, sizeof(buf));
    out = local.ss_family == AF_INET6 ? "[" + std::string(buf) + "]" : std::string(buf);
  }
  ::close(fd);
  return out;
}

UdpSocket::UdpSocket(int family, const MulticastEndpoint& multicast) : family_(family), multicast_(multicast) {
  fd_ = ::socket(family, SOCK_DGRAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) fail(ErrorCode::SocketError, "socket(): " + errno_text());
  int hops = multicast.hop_limit;
  unsigned char loop = 1;
  if (family == AF_INET) {
    unsigned char ttl = static_cast<unsigned char>(hops);
    ::setsockopt(fd_, IPPROTO_IP, IP_MULTICAST_TTL, &ttl, sizeof(ttl));
    ::setsockopt(fd_, IPPROTO_IP, IP_MULTICAST_LOOP, &loop, sizeof(loop));
  } else {
    unsigned int loop6 = 1;
    ::setsockopt(fd_, IPPROTO_IPV6, IPV6_MULTICAST_HOPS, &hops, sizeof(hops));
    ::setsockopt(fd_, IPPROTO_IPV6, IPV6_MULTICAST_LOOP, &loop6, sizeof(loop6));
    int only = 1;
    ::setsockopt(fd_, IPPROTO_IPV6, IPV6_V6ONLY, &only, sizeof(only));
    if (!multicast.interface_v6.empty()) {
      unsigned int index = if_nametoindex(multicast.interface_v6.c_str());
      ::setsockopt(fd_, IPPROTO_IPV6, IPV6_MULTICAST_IF, &index, sizeof(index));
    }
  }
}

UdpSocket::~UdpSocket() {
  if (fd_ >= 0) ::close(fd_);
}

UdpSocket::UdpSocket(UdpSocket&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), family_(other.family_), multicast_(std::move(other.multicast_)) {}

UdpSocket& UdpSocket::operator=(UdpSocket&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(other.fd_, -1);
    family_ = other.family_;
    multicast_ = std::move(other.multicast_);
  }
  return *this;
}

void UdpSocket::bind(std::uint16_t port, bool reuse) {
  if (reuse) {
    int on = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &on, sizeof(on));
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEPORT, &on, sizeof(on));
  }
  int rc;
  if (family_ == AF_INET) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(port);
    rc = ::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  } else {
    sockaddr_in6 addr{};
    addr.sin6_family = AF_INET6;
    addr.sin6_addr = in6addr_any;
    addr.sin6_port = htons(port);
    rc = ::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  }
  if (rc != 0) fail(ErrorCode::BindFailure, "UDP bind to port " + std::to_string(port) + ": " + errno_text());
}

int UdpSocket::join_group() {
  int joined = 0;
  if (family_ == AF_INET) {
    std::vector<in_addr> ifaces;
    if (multicast_.interface_v4.empty()) {
      ifaces = ipv4_interfaces();
    } else {
      in_addr a{};
      if (inet_pton(AF_INET, multicast_.interface_v4.c_str(), &a) != 1)
        fail(ErrorCode::JoinFailure, "bad interface address " + multicast_.interface_v4);
      ifaces.push_back(a);
    }
    for (const auto& iface : ifaces) {
      ip_mreq req{};
      inet_pton(AF_INET, multicast_.group_v4.c_str(), &req.imr_multiaddr);
      req.imr_interface = iface;
      if (::setsockopt(fd_, IPPROTO_IP, IP_ADD_MEMBERSHIP, &req, sizeof(req)) == 0) {
        ++joined;
      } else {
        char buf[INET_ADDRSTRLEN] = {};
        inet_ntop(AF_INET, &iface, buf, sizeof(buf));
        spdlog::warn("multicast join on {} failed: {}", buf, errno_text());
      }
    }
  } else {
    ipv6_mreq req{};
    inet_pton(AF_INET6, multicast_.group_v6.c_str(), &req.ipv6mr_multiaddr);
    req.ipv6mr_interface = multicast_.interface_v6.empty() ? 0 : if_nametoindex(multicast_.interface_v6.c_str());
    if (::setsockopt(fd_, IPPROTO_IPV6, IPV6_JOIN_GROUP, &req, sizeof(req)) == 0) ++joined;
    else spdlog::warn("IPv6 multicast join failed: {}", errno_text());
  }
  if (joined == 0) fail(ErrorCode::JoinFailure, "could not join multicast group on any interface");
  return joined;
}

std::uint16_t UdpSocket::local_port() const {
  sockaddr_storage ss{};
  socklen_t len = sizeof(ss);
  if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&ss), &len) != 0) return 0;
  return SocketAddress(reinterpret_cast<sockaddr*>(&ss), len).port();
}

void UdpSocket::send_to(std::string_view payload, const SocketAddress& dest) const {
  auto send_once = [&] {
    auto n = ::sendto(fd_, payload.data(), payload.size(), 0, dest.data(), dest.size());
    if (n < 0) fail(ErrorCode::SocketError, "sendto " + dest.to_string() + ": " + errno_text());
  };
  if (family_ != AF_INET || !dest.is_multicast()) {
    send_once();
    return;
  }
  std::vector<in_addr> ifaces;
  if (multicast_.interface_v4.empty()) {
    ifaces = ipv4_interfaces();
  } else {
    in_addr a{};
    inet_pton(AF_INET, multicast_.interface_v4.c_str(), &a);
    ifaces.push_back(a);
  }
  if (ifaces.empty()) {
    send_once();
    return;
  }
  bool sent = false;
  for (const auto& iface : ifaces) {
    if (::setsockopt(fd_, IPPROTO_IP, IP_MULTICAST_IF, &iface, sizeof(iface)) != 0) continue;
    if (::sendto(fd_, payload.data(), payload.size(), 0, dest.data(), dest.size()) >= 0) sent = true;
  }
  if (!sent) fail(ErrorCode::SocketError, "multicast send to " + dest.to_string() + " failed on every interface");
}

std::optional<std::pair<std::string, SocketAddress>> UdpSocket::receive(Millis timeout) const {
  pollfd pfd{fd_, POLLIN, 0};
  int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
  if (rc <= 0 || !(pfd.revents & POLLIN)) return std::nullopt;
  std::string buf(65536, '\0');
  sockaddr_storage from{};
  socklen_t len = sizeof(from);
  auto n = ::recvfrom(fd_, buf.data(), buf.size(), 0, reinterpret_cast<sockaddr*>(&from), &len);
  if (n < 0) return std::nullopt;
  buf.resize(static_cast<std::size_t>(n));
  return std::make_pair(std::move(buf), SocketAddress(reinterpret_cast<sockaddr*>(&from), len));
}

void udp_send(const UdpSocket& socket, std::string_view payload, const SocketAddress& dest,
              const RetransmitPolicy& policy) {
  if (payload.size() > kUdpEnvelopeLimit)
    fail(ErrorCode::Oversize, "UDP payload of " + std::to_string(payload.size()) + " octets exceeds " +
                                  std::to_string(kUdpEnvelopeLimit));
  thread_local std::mt19937_64 rng{std::random_device{}()};
  auto delays = policy.draw_delays(rng);
  socket.send_to(payload, dest);
  for (auto d : delays) {
    std::this_thread::sleep_for(d);
    socket.send_to(payload, dest);
  }
}

UdpListener::UdpListener(const MulticastEndpoint& endpoint, DatagramHandler handler)
    : endpoint_(endpoint), handler_(std::move(handler)) {
  if (endpoint.ipv4) {
    UdpSocket s(AF_INET, endpoint);
    s.bind(endpoint.port, true);
    s.join_group();
    sockets_.push_back(std::move(s));
    reply_v4_ = UdpSocket(AF_INET, endpoint);
    reply_v4_.bind(0, false);
  }
  if (endpoint.ipv6) {
    try {
      UdpSocket s(AF_INET6, endpoint);
      s.bind(endpoint.port, true);
      s.join_group();
      sockets_.push_back(std::move(s));
      reply_v6_ = UdpSocket(AF_INET6, endpoint);
      reply_v6_.bind(0, false);
    } catch (const Error& e) {
      if (sockets_.empty()) throw;
      spdlog::warn("IPv6 discovery disabled: {}", e.what());
    }
  }
  if (sockets_.empty()) fail(ErrorCode::BindFailure, "no address family enabled for discovery");
  thread_ = std::thread([this] { run(); });
}

UdpListener::~UdpListener() { stop(); }

void UdpListener::stop() {
  stopping_ = true;
  if (thread_.joinable()) thread_.join();
}

const UdpSocket& UdpListener::reply_socket(int family) const {
  if (family == AF_INET6 && reply_v6_.fd() >= 0) return reply_v6_;
  return reply_v4_.fd() >= 0 ? reply_v4_ : reply_v6_;
}

void UdpListener::run() {
  std::vector<pollfd> fds;
  for (const auto& s : sockets_) fds.push_back({s.fd(), POLLIN, 0});
  std::string buf(65536, '\0');
  while (!stopping_) {
    for (auto& p : fds) p.revents = 0;
    int rc = ::poll(fds.data(), fds.size(), 50);
    if (rc <= 0) continue;
    for (const auto& p : fds) {
      if (!(p.revents & POLLIN)) continue;
      sockaddr_storage from{};
      socklen_t len = sizeof(from);
      auto n = ::recvfrom(p.fd, buf.data(), buf.size(), 0, reinterpret_cast<sockaddr*>(&from), &len);
      if (n < 0) continue;
      try {
        handler_(std::string(buf.data(), static_cast<std::size_t>(n)),
                 SocketAddress(reinterpret_cast<sockaddr*>(&from), len));
      } catch (const std::exception& e) {
        spdlog::debug("datagram handler: {}", e.what());
      }
    }
  }
}

}  // namespace dpws
