#include "core/http.hpp"

#define CPPHTTPLIB_LISTEN_BACKLOG 1024
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <charconv>
#include <condition_variable>
#include <mutex>
#include <thread>

#include "core/error.hpp"

namespace dpws {

namespace {

struct ConnectionTracker {
  std::mutex mutex;
  std::condition_variable idle;
  std::size_t active = 0;
};

// One thread per accepted connection; each thread holds the owning server
// state until it exits.
class PerConnectionQueue final : public httplib::TaskQueue {
 public:
  PerConnectionQueue(std::shared_ptr<ConnectionTracker> tracker, std::weak_ptr<void> owner,
                     std::chrono::milliseconds drain)
      : tracker_(std::move(tracker)), owner_(std::move(owner)), drain_(drain) {}

  bool enqueue(std::function<void()> fn) override {
    auto keep = owner_.lock();
    if (!keep) return false;
    {
      std::lock_guard lock(tracker_->mutex);
      ++tracker_->active;
    }
    std::thread([fn = std::move(fn), keep, tracker = tracker_] {
      try {
        fn();
      } catch (const std::exception& e) {
        spdlog::warn("HTTP connection error: {}", e.what());
      }
      {
        std::lock_guard lock(tracker->mutex);
        --tracker->active;
      }
      tracker->idle.notify_all();
    }).detach();
    return true;
  }

  void shutdown() override {
    std::unique_lock lock(tracker_->mutex);
    if (!tracker_->idle.wait_for(lock, drain_, [&] { return tracker_->active == 0; }))
      spdlog::warn("HTTP drain window elapsed with {} connection(s) still active", tracker_->active);
  }

 private:
  std::shared_ptr<ConnectionTracker> tracker_;
  std::weak_ptr<void> owner_;
  std::chrono::milliseconds drain_;
};

}  // namespace

struct HttpServer::Impl : std::enable_shared_from_this<HttpServer::Impl> {
  HttpHandler handler;
  HttpServerOptions options;
  httplib::Server server;
  std::shared_ptr<ConnectionTracker> tracker = std::make_shared<ConnectionTracker>();
  std::thread listen_thread;
  std::uint16_t bound_port = 0;
  std::atomic<bool> running{false};
  std::mutex lifecycle;
};

HttpServer::HttpServer(HttpHandler handler, HttpServerOptions options) : impl_(std::make_shared<Impl>()) {
  impl_->handler = std::move(handler);
  impl_->options = std::move(options);
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::start() {
  std::lock_guard guard(impl_->lifecycle);
  if (impl_->running) fail(ErrorCode::AlreadyStarted, "HTTP server already running");
  auto& svr = impl_->server;
  std::weak_ptr<Impl> weak = impl_;

  auto route = [weak](const httplib::Request& req, httplib::Response& res) {
    auto self = weak.lock();
    if (!self) {
      res.status = 503;
      return;
    }
    HttpRequest in{req.method, req.path, req.get_header_value("Content-Type"), req.body, req.remote_addr};
    HttpResponse out;
    try {
      out = self->handler(in);
    } catch (const std::exception& e) {
      spdlog::error("HTTP handler threw: {}", e.what());
      out.status = 500;
      out.body.clear();
    }
    res.status = out.status;
    if (!out.location.empty()) res.set_header("Location", out.location);
    if (!out.body.empty() || out.status != 302) res.set_content(out.body, out.content_type);
  };
  svr.Post(".*", route);
  svr.Get(".*", route);
  svr.set_keep_alive_max_count(impl_->options.keep_alive_max_requests);
  svr.set_keep_alive_timeout(5);
  svr.set_tcp_nodelay(true);
  svr.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  svr.set_payload_max_length(impl_->options.max_body_bytes);
  svr.set_read_timeout(10, 0);
  svr.set_write_timeout(10, 0);
  auto tracker = impl_->tracker;
  auto drain = impl_->options.drain_window;
  std::weak_ptr<void> owner = impl_;
  svr.new_task_queue = [tracker, owner, drain] { return new PerConnectionQueue(tracker, owner, drain); };

  int port = impl_->options.port;
  if (port == 0) {
    port = svr.bind_to_any_port(impl_->options.host);
    if (port < 0) fail(ErrorCode::BindFailure, "cannot bind an ephemeral HTTP port on " + impl_->options.host);
  } else if (!svr.bind_to_port(impl_->options.host, port)) {
    fail(ErrorCode::BindFailure, "cannot bind HTTP port " + std::to_string(port) + " on " + impl_->options.host);
  }
  impl_->bound_port = static_cast<std::uint16_t>(port);
  impl_->running = true;
  auto self = impl_.get();
  impl_->listen_thread = std::thread([self] { self->server.listen_after_bind(); });
  svr.wait_until_ready();
}

void HttpServer::stop() {
  std::lock_guard guard(impl_->lifecycle);
  if (!impl_->running) return;
  impl_->server.stop();
  if (impl_->listen_thread.joinable()) impl_->listen_thread.join();
  impl_->running = false;
}

std::uint16_t HttpServer::port() const { return impl_->bound_port; }
bool HttpServer::running() const { return impl_->running; }

std::size_t HttpServer::active_connections() const {
  std::lock_guard lock(impl_->tracker->mutex);
  return impl_->tracker->active;
}

Url Url::parse(std::string_view text) {
  Url url;
  auto scheme_end = text.find("://");
  if (scheme_end == std::string_view::npos) fail(ErrorCode::InvalidArgument, "not an absolute URL: " + std::string(text));
  url.scheme = std::string(text.substr(0, scheme_end));
  if (url.scheme != "http") fail(ErrorCode::InvalidArgument, "unsupported URL scheme: " + url.scheme);
  auto rest = text.substr(scheme_end + 3);
  auto slash = rest.find('/');
  std::string authority(slash == std::string_view::npos ? rest : rest.substr(0, slash));
  url.path = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
  std::string port_text;
  if (!authority.empty() && authority.front() == '[') {
    auto close = authority.find(']');
    if (close == std::string::npos) fail(ErrorCode::InvalidArgument, "bad IPv6 authority in URL");
    url.host = authority.substr(1, close - 1);
    if (close + 1 < authority.size() && authority[close + 1] == ':') port_text = authority.substr(close + 2);
  } else {
    auto colon = authority.rfind(':');
    url.host = authority.substr(0, colon);
    if (colon != std::string::npos) port_text = authority.substr(colon + 1);
  }
  if (url.host.empty()) fail(ErrorCode::InvalidArgument, "URL without host: " + std::string(text));
  if (!port_text.empty()) {
    unsigned value = 0;
    auto r = std::from_chars(port_text.data(), port_text.data() + port_text.size(), value);
    if (r.ec != std::errc{} || r.ptr != port_text.data() + port_text.size() || value == 0 || value > 65535)
      fail(ErrorCode::InvalidArgument, "bad port in URL: " + std::string(text));
    url.port = static_cast<std::uint16_t>(value);
  }
  return url;
}

std::string Url::origin() const {
  auto h = host.find(':') != std::string::npos ? "[" + host + "]" : host;
  return scheme + "://" + h + ":" + std::to_string(port);
}

struct HttpConnection::Impl {
  explicit Impl(const Url& url) : client(url.host, url.port) {
    client.set_keep_alive(true);
    client.set_tcp_nodelay(true);
  }
  httplib::Client client;
};

HttpConnection::HttpConnection(const Url& origin) : impl_(std::make_unique<Impl>(origin)), origin_(origin.origin()) {}
HttpConnection::~HttpConnection() = default;

HttpExchange HttpConnection::post(const std::string& path, std::string body, std::chrono::milliseconds timeout) {
  using clock = std::chrono::steady_clock;
  auto& cli = impl_->client;
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);

  HttpExchange ex;
  ex.path = path;
  ex.body = std::move(body);
  auto started = clock::now();
  auto res = cli.Post(path, ex.body, std::string(kSoapContentType) + "; charset=utf-8");
  if (!res) {
    auto err = res.error();
    auto elapsed = clock::now() - started;
    std::string where = origin_ + path;
    if (err == httplib::Error::Connection && elapsed < timeout)
      fail(ErrorCode::ConnectFailure, "cannot connect to " + where);
    if (err == httplib::Error::ConnectionTimeout || elapsed >= timeout * 9 / 10)
      fail(ErrorCode::Timeout, "no response from " + where + " within " + std::to_string(timeout.count()) + " ms");
    if (err == httplib::Error::Connection) fail(ErrorCode::ConnectFailure, "cannot connect to " + where);
    fail(ErrorCode::ProtocolError, "HTTP exchange with " + where + " failed: " + httplib::to_string(err));
  }
  ex.status = res->status;
  ex.response_body = std::move(res->body);
  return ex;
}

HttpExchange http_post(const std::string& url, std::string body, std::chrono::milliseconds timeout) {
  Url u = Url::parse(url);
  HttpConnection conn(u);
  return conn.post(u.path, std::move(body), timeout);
}

}  // namespace dpws
