#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>

namespace dpws {

inline constexpr std::string_view kSoapContentType = "application/soap+xml";

struct HttpRequest {
  std::string method;
  std::string path;
  std::string content_type;
  std::string body;
  std::string remote_address;
};

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = std::string(kSoapContentType) + "; charset=utf-8";
  /// Set for 302 redirects.
  std::string location;
};

using HttpHandler = std::function<HttpResponse(const HttpRequest&)>;

struct HttpServerOptions {
  std::string host = "0.0.0.0";
  /// 0 binds an ephemeral port.
  std::uint16_t port = 0;
  std::chrono::milliseconds drain_window{2000};
  std::size_t keep_alive_max_requests = 10000;
  std::size_t max_body_bytes = 1 << 20;
};

/// Minimal HTTP/1.1 server for SOAP POSTs (and GET for redirects). Every
/// connection runs on its own thread, so a stalled handler never delays
/// other connections.
class HttpServer {
 public:
  HttpServer(HttpHandler handler, HttpServerOptions options = {});
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and starts accepting. Throws BindFailure.
  void start();
  /// Stops accepting, lets in-flight exchanges finish within the drain window.
  void stop();
  std::uint16_t port() const;
  bool running() const;
  /// Connections currently being served.
  std::size_t active_connections() const;

  struct Impl;

 private:
  std::shared_ptr<Impl> impl_;
};

struct HttpExchange {
  std::string method = "POST";
  std::string path;
  std::string content_type = std::string(kSoapContentType);
  std::string body;
  int status = 0;
  std::string response_body;
};

struct Url {
  std::string scheme;
  std::string host;
  std::uint16_t port = 80;
  std::string path = "/";

  /// Only http URLs; throws InvalidArgument otherwise.
  static Url parse(std::string_view text);
  std::string origin() const;
  std::string to_string() const { return origin() + path; }
};

/// Persistent keep-alive connection to one origin. Not thread-safe; use one
/// per thread or guard externally.
class HttpConnection {
 public:
  explicit HttpConnection(const Url& origin);
  ~HttpConnection();
  HttpConnection(const HttpConnection&) = delete;
  HttpConnection& operator=(const HttpConnection&) = delete;

  /// Errors: ConnectFailure, Timeout, ProtocolError.
  HttpExchange post(const std::string& path, std::string body, std::chrono::milliseconds timeout);
  const std::string& origin() const { return origin_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string origin_;
};

/// One-shot POST. `timeout` bounds connect plus the full response.
HttpExchange http_post(const std::string& url, std::string body, std::chrono::milliseconds timeout);

}  // namespace dpws
