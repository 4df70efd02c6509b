#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dpws {

/// Every failure raised by the stack carries one of these codes. The numeric
/// values are stable: the C API returns them unchanged.
enum class ErrorCode : int {
  Ok = 0,
  // xmlsoap
  MalformedXml = 1,
  NotSoap = 2,
  MissingAction = 3,
  Oversize = 4,
  InvariantViolation = 5,
  // transport
  BindFailure = 10,
  JoinFailure = 11,
  SocketError = 12,
  ConnectFailure = 13,
  Timeout = 14,
  ProtocolError = 15,
  // device / metadata / eventing
  InvalidConfig = 20,
  DuplicateServiceId = 21,
  InvalidService = 22,
  AlreadyStarted = 23,
  NotStarted = 24,
  UnknownService = 25,
  UnknownAction = 26,
  TypeMismatch = 27,
  HandlerError = 28,
  MalformedMetadata = 29,
  UnknownEvent = 30,
  UnknownSubscription = 31,
  InvalidExpiry = 32,
  UnsupportedDeliveryMode = 33,
  UnknownEventFilter = 34,
  // client
  FaultReceived = 40,
  UnknownOperation = 41,
  NoTransportAddress = 42,
  InvalidTimeout = 43,
  SinkBindFailure = 44,
  Unsupported = 45,
  InvalidArgument = 46,
  InternalError = 99,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised by the client when the peer answered with a SOAP fault.
class FaultError : public Error {
 public:
  FaultError(std::string code, std::string subcode, std::string reason)
      : Error(ErrorCode::FaultReceived, "SOAP fault " + code +
                                            (subcode.empty() ? "" : "/" + subcode) + ": " + reason),
        code_(std::move(code)),
        subcode_(std::move(subcode)),
        reason_(std::move(reason)) {}

  const std::string& fault_code() const noexcept { return code_; }
  const std::string& fault_subcode() const noexcept { return subcode_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string code_;
  std::string subcode_;
  std::string reason_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace dpws
