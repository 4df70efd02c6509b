#include "core/error.hpp"

namespace dpws {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Ok: return "Ok";
    case ErrorCode::MalformedXml: return "MalformedXml";
    case ErrorCode::NotSoap: return "NotSoap";
    case ErrorCode::MissingAction: return "MissingAction";
    case ErrorCode::Oversize: return "Oversize";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::BindFailure: return "BindFailure";
    case ErrorCode::JoinFailure: return "JoinFailure";
    case ErrorCode::SocketError: return "SocketError";
    case ErrorCode::ConnectFailure: return "ConnectFailure";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::DuplicateServiceId: return "DuplicateServiceId";
    case ErrorCode::InvalidService: return "InvalidService";
    case ErrorCode::AlreadyStarted: return "AlreadyStarted";
    case ErrorCode::NotStarted: return "NotStarted";
    case ErrorCode::UnknownService: return "UnknownService";
    case ErrorCode::UnknownAction: return "UnknownAction";
    case ErrorCode::TypeMismatch: return "TypeMismatch";
    case ErrorCode::HandlerError: return "HandlerError";
    case ErrorCode::MalformedMetadata: return "MalformedMetadata";
    case ErrorCode::UnknownEvent: return "UnknownEvent";
    case ErrorCode::UnknownSubscription: return "UnknownSubscription";
    case ErrorCode::InvalidExpiry: return "InvalidExpiry";
    case ErrorCode::UnsupportedDeliveryMode: return "UnsupportedDeliveryMode";
    case ErrorCode::UnknownEventFilter: return "UnknownEventFilter";
    case ErrorCode::FaultReceived: return "FaultReceived";
    case ErrorCode::UnknownOperation: return "UnknownOperation";
    case ErrorCode::NoTransportAddress: return "NoTransportAddress";
    case ErrorCode::InvalidTimeout: return "InvalidTimeout";
    case ErrorCode::SinkBindFailure: return "SinkBindFailure";
    case ErrorCode::Unsupported: return "Unsupported";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InternalError: return "InternalError";
  }
  return "Unknown";
}

}  // namespace dpws
