#pragma once

#include <dpws/dpws.h>

#include <csignal>
#include <cstdio>
#include <string>

namespace cli {

enum Exit { kOk = 0, kUsage = 2, kNetwork = 3, kBenchErrors = 4 };

inline int exit_for(int status) {
  switch (status) {
    case DPWS_OK:
      return kOk;
    case DPWS_E_BIND:
    case DPWS_E_JOIN:
    case DPWS_E_SOCKET:
    case DPWS_E_CONNECT:
    case DPWS_E_TIMEOUT:
    case DPWS_E_PROTOCOL:
    case DPWS_E_FAULT:
    case DPWS_E_MALFORMED_METADATA:
    case DPWS_E_MALFORMED_XML:
    case DPWS_E_NOT_SOAP:
    case DPWS_E_NO_TRANSPORT_ADDRESS:
    case DPWS_E_SINK_BIND:
    case DPWS_E_UNKNOWN_SUBSCRIPTION:
    case DPWS_E_HANDLER:
      return kNetwork;
    default:
      return kUsage;
  }
}

/// Prints "prog: context: message" and returns the matching exit code. The
/// context is dropped when the message already names it.
inline int report(const char* prog, const std::string& context, int status) {
  std::string message = dpws_last_error();
  if (message.find(context) == std::string::npos)
    std::fprintf(stderr, "%s: %s: %s (%s)\n", prog, context.c_str(), message.c_str(), dpws_status_name(status));
  else
    std::fprintf(stderr, "%s: %s (%s)\n", prog, message.c_str(), dpws_status_name(status));
  return exit_for(status);
}

/// Blocks SIGINT/SIGTERM on the calling thread (and threads it spawns later)
/// so one thread can sigwait for them.
inline sigset_t block_termination() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

}  // namespace cli
