// Hosts one device described by a YAML config until SIGINT/SIGTERM.
#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <string>

#include "common.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Host a DPWS device from a config file"};
  std::string config;
  int port = 0;
  std::string interface, advertise_host, log_level = "info";
  bool no_discovery = false;
  app.add_option("--config", config, "Device config (YAML)")->required();
  app.add_option("--port", port, "Override the HTTP port")->check(CLI::Range(1, 65535));
  app.add_option("--interface", interface, "IPv4 address of the multicast interface");
  app.add_option("--advertise-host", advertise_host, "Host written into transport addresses");
  app.add_flag("--no-discovery", no_discovery, "Do not join the discovery group");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? cli::kOk : cli::kUsage;
  }

  sigset_t signals = cli::block_termination();
  if (int rc = dpws_set_log_level(log_level.c_str())) return cli::report("dpwsd", "--log-level", rc);

  dpws_device_options options{port, advertise_host.empty() ? nullptr : advertise_host.c_str(),
                              interface.empty() ? nullptr : interface.c_str(), no_discovery ? 0 : -1};
  dpws_device* device = nullptr;
  if (int rc = dpws_device_load_file(config.c_str(), &options, &device)) return cli::report("dpwsd", config, rc);
  if (int rc = dpws_device_start(device)) {
    int code = cli::report("dpwsd", "start", rc);
    dpws_device_free(device);
    return code;
  }
  std::printf("%s %s\n", dpws_device_epr(device), dpws_device_xaddr(device));
  std::fflush(stdout);

  int sig = 0;
  sigwait(&signals, &sig);
  int rc = dpws_device_stop(device);
  dpws_device_free(device);
  if (rc) return cli::report("dpwsd", "stop", rc);
  return cli::kOk;
}
