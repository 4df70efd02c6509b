#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core/device.hpp"
#include "core/scheduler.hpp"

namespace dpws {

/// Named handlers a config file may bind with `behavior: {script: NAME}`.
using HookRegistry = std::map<std::string, OperationHandler>;

/// Hooks every host gets: `fail` completes with an error.
HookRegistry builtin_hooks();

struct PeriodicEvent {
  std::string service_id;
  std::string event;
  Millis interval{1000};
  /// Produces the payload for each tick.
  OperationHandler source;
};

struct LoadedConfig {
  DeviceConfig device;
  std::vector<ServiceDefinition> services;
  std::vector<PeriodicEvent> periodic;
};

/// Errors are InvalidConfig with "source:line:column: path: reason".
LoadedConfig load_config_string(const std::string& text, const HookRegistry& hooks = builtin_hooks(),
                                const std::string& source_name = "<config>");
LoadedConfig load_config_file(const std::string& path, const HookRegistry& hooks = builtin_hooks());

/// A device built from a config, plus its periodic event emitters.
class HostedDevice {
 public:
  explicit HostedDevice(LoadedConfig config);
  ~HostedDevice();

  void start();
  void stop();
  Device& device() { return *device_; }

 private:
  std::unique_ptr<Device> device_;
  std::vector<PeriodicEvent> periodic_;
  std::unique_ptr<Scheduler> timers_;
};

}  // namespace dpws
