#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "tutorhub/error.hpp"
#include "tutorhub/gateway.hpp"

using namespace tutorhub;

int main(int argc, char** argv) {
  CLI::App app{"tutorhub gateway: signaling, alerts, avatar commands and event log"};

  std::string config_path;
  std::optional<std::string> bind, data_dir;
  std::optional<int> port;
  std::optional<std::int64_t> inactivity, window, budget;
  std::optional<int> threshold;
  bool simulated = false;

  app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--bind", bind, "listen address (default 127.0.0.1)");
  app.add_option("--port", port, "listen port, 0 for ephemeral (default 8080)");
  app.add_option("--data-dir", data_dir, "event log directory (default ./data)");
  app.add_option("--inactivity-secs", inactivity, "inactivity alert threshold (default 120)");
  app.add_option("--incorrect-threshold", threshold,
                 "incorrect answers that raise an alert (default 3)");
  app.add_option("--incorrect-window-secs", window,
                 "window for counting incorrect answers (default 300)");
  app.add_option("--bandwidth-budget-kbps", budget,
                 "aggregate stream budget (default 4000)");
  app.add_flag("--simulated-clock", simulated,
               "test only: freeze time until POST /api/test/clock advances it");
  CLI11_PARSE(app, argc, argv);

  try {
    GatewayConfig config;
    if (!config_path.empty()) load_config_file(config, config_path);
    if (bind) config.bind = *bind;
    if (port) config.port = *port;
    if (data_dir) config.data_dir = *data_dir;
    if (inactivity) config.coordinator.alerts.inactivity_secs = *inactivity;
    if (threshold) config.coordinator.alerts.incorrect_threshold = *threshold;
    if (window) config.coordinator.alerts.incorrect_window_secs = *window;
    if (budget) config.coordinator.bandwidth_budget_kbps = *budget;
    if (simulated) config.simulated_clock = true;

    Gateway gateway(std::move(config));
    gateway.run_until_signal();
  } catch (const Error& err) {
    std::cerr << "gateway: " << err.what() << '\n';
    return err.code() == ErrorCode::BindFailure ? 3 : 2;
  }
  return 0;
}
