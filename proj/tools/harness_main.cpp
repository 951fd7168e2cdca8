#include <iostream>

#include <CLI11.hpp>

#include "tutorhub/error.hpp"
#include "tutorhub/harness.hpp"

using namespace tutorhub;
using namespace tutorhub::harness;

int main(int argc, char** argv) {
  CLI::App app{"synthetic tutor/student clients for a running gateway"};
  app.require_subcommand(1);
  std::string gateway = "127.0.0.1:8080";

  auto* run = app.add_subcommand("run", "run a scenario file");
  std::string scenario_path;
  int repeat = 1;
  run->add_option("scenario", scenario_path, "scenario file")->required()->check(CLI::ExistingFile);
  run->add_option("--gateway", gateway, "gateway host:port");
  run->add_option("--repeat", repeat, "run N times and require identical observations")
      ->check(CLI::PositiveNumber);

  auto* load = app.add_subcommand("load", "synthetic class under load");
  LoadOptions options;
  load->add_option("--students", options.students, "number of students")
      ->check(CLI::PositiveNumber);
  load->add_option("--duration", options.duration_secs, "seconds of telemetry traffic");
  load->add_option("--rate", options.events_per_sec, "telemetry events per student per second");
  load->add_option("--seed", options.seed, "random seed");
  load->add_option("--gateway", gateway, "gateway host:port");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto address = GatewayAddress::parse(gateway);
    if (*run) {
      const Scenario scenario = load_scenario(scenario_path);
      std::optional<std::vector<std::string>> first;
      bool ok = true;
      for (int i = 0; i < repeat; ++i) {
        const ScenarioReport report = run_scenario(scenario, address);
        std::cout << format_report(report);
        ok = ok && report.ok();
        if (!first) {
          first = report.observed;
        } else if (*first != report.observed) {
          std::cout << "run " << i + 1 << " observed a different alert/command sequence\n";
          ok = false;
        }
      }
      return ok ? 0 : 1;
    }
    const LoadReport report = load_run(address, options);
    std::cout << format_report(report);
    return report.connected == options.students && report.violations == 0 ? 0 : 1;
  } catch (const Error& err) {
    std::cerr << "harness: " << err.what() << '\n';
    return 2;
  }
}
