#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tutorhub/protocol.hpp"

// Headless tutor and student clients that speak only the public HTTP and
// WebSocket interfaces of a running gateway.
namespace tutorhub::harness {

struct GatewayAddress {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8080;

  // "host:port", "port" or "http://host:port". Throws InvalidArgument.
  static GatewayAddress parse(std::string_view text);
  std::string str() const;
};

struct HttpReply {
  int status = 0;
  std::string body;

  // Throws MalformedFrame when the body is not JSON.
  nlohmann::json json() const;
};

// One request on a fresh connection. Throws ConnectionFailure.
HttpReply http_call(const GatewayAddress& gateway, std::string_view method,
                    const std::string& target, const std::string& body = {},
                    const std::string& bearer = {});

// ---- scenarios ----------------------------------------------------------------
//
//   # comment
//   clock simulated | real
//   tutor <alias>
//   students <alias> <alias> ...
//   at <secs> <step>
//
// Steps: join <alias> | leave <alias> | handshake <student>
//        telemetry <student> click|key|correct|incorrect|heartbeat
//        chat <from> <to|*> <text...> | zoom <student|none>
//        dispatch <student> <text...> | dispatch_silent <student> <text...>
//        expect <client> <Kind> [field=value ...] [within=<secs>]
//        expect_none <client> <Kind> [field=value ...]
//        expect_log <Category> [field=value ...]
//
// Field paths are dotted (tier.name). A value written @alias is replaced by
// that client's peer id, * matches any non-null value, and double quotes
// allow spaces.

struct Step {
  int line = 0;
  double at_secs = 0;
  std::string verb;
  std::vector<std::string> args;
};

struct Scenario {
  bool simulated_clock = true;
  std::string tutor_alias = "Tutor";
  std::vector<std::string> students;
  std::vector<Step> steps;
};

// Throws ScenarioParseError (with the line number) on bad syntax, unknown
// steps or aliases, or step times that go backwards.
Scenario parse_scenario(std::string_view text);
Scenario load_scenario(const std::filesystem::path& path);

struct AssertionResult {
  int line = 0;
  std::string description;
  bool passed = false;
  std::string detail;
};

struct ScenarioReport {
  std::vector<AssertionResult> assertions;
  std::optional<AssertionResult> first_failure;
  // Alert and AvatarCommand payloads per client, timestamps removed; equal
  // across runs of a deterministic scenario.
  std::vector<std::string> observed;

  bool ok() const { return !first_failure.has_value(); }
};

// Throws ConnectionFailure when the gateway is unreachable or lacks the
// simulated clock a scenario asks for.
ScenarioReport run_scenario(const Scenario& scenario, const GatewayAddress& gateway);

std::string format_report(const ScenarioReport& report);

// ---- load ---------------------------------------------------------------------------

struct LoadOptions {
  int students = 1;
  double duration_secs = 10;
  double events_per_sec = 1.0;  // telemetry per student
  std::uint64_t seed = 1;
  double connect_timeout_secs = 30;
};

struct LoadReport {
  int students = 0;
  int connected = 0;               // students whose Answer arrived
  int connected_in_log = 0;        // students with a logged transition to Connected
  double all_connected_ms = 0;     // first join request to last Answer
  std::vector<double> join_to_connected_ms;
  std::vector<double> rtt_ms;      // heartbeat round trips
  double healthz_max_ms = 0;
  std::size_t healthz_samples = 0;
  std::size_t envelopes_sent = 0;
  std::size_t envelopes_received = 0;
  std::size_t violations = 0;      // Lifecycle violation records in the log
  std::size_t error_envelopes = 0;
};

// p in [0, 100]; nearest-rank. Returns 0 for an empty sample.
double percentile(std::vector<double> samples, double p);

// Throws InvalidArgument when students < 1; ConnectionFailure.
LoadReport load_run(const GatewayAddress& gateway, const LoadOptions& options);

std::string format_report(const LoadReport& report);

}  // namespace tutorhub::harness
