#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "tutorhub/config.hpp"
#include "tutorhub/coordinator.hpp"

namespace tutorhub {

// HTTP + WebSocket front door on one port.
//
//   POST /api/sessions                 {tutor_alias} -> {session_id, tutor_token}
//   POST /api/sessions/{id}/join       {alias, role, token?, takeover?}
//   POST /api/sessions/{id}/close      Authorization: Bearer <tutor token>
//   GET  /api/sessions/{id}/events     ?since_seq=&category=&format=lines
//   GET  /api/prompts
//   GET  /healthz
//   POST /api/test/clock               {advance_ms}; simulated clock only
//   GET  /ws?token=<token>             upgrade to the envelope socket
class Gateway {
 public:
  explicit Gateway(GatewayConfig config);
  ~Gateway();

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  // Binds, recovers existing logs and starts the worker threads. Returns the
  // bound port. Throws BindFailure, ConfigInvalid or StorageFailure.
  std::uint16_t start();

  // Closes every session (peers get Leave and are disconnected) and stops
  // serving. Idempotent.
  void stop(const std::string& reason = "server shutdown");

  // Blocks until the worker threads exit.
  void wait();

  // start(), then serve until SIGINT or SIGTERM.
  void run_until_signal();

  std::uint16_t port() const;
  Coordinator& coordinator();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace tutorhub
