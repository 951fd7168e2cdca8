#pragma once

#include <atomic>
#include <chrono>

#include "tutorhub/types.hpp"

namespace tutorhub {

class Clock {
 public:
  virtual ~Clock() = default;
  virtual TimestampMs now() const = 0;
};

// Wall time in milliseconds since the Unix epoch.
class SystemClock final : public Clock {
 public:
  TimestampMs now() const override {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch())
        .count();
  }
};

// Simulated time, advanced explicitly by tests and by the gateway's
// test-only clock endpoint.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(TimestampMs start = 0) : now_(start) {}

  TimestampMs now() const override { return now_.load(); }
  void set(TimestampMs t) { now_.store(t); }
  TimestampMs advance(TimestampMs delta) { return now_.fetch_add(delta) + delta; }

 private:
  std::atomic<TimestampMs> now_;
};

// Forces a possibly non-monotone source to never run backwards.
class MonotoneStamp {
 public:
  TimestampMs next(TimestampMs observed) {
    if (observed > last_) last_ = observed;
    return last_;
  }
  TimestampMs last() const { return last_; }

 private:
  TimestampMs last_ = 0;
};

}  // namespace tutorhub
