#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tutorhub/clock.hpp"
#include "tutorhub/types.hpp"

namespace tutorhub {

enum class LogCategory { Chat, Telemetry, Alert, AvatarCommand, Signal, Lifecycle };

std::string_view to_string(LogCategory category);
std::optional<LogCategory> parse_log_category(std::string_view text);

// Subject used for records that concern the whole session.
inline constexpr std::string_view kSessionSubject = "-";

struct LogRecord {
  std::uint64_t global_seq = 0;
  TimestampMs ts = 0;
  LogCategory category = LogCategory::Lifecycle;
  std::string subject;
  std::string body;  // payload JSON, single line

  friend bool operator==(const LogRecord&, const LogRecord&) = default;
};

// On-disk line, without the trailing newline:
//   <global_seq> <ts> <category> <subject> <body>
std::string format_record(const LogRecord& record);
// Throws StorageFailure on a malformed line.
LogRecord parse_record(std::string_view line);

// Durable append-only storage, one log per session.
class LogStorage {
 public:
  virtual ~LogStorage() = default;

  virtual void create(const SessionId& session) = 0;
  // Returns only once every record is durable. On failure nothing of the
  // batch is visible to a later load(). Throws StorageFailure.
  virtual void append(const SessionId& session,
                      std::span<const LogRecord> records) = 0;
  virtual std::vector<LogRecord> load(const SessionId& session) = 0;
  virtual std::vector<SessionId> sessions() = 0;
};

// <root>/<session>/events.log, fdatasync'd once per appended batch. A torn
// final line (no newline) was never acknowledged and is dropped on open.
class FileLogStorage final : public LogStorage {
 public:
  explicit FileLogStorage(std::filesystem::path root);
  ~FileLogStorage() override;

  FileLogStorage(const FileLogStorage&) = delete;
  FileLogStorage& operator=(const FileLogStorage&) = delete;

  void create(const SessionId& session) override;
  void append(const SessionId& session, std::span<const LogRecord> records) override;
  std::vector<LogRecord> load(const SessionId& session) override;
  std::vector<SessionId> sessions() override;

  std::filesystem::path path_for(const SessionId& session) const;

 private:
  int descriptor(const SessionId& session);

  std::filesystem::path root_;
  std::mutex mutex_;
  std::unordered_map<SessionId, int> fds_;
};

class MemoryLogStorage final : public LogStorage {
 public:
  void create(const SessionId& session) override;
  void append(const SessionId& session, std::span<const LogRecord> records) override;
  std::vector<LogRecord> load(const SessionId& session) override;
  std::vector<SessionId> sessions() override;

 private:
  std::mutex mutex_;
  std::unordered_map<SessionId, std::vector<LogRecord>> logs_;
};

struct PendingRecord {
  LogCategory category = LogCategory::Lifecycle;
  std::string subject;
  std::string body;
};

struct LogFilter {
  std::vector<LogCategory> categories;  // empty: any
  std::optional<std::string> subject;
  std::optional<TimestampMs> ts_from, ts_to;           // inclusive
  std::optional<std::uint64_t> seq_from, seq_to;       // inclusive
};

// Totally ordered per-session record of everything significant. Appends to
// one session serialize; queries run concurrently and see a consistent
// prefix.
class EventLog {
 public:
  EventLog(std::shared_ptr<LogStorage> storage, std::shared_ptr<const Clock> clock);

  void create_session(const SessionId& session);
  bool has_session(const SessionId& session) const;

  // Reloads every session the storage knows about; sequence numbering
  // continues after the last durable record.
  void recover();

  // Both return the (last) assigned global_seq once durable.
  std::uint64_t append(const SessionId& session, LogCategory category,
                       std::string subject, std::string body);
  std::uint64_t append_batch(const SessionId& session,
                             std::vector<PendingRecord> records);

  std::vector<LogRecord> query(const SessionId& session,
                               const LogFilter& filter = {}) const;

  // Chat and AvatarCommand records to, from or broadcast at the student.
  // Throws UnknownPeer if the student never joined this session.
  std::vector<LogRecord> transcript(const SessionId& session,
                                    const PeerId& student) const;

  std::uint64_t last_seq(const SessionId& session) const;

 private:
  struct SessionLog {
    std::mutex append_mutex;
    mutable std::shared_mutex records_mutex;
    std::vector<LogRecord> records;
    MonotoneStamp stamp;
  };

  std::shared_ptr<SessionLog> find(const SessionId& session) const;

  std::shared_ptr<LogStorage> storage_;
  std::shared_ptr<const Clock> clock_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<SessionId, std::shared_ptr<SessionLog>> logs_;
};

}  // namespace tutorhub
