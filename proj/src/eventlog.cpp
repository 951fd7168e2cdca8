#include "tutorhub/eventlog.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tutorhub/error.hpp"

namespace tutorhub {

namespace {

constexpr std::array<std::string_view, 6> kCategoryNames = {
    "Chat", "Telemetry", "Alert", "AvatarCommand", "Signal", "Lifecycle"};

constexpr const char* kLogFile = "events.log";

[[noreturn]] void storage_failure(const std::string& what) {
  throw Error(ErrorCode::StorageFailure, what);
}

[[noreturn]] void storage_errno(const std::string& what) {
  storage_failure(what + ": " + std::strerror(errno));
}

bool valid_subject(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (c == ' ' || c == '\n' || c == '\r' || c == '\t') return false;
  }
  return true;
}

bool valid_session_name(std::string_view s) {
  if (s.empty() || s == "." || s == "..") return false;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '-' || c == '_';
    if (!ok) return false;
  }
  return true;
}

template <class T>
T parse_number(std::string_view text) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    storage_failure("bad number in log record: " + std::string(text));
  }
  return value;
}

void write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      storage_errno("write");
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

void sync_directory(const std::filesystem::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

// Reads complete lines; reports the byte length of the complete prefix so a
// torn tail can be cut off.
std::vector<std::string> read_complete_lines(const std::filesystem::path& path,
                                             std::uintmax_t* complete_bytes) {
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  std::vector<std::string> lines;
  std::size_t start = 0;
  for (std::size_t nl = content.find('\n'); nl != std::string::npos;
       nl = content.find('\n', start)) {
    lines.emplace_back(content.substr(start, nl - start));
    start = nl + 1;
  }
  if (complete_bytes) *complete_bytes = start;
  return lines;
}

bool mentions(const LogRecord& r, const PeerId& student) {
  if (r.subject == student.str()) return true;
  const auto body = nlohmann::json::parse(r.body, nullptr, false);
  if (!body.is_object()) return false;
  for (const char* key : {"to", "target"}) {
    auto it = body.find(key);
    if (it != body.end() && it->is_string()) {
      const auto& to = it->get_ref<const std::string&>();
      if (to == student.str() || to == kBroadcastPeer.str()) return true;
    }
  }
  return false;
}

}  // namespace

std::string_view to_string(LogCategory category) {
  return kCategoryNames[static_cast<std::size_t>(category)];
}

std::optional<LogCategory> parse_log_category(std::string_view text) {
  for (std::size_t i = 0; i < kCategoryNames.size(); ++i) {
    if (kCategoryNames[i] == text) return static_cast<LogCategory>(i);
  }
  return std::nullopt;
}

std::string format_record(const LogRecord& r) {
  std::string line;
  line.reserve(r.body.size() + r.subject.size() + 48);
  line += std::to_string(r.global_seq);
  line += ' ';
  line += std::to_string(r.ts);
  line += ' ';
  line += to_string(r.category);
  line += ' ';
  line += r.subject;
  line += ' ';
  line += r.body;
  return line;
}

LogRecord parse_record(std::string_view line) {
  std::array<std::string_view, 4> head;
  for (auto& part : head) {
    const auto space = line.find(' ');
    if (space == std::string_view::npos) storage_failure("truncated log record");
    part = line.substr(0, space);
    line.remove_prefix(space + 1);
  }
  LogRecord r;
  r.global_seq = parse_number<std::uint64_t>(head[0]);
  r.ts = parse_number<TimestampMs>(head[1]);
  auto category = parse_log_category(head[2]);
  if (!category) storage_failure("unknown log category " + std::string(head[2]));
  r.category = *category;
  r.subject = std::string(head[3]);
  r.body = std::string(line);
  return r;
}

// ---- FileLogStorage ---------------------------------------------------------

FileLogStorage::FileLogStorage(std::filesystem::path root) : root_(std::move(root)) {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec) storage_failure("cannot create " + root_.string() + ": " + ec.message());
}

FileLogStorage::~FileLogStorage() {
  for (auto& [session, fd] : fds_) ::close(fd);
}

std::filesystem::path FileLogStorage::path_for(const SessionId& session) const {
  return root_ / session.str() / kLogFile;
}

void FileLogStorage::create(const SessionId& session) {
  if (!valid_session_name(session.str())) {
    storage_failure("session id not usable as a directory: " + session.str());
  }
  std::error_code ec;
  std::filesystem::create_directories(root_ / session.str(), ec);
  if (ec) storage_failure("cannot create session directory: " + ec.message());
  std::lock_guard lock(mutex_);
  descriptor(session);
  sync_directory(root_ / session.str());
  sync_directory(root_);
}

int FileLogStorage::descriptor(const SessionId& session) {
  if (auto it = fds_.find(session); it != fds_.end()) return it->second;
  const auto path = path_for(session);
  if (std::filesystem::exists(path)) {
    std::uintmax_t complete = 0;
    read_complete_lines(path, &complete);
    if (std::filesystem::file_size(path) != complete) {
      std::filesystem::resize_file(path, complete);
    }
  }
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) storage_errno("open " + path.string());
  fds_.emplace(session, fd);
  return fd;
}

void FileLogStorage::append(const SessionId& session,
                            std::span<const LogRecord> records) {
  if (records.empty()) return;
  std::string buffer;
  for (const auto& r : records) {
    buffer += format_record(r);
    buffer += '\n';
  }

  std::lock_guard lock(mutex_);
  if (!fds_.contains(session) && !std::filesystem::exists(path_for(session))) {
    storage_failure("no log for session " + session.str());
  }
  const int fd = descriptor(session);
  struct stat st {};
  if (::fstat(fd, &st) != 0) storage_errno("fstat");
  try {
    write_all(fd, buffer);
    if (::fdatasync(fd) != 0) storage_errno("fdatasync");
  } catch (...) {
    // Roll back a partial batch so it can never be read back.
    if (::ftruncate(fd, st.st_size) != 0) {
      // The record stays unacknowledged either way; load() drops torn lines.
    }
    throw;
  }
}

std::vector<LogRecord> FileLogStorage::load(const SessionId& session) {
  const auto path = path_for(session);
  if (!std::filesystem::exists(path)) storage_failure("no log for session " + session.str());
  std::vector<LogRecord> out;
  for (const auto& line : read_complete_lines(path, nullptr)) {
    out.push_back(parse_record(line));
  }
  return out;
}

std::vector<SessionId> FileLogStorage::sessions() {
  std::vector<SessionId> out;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(root_, ec)) {
    if (entry.is_directory() && std::filesystem::exists(entry.path() / kLogFile)) {
      out.emplace_back(entry.path().filename().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---- MemoryLogStorage -------------------------------------------------------

void MemoryLogStorage::create(const SessionId& session) {
  std::lock_guard lock(mutex_);
  logs_.try_emplace(session);
}

void MemoryLogStorage::append(const SessionId& session,
                              std::span<const LogRecord> records) {
  std::lock_guard lock(mutex_);
  auto it = logs_.find(session);
  if (it == logs_.end()) storage_failure("no log for session " + session.str());
  it->second.insert(it->second.end(), records.begin(), records.end());
}

std::vector<LogRecord> MemoryLogStorage::load(const SessionId& session) {
  std::lock_guard lock(mutex_);
  auto it = logs_.find(session);
  if (it == logs_.end()) storage_failure("no log for session " + session.str());
  return it->second;
}

std::vector<SessionId> MemoryLogStorage::sessions() {
  std::lock_guard lock(mutex_);
  std::vector<SessionId> out;
  for (const auto& [id, records] : logs_) out.push_back(id);
  std::sort(out.begin(), out.end());
  return out;
}

// ---- EventLog ---------------------------------------------------------------

EventLog::EventLog(std::shared_ptr<LogStorage> storage,
                   std::shared_ptr<const Clock> clock)
    : storage_(std::move(storage)), clock_(std::move(clock)) {}

void EventLog::create_session(const SessionId& session) {
  std::unique_lock lock(mutex_);
  if (logs_.contains(session)) return;
  storage_->create(session);
  logs_.emplace(session, std::make_shared<SessionLog>());
}

bool EventLog::has_session(const SessionId& session) const {
  std::shared_lock lock(mutex_);
  return logs_.contains(session);
}

void EventLog::recover() {
  for (const auto& session : storage_->sessions()) {
    auto log = std::make_shared<SessionLog>();
    log->records = storage_->load(session);
    for (std::size_t i = 0; i < log->records.size(); ++i) {
      if (log->records[i].global_seq != i + 1) {
        storage_failure("gap in log of session " + session.str());
      }
    }
    if (!log->records.empty()) log->stamp.next(log->records.back().ts);
    std::unique_lock lock(mutex_);
    logs_[session] = std::move(log);
  }
}

std::shared_ptr<EventLog::SessionLog> EventLog::find(const SessionId& session) const {
  std::shared_lock lock(mutex_);
  auto it = logs_.find(session);
  if (it == logs_.end()) throw Error(ErrorCode::SessionNotFound, session.str());
  return it->second;
}

std::uint64_t EventLog::append(const SessionId& session, LogCategory category,
                               std::string subject, std::string body) {
  std::vector<PendingRecord> batch;
  batch.push_back({category, std::move(subject), std::move(body)});
  return append_batch(session, std::move(batch));
}

std::uint64_t EventLog::append_batch(const SessionId& session,
                                     std::vector<PendingRecord> pending) {
  auto log = find(session);
  std::lock_guard append_lock(log->append_mutex);

  std::uint64_t seq;
  {
    std::shared_lock read(log->records_mutex);
    seq = log->records.size();
  }
  if (pending.empty()) return seq;

  const TimestampMs ts = log->stamp.next(clock_->now());
  std::vector<LogRecord> records;
  records.reserve(pending.size());
  for (auto& p : pending) {
    if (!valid_subject(p.subject)) {
      throw Error(ErrorCode::InvalidArgument, "log subject must be a single token");
    }
    if (p.body.find('\n') != std::string::npos) {
      throw Error(ErrorCode::InvalidArgument, "log body must be a single line");
    }
    records.push_back({++seq, ts, p.category, std::move(p.subject), std::move(p.body)});
  }

  storage_->append(session, records);

  std::unique_lock write(log->records_mutex);
  for (auto& r : records) log->records.push_back(std::move(r));
  return seq;
}

std::vector<LogRecord> EventLog::query(const SessionId& session,
                                       const LogFilter& filter) const {
  auto log = find(session);
  std::shared_lock read(log->records_mutex);
  std::vector<LogRecord> out;
  for (const auto& r : log->records) {
    if (!filter.categories.empty() &&
        std::find(filter.categories.begin(), filter.categories.end(), r.category) ==
            filter.categories.end()) {
      continue;
    }
    if (filter.subject && r.subject != *filter.subject) continue;
    if (filter.ts_from && r.ts < *filter.ts_from) continue;
    if (filter.ts_to && r.ts > *filter.ts_to) continue;
    if (filter.seq_from && r.global_seq < *filter.seq_from) continue;
    if (filter.seq_to && r.global_seq > *filter.seq_to) continue;
    out.push_back(r);
  }
  return out;
}

std::vector<LogRecord> EventLog::transcript(const SessionId& session,
                                            const PeerId& student) const {
  auto log = find(session);
  std::shared_lock read(log->records_mutex);
  bool joined = false;
  std::vector<LogRecord> out;
  for (const auto& r : log->records) {
    if (r.category == LogCategory::Lifecycle && r.subject == student.str()) {
      joined = true;
    }
    if ((r.category == LogCategory::Chat || r.category == LogCategory::AvatarCommand) &&
        mentions(r, student)) {
      out.push_back(r);
    }
  }
  if (!joined) throw Error(ErrorCode::UnknownPeer, student.str());
  return out;
}

std::uint64_t EventLog::last_seq(const SessionId& session) const {
  auto log = find(session);
  std::shared_lock read(log->records_mutex);
  return log->records.size();
}

}  // namespace tutorhub
