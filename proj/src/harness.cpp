#include "tutorhub/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "tutorhub/error.hpp"
#include "tutorhub/eventlog.hpp"

namespace tutorhub::harness {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using Json = nlohmann::json;
using SteadyClock = std::chrono::steady_clock;

namespace {

double ms_since(SteadyClock::time_point t0) {
  return std::chrono::duration<double, std::milli>(SteadyClock::now() - t0).count();
}

[[noreturn]] void connection_failure(const std::string& what) {
  throw Error(ErrorCode::ConnectionFailure, what);
}

}  // namespace

// ---- addresses and HTTP -------------------------------------------------------

GatewayAddress GatewayAddress::parse(std::string_view text) {
  if (text.starts_with("http://")) text.remove_prefix(7);
  if (text.starts_with("ws://")) text.remove_prefix(5);
  while (text.ends_with('/')) text.remove_suffix(1);
  GatewayAddress a;
  std::string_view port_text = text;
  if (auto colon = text.rfind(':'); colon != std::string_view::npos) {
    a.host = std::string(text.substr(0, colon));
    port_text = text.substr(colon + 1);
  }
  unsigned port = 0;
  auto [p, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc{} || p != port_text.data() + port_text.size() || port == 0 ||
      port > 65535 || a.host.empty()) {
    throw Error(ErrorCode::InvalidArgument, "bad gateway address " + std::string(text));
  }
  a.port = static_cast<std::uint16_t>(port);
  return a;
}

std::string GatewayAddress::str() const { return host + ":" + std::to_string(port); }

Json HttpReply::json() const {
  Json j = Json::parse(body, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::MalformedFrame, "reply is not JSON: " + body);
  return j;
}

HttpReply http_call(const GatewayAddress& gateway, std::string_view method,
                    const std::string& target, const std::string& body,
                    const std::string& bearer) {
  try {
    net::io_context ioc;
    tcp::resolver resolver(ioc);
    beast::tcp_stream stream(ioc);
    stream.connect(resolver.resolve(gateway.host, std::to_string(gateway.port)));

    http::request<http::string_body> req{
        http::string_to_verb(beast::string_view(method.data(), method.size())), target, 11};
    req.set(http::field::host, gateway.host);
    if (!bearer.empty()) req.set(http::field::authorization, "Bearer " + bearer);
    if (!body.empty()) req.set(http::field::content_type, "application/json");
    req.body() = body;
    req.prepare_payload();
    http::write(stream, req);

    beast::flat_buffer buffer;
    http::response<http::string_body> res;
    http::read(stream, buffer, res);
    beast::error_code ignored;
    stream.socket().shutdown(tcp::socket::shutdown_both, ignored);
    return {static_cast<int>(res.result_int()), std::move(res.body())};
  } catch (const boost::system::system_error& ex) {
    connection_failure(std::string(method) + " " + target + " on " + gateway.str() + ": " +
                       ex.what());
  }
}

namespace {

Json expect_ok(const HttpReply& reply, const std::string& what) {
  if (reply.status / 100 != 2) {
    throw Error(ErrorCode::ConnectionFailure,
                what + " failed with HTTP " + std::to_string(reply.status) + ": " + reply.body);
  }
  return reply.json();
}

// ---- synthetic client -------------------------------------------------------------

class Pool {
 public:
  Pool() : guard_(net::make_work_guard(ioc_)), thread_([this] { ioc_.run(); }) {}
  ~Pool() {
    guard_.reset();
    ioc_.stop();
    thread_.join();
  }
  net::io_context& ioc() { return ioc_; }

 private:
  net::io_context ioc_;
  net::executor_work_guard<net::io_context::executor_type> guard_;
  std::thread thread_;
};

class Client : public std::enable_shared_from_this<Client> {
 public:
  using Handler = std::function<void(Client&, const Envelope&)>;

  Client(net::io_context& ioc, std::string name)
      : name_(std::move(name)), ws_(net::make_strand(ioc)) {}

  const std::string& name() const { return name_; }
  const PeerId& peer() const { return peer_; }
  const SessionId& session() const { return session_; }

  void set_handler(Handler h) { handler_ = std::move(h); }

  void connect(const GatewayAddress& gw, const std::string& token, SessionId session,
               PeerId peer) {
    session_ = std::move(session);
    peer_ = std::move(peer);
    try {
      tcp::resolver resolver(ws_.get_executor());
      beast::get_lowest_layer(ws_).connect(
          resolver.resolve(gw.host, std::to_string(gw.port)));
      ws_.handshake(gw.host, "/ws?token=" + token);
    } catch (const boost::system::system_error& ex) {
      connection_failure("websocket for " + name_ + ": " + ex.what());
    }
    ws_.text(true);
    net::post(ws_.get_executor(), [self = shared_from_this()] { self->read(); });
  }

  void send(msg::Payload payload) {
    std::lock_guard lock(write_mutex_);
    if (write_closed_) return;
    Envelope e;
    e.seq = stamper_.next(peer_);
    e.ts = std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
               .count();
    e.session = session_;
    e.sender = peer_;
    e.payload = std::move(payload);
    queue_.push_back(encode(e));
    ++sent;
    if (!writing_) {
      writing_ = true;
      net::post(ws_.get_executor(), [self = shared_from_this()] { self->write_next(); });
    }
  }

  // First unconsumed envelope satisfying pred, waiting up to timeout.
  std::optional<Envelope> wait_for(const std::function<bool(const Envelope&)>& pred,
                                   std::chrono::milliseconds timeout, bool consume = true) {
    const auto deadline = SteadyClock::now() + timeout;
    std::unique_lock lock(inbox_mutex_);
    for (;;) {
      for (auto& entry : inbox_) {
        if (!entry.consumed && pred(entry.envelope)) {
          if (consume) entry.consumed = true;
          return entry.envelope;
        }
      }
      if (read_closed_) return std::nullopt;
      if (inbox_cv_.wait_until(lock, deadline) == std::cv_status::timeout) {
        for (auto& entry : inbox_) {
          if (!entry.consumed && pred(entry.envelope)) {
            if (consume) entry.consumed = true;
            return entry.envelope;
          }
        }
        return std::nullopt;
      }
    }
  }

  std::optional<Envelope> wait_kind(MessageKind kind, std::chrono::milliseconds timeout) {
    return wait_for([kind](const Envelope& e) { return e.kind() == kind; }, timeout);
  }

  // Round trip through the server: every envelope this client sent before
  // has been processed, and everything queued to it before has arrived.
  bool sync(std::chrono::milliseconds timeout = std::chrono::seconds(5)) {
    send(msg::Heartbeat{});
    return wait_for(
               [](const Envelope& e) {
                 return e.kind() == MessageKind::Heartbeat && e.sender == kServerPeer;
               },
               timeout)
        .has_value();
  }

  struct Entry {
    Envelope envelope;
    bool consumed = false;
  };

  std::vector<Entry> inbox() const {
    std::lock_guard lock(inbox_mutex_);
    return inbox_;
  }

  bool closed() const {
    std::lock_guard lock(inbox_mutex_);
    return read_closed_;
  }

  void close() {
    {
      std::lock_guard lock(write_mutex_);
      if (write_closed_) return;
      write_closed_ = true;
    }
    net::post(ws_.get_executor(), [self = shared_from_this()] {
      self->ws_.async_close(websocket::close_code::normal, [self](beast::error_code) {});
    });
    std::unique_lock lock(inbox_mutex_);
    if (!inbox_cv_.wait_for(lock, std::chrono::seconds(2), [this] { return read_closed_; })) {
      lock.unlock();
      net::post(ws_.get_executor(), [self = shared_from_this()] {
        beast::error_code ignored;
        beast::get_lowest_layer(self->ws_).socket().close(ignored);
      });
    }
  }

  std::atomic<std::size_t> sent{0};
  std::atomic<std::size_t> received{0};

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        std::lock_guard lock(self->inbox_mutex_);
        self->read_closed_ = true;
        self->inbox_cv_.notify_all();
        return;
      }
      const std::string frame = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      std::optional<Envelope> e;
      try {
        e = decode(frame);
      } catch (const Error&) {
      }
      if (e) {
        ++self->received;
        {
          std::lock_guard lock(self->inbox_mutex_);
          self->inbox_.push_back({*e, false});
        }
        self->inbox_cv_.notify_all();
        if (self->handler_) self->handler_(*self, *e);
      }
      self->read();
    });
  }

  void write_next() {
    std::unique_lock lock(write_mutex_);
    if (queue_.empty()) {
      writing_ = false;
      return;
    }
    current_ = std::move(queue_.front());
    queue_.pop_front();
    lock.unlock();
    ws_.async_write(net::buffer(current_),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      if (ec) {
                        std::lock_guard lock(self->write_mutex_);
                        self->queue_.clear();
                        self->writing_ = false;
                        return;
                      }
                      self->write_next();
                    });
  }

  std::string name_;
  websocket::stream<beast::tcp_stream> ws_;
  SessionId session_;
  PeerId peer_;
  Handler handler_;
  beast::flat_buffer buffer_;

  std::mutex write_mutex_;
  SequenceStamper stamper_;
  std::deque<std::string> queue_;
  std::string current_;
  bool writing_ = false;
  bool write_closed_ = false;

  mutable std::mutex inbox_mutex_;
  std::condition_variable inbox_cv_;
  std::vector<Entry> inbox_;
  bool read_closed_ = false;
};

Json payload_json(const Envelope& e) { return Json::parse(encode_payload(e.payload)); }

// ---- scenario parsing -----------------------------------------------------------------

[[noreturn]] void parse_error(int line, const std::string& what) {
  throw Error(ErrorCode::ScenarioParseError, "line " + std::to_string(line) + ": " + what);
}

std::vector<std::string> tokenize(std::string_view line, int number) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    std::string token;
    bool quoted_any = false;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') {
      if (line[i] == '"') {
        quoted_any = true;
        const auto close = line.find('"', i + 1);
        if (close == std::string_view::npos) parse_error(number, "unterminated quote");
        token.append(line.substr(i + 1, close - i - 1));
        i = close + 1;
      } else {
        token += line[i++];
      }
    }
    if (!token.empty() || quoted_any) out.push_back(std::move(token));
  }
  return out;
}

const std::set<std::string, std::less<>> kVerbs = {
    "join",     "leave",    "handshake",       "telemetry", "chat",   "zoom",
    "dispatch", "dispatch_silent", "expect", "expect_none", "expect_log"};

std::size_t min_args(std::string_view verb) {
  if (verb == "chat") return 3;
  if (verb == "dispatch" || verb == "dispatch_silent" || verb == "telemetry" ||
      verb == "expect" || verb == "expect_none") {
    return 2;
  }
  return 1;
}

std::pair<std::string, std::string> split_matcher(const std::string& token, int line) {
  const auto eq = token.find('=');
  if (eq == std::string::npos || eq == 0) parse_error(line, "expected field=value, got " + token);
  return {token.substr(0, eq), token.substr(eq + 1)};
}

}  // namespace

Scenario parse_scenario(std::string_view text) {
  Scenario sc;
  std::set<std::string> aliases;
  double last_at = 0;
  int number = 0;
  bool tutor_named = false;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::vector<std::pair<int, std::vector<std::string>>> pending;

  while (std::getline(in, raw)) {
    ++number;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) {
      // A '#' inside quotes is text, not a comment.
      if (std::count(line.begin(), line.begin() + static_cast<long>(hash), '"') % 2 == 0) {
        line = line.substr(0, hash);
      }
    }
    auto tokens = tokenize(line, number);
    if (tokens.empty()) continue;
    const std::string& head = tokens[0];
    if (head == "clock") {
      if (tokens.size() != 2 || (tokens[1] != "simulated" && tokens[1] != "real")) {
        parse_error(number, "clock takes simulated or real");
      }
      sc.simulated_clock = tokens[1] == "simulated";
    } else if (head == "tutor") {
      if (tokens.size() != 2) parse_error(number, "tutor takes one alias");
      if (tutor_named) parse_error(number, "tutor named twice");
      sc.tutor_alias = tokens[1];
      tutor_named = true;
    } else if (head == "students") {
      for (std::size_t i = 1; i < tokens.size(); ++i) {
        if (tokens[i] == "*" || tokens[i] == "none" || tokens[i].starts_with('@')) {
          parse_error(number, "reserved alias " + tokens[i]);
        }
        if (std::find(sc.students.begin(), sc.students.end(), tokens[i]) != sc.students.end()) {
          parse_error(number, "duplicate student " + tokens[i]);
        }
        sc.students.push_back(tokens[i]);
      }
    } else if (head == "at") {
      if (tokens.size() < 3) parse_error(number, "expected: at <secs> <step> ...");
      double at = 0;
      try {
        std::size_t used = 0;
        at = std::stod(tokens[1], &used);
        if (used != tokens[1].size() || !std::isfinite(at) || at < 0) throw std::invalid_argument("");
      } catch (const std::logic_error&) {
        parse_error(number, "bad time " + tokens[1]);
      }
      if (at < last_at) {
        parse_error(number, "step time " + tokens[1] + " is before the previous step");
      }
      last_at = at;
      if (!kVerbs.contains(tokens[2])) parse_error(number, "unknown step " + tokens[2]);
      Step step{number, at, tokens[2], {tokens.begin() + 3, tokens.end()}};
      if (step.args.size() < min_args(step.verb)) {
        parse_error(number, step.verb + " needs at least " +
                                std::to_string(min_args(step.verb)) + " arguments");
      }
      sc.steps.push_back(std::move(step));
    } else {
      parse_error(number, "unknown directive " + head);
    }
  }

  aliases.insert(sc.tutor_alias);
  for (const auto& s : sc.students) {
    if (s == sc.tutor_alias) parse_error(0, "student alias equals tutor alias " + s);
    aliases.insert(s);
  }
  auto require_alias = [&](const Step& st, const std::string& a) {
    if (!aliases.contains(a)) parse_error(st.line, "unknown alias " + a);
  };
  auto require_student = [&](const Step& st, const std::string& a) {
    require_alias(st, a);
    if (a == sc.tutor_alias) parse_error(st.line, a + " is the tutor, not a student");
  };
  auto check_matchers = [&](const Step& st, std::size_t from) {
    for (std::size_t i = from; i < st.args.size(); ++i) {
      auto [key, value] = split_matcher(st.args[i], st.line);
      if (value.starts_with('@')) require_alias(st, value.substr(1));
      if (key == "within") {
        try {
          if (std::stod(value) < 0) throw std::invalid_argument("");
        } catch (const std::logic_error&) {
          parse_error(st.line, "bad within " + value);
        }
      }
    }
  };

  for (const auto& st : sc.steps) {
    const auto& a = st.args;
    if (st.verb == "join" || st.verb == "leave") {
      if (a.size() != 1) parse_error(st.line, st.verb + " takes one alias");
      require_alias(st, a[0]);
    } else if (st.verb == "handshake") {
      if (a.size() != 1) parse_error(st.line, "handshake takes one student");
      require_student(st, a[0]);
    } else if (st.verb == "telemetry") {
      require_student(st, a[0]);
      static const std::set<std::string, std::less<>> kinds = {"click", "key", "correct",
                                                               "incorrect", "heartbeat"};
      if (a.size() != 2 || !kinds.contains(a[1])) {
        parse_error(st.line, "telemetry kind must be click, key, correct, incorrect or heartbeat");
      }
    } else if (st.verb == "chat") {
      require_alias(st, a[0]);
      if (a[1] != "*") require_alias(st, a[1]);
    } else if (st.verb == "zoom") {
      if (a.size() != 1) parse_error(st.line, "zoom takes one student or none");
      if (a[0] != "none") require_student(st, a[0]);
    } else if (st.verb == "dispatch" || st.verb == "dispatch_silent") {
      require_student(st, a[0]);
    } else if (st.verb == "expect" || st.verb == "expect_none") {
      require_alias(st, a[0]);
      if (!parse_message_kind(a[1])) parse_error(st.line, "unknown message kind " + a[1]);
      check_matchers(st, 2);
    } else if (st.verb == "expect_log") {
      if (!parse_log_category(a[0])) parse_error(st.line, "unknown log category " + a[0]);
      check_matchers(st, 1);
    }
  }
  return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ScenarioParseError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

// ---- scenario runner ---------------------------------------------------------------------

namespace {

std::string join_text(const std::vector<std::string>& args, std::size_t from) {
  std::string out;
  for (std::size_t i = from; i < args.size(); ++i) {
    if (i > from) out += ' ';
    out += args[i];
  }
  return out;
}

const Json* at_path(const Json& j, const std::string& path) {
  const Json* cur = &j;
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (!cur->is_object()) return nullptr;
    auto it = cur->find(key);
    if (it == cur->end()) return nullptr;
    cur = &*it;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return cur;
}

bool value_matches(const Json& v, const std::string& expected) {
  if (expected == "*") return !v.is_null();
  if (v.is_string()) return v.get<std::string>() == expected;
  if (v.is_boolean()) return (v.get<bool>() ? "true" : "false") == expected;
  if (v.is_null()) return expected == "null";
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>()) == expected;
  if (v.is_number()) {
    try {
      return std::abs(v.get<double>() - std::stod(expected)) < 1e-9;
    } catch (const std::logic_error&) {
      return false;
    }
  }
  return v.dump() == expected;
}

void strip_timestamps(Json& j) {
  if (j.is_object()) {
    for (const char* k : {"ts", "raised_at", "cleared_at"}) j.erase(k);
    for (auto& [k, v] : j.items()) strip_timestamps(v);
  } else if (j.is_array()) {
    for (auto& v : j) strip_timestamps(v);
  }
}

class Runner {
 public:
  Runner(const Scenario& sc, const GatewayAddress& gw) : sc_(sc), gw_(gw) {}

  ScenarioReport run() {
    if (sc_.steps.empty()) return std::move(report_);

    const Json created = expect_ok(
        http_call(gw_, "POST", "/api/sessions", Json{{"tutor_alias", sc_.tutor_alias}}.dump()),
        "create session");
    session_ = SessionId{created.at("session_id").get<std::string>()};
    tutor_token_ = created.at("tutor_token").get<std::string>();
    if (sc_.simulated_clock) {
      const auto probe = http_call(gw_, "POST", "/api/test/clock", R"({"advance_ms":0})");
      if (probe.status != 200) {
        connection_failure("gateway at " + gw_.str() +
                           " does not run a simulated clock (start it with --simulated-clock)");
      }
    }
    start_ = SteadyClock::now();

    for (const auto& step : sc_.steps) {
      advance_to(step.at_secs);
      try {
        execute(step);
      } catch (const Error& err) {
        if (err.code() == ErrorCode::ConnectionFailure && !connected_once_) throw;
        record(step, "step " + step.verb + " " + join_text(step.args, 0), false, err.what());
      }
    }

    Step end{sc_.steps.back().line, sc_.steps.back().at_secs, "end", {}};
    std::string stray;
    for (const auto& alias : order_) {
      auto& c = *clients_.at(alias);
      if (!c.closed()) c.sync(std::chrono::seconds(2));
      for (const auto& e : c.inbox()) {
        if (!e.consumed && e.envelope.kind() == MessageKind::Error) {
          stray += alias + " got " + encode_payload(e.envelope.payload) + "; ";
        }
      }
    }
    record(end, "no unexpected Error envelopes", stray.empty(), stray);

    for (const auto& alias : order_) {
      for (const auto& e : clients_.at(alias)->inbox()) {
        const auto kind = e.envelope.kind();
        if (kind != MessageKind::Alert && kind != MessageKind::AvatarCommand) continue;
        Json p = payload_json(e.envelope);
        strip_timestamps(p);
        report_.observed.push_back(alias + " " + std::string(to_string(kind)) + " " + p.dump());
      }
    }

    try {
      http_call(gw_, "POST", "/api/sessions/" + session_.str() + "/close", "", tutor_token_);
    } catch (const Error&) {
    }
    for (const auto& alias : order_) clients_.at(alias)->close();
    return std::move(report_);
  }

 private:
  void record(const Step& step, std::string description, bool passed, std::string detail) {
    AssertionResult r{step.line, std::move(description), passed, std::move(detail)};
    if (!passed && !report_.first_failure) report_.first_failure = r;
    report_.assertions.push_back(std::move(r));
  }

  std::string describe(const Step& step) const {
    return step.verb + " " + join_text(step.args, 0);
  }

  Client& client(const std::string& alias) {
    auto it = clients_.find(alias);
    if (it == clients_.end()) throw Error(ErrorCode::UnknownPeer, alias + " has not joined");
    return *it->second;
  }

  PeerId peer_of(const std::string& alias) {
    if (alias == "*") return kBroadcastPeer;
    return client(alias).peer();
  }

  std::string resolve(const std::string& value) {
    if (value.starts_with('@')) return peer_of(value.substr(1)).str();
    return value;
  }

  void advance_to(double at_secs) {
    if (sc_.simulated_clock) {
      auto delta = static_cast<std::int64_t>(std::llround((at_secs - now_secs_) * 1000));
      while (delta > 0) {
        const std::int64_t chunk = std::min<std::int64_t>(delta, 10'000);
        for (const auto& alias : order_) {
          auto& c = *clients_.at(alias);
          if (!c.closed() && active_.contains(alias)) c.sync();
        }
        expect_ok(http_call(gw_, "POST", "/api/test/clock",
                            Json{{"advance_ms", chunk}}.dump()),
                  "advance clock");
        delta -= chunk;
      }
    } else {
      std::this_thread::sleep_until(
          start_ + std::chrono::milliseconds(static_cast<std::int64_t>(at_secs * 1000)));
    }
    now_secs_ = std::max(now_secs_, at_secs);
  }

  void execute(const Step& step) {
    const auto& a = step.args;
    const auto wait = std::chrono::seconds(3);

    if (step.verb == "join") {
      const bool tutor = a[0] == sc_.tutor_alias;
      Json body{{"alias", a[0]}, {"role", tutor ? "Tutor" : "Student"}};
      if (tutor) body["token"] = tutor_token_;
      const Json joined = expect_ok(
          http_call(gw_, "POST", "/api/sessions/" + session_.str() + "/join", body.dump()),
          "join " + a[0]);
      auto c = std::make_shared<Client>(pool_.ioc(), a[0]);
      c->connect(gw_, joined.at("token").get<std::string>(), session_,
                 PeerId{joined.at("peer_id").get<std::string>()});
      connected_once_ = true;
      if (!clients_.contains(a[0])) order_.push_back(a[0]);
      clients_[a[0]] = c;
      active_.insert(a[0]);
      const bool acked = c->wait_kind(MessageKind::JoinAck, wait).has_value();
      record(step, describe(step), acked, acked ? "" : "no JoinAck");
    } else if (step.verb == "leave") {
      auto& c = client(a[0]);
      c.send(msg::Leave{c.peer(), "left"});
      const bool left = c.wait_kind(MessageKind::Leave, wait).has_value();
      active_.erase(a[0]);
      record(step, describe(step), left, left ? "" : "no Leave confirmation");
    } else if (step.verb == "handshake") {
      auto& student = client(a[0]);
      auto& tutor = client(sc_.tutor_alias);
      student.send(msg::Offer{tutor.peer(), "v=0 offer from " + a[0]});
      student.send(msg::IceCandidate{tutor.peer(), "candidate:1 1 udp 1 192.0.2.1 9 typ host"});
      auto offer = tutor.wait_for(
          [&](const Envelope& e) {
            return e.kind() == MessageKind::Offer && e.sender == student.peer();
          },
          wait);
      if (!offer) {
        record(step, describe(step), false, "tutor never received the Offer");
        return;
      }
      tutor.send(msg::Answer{student.peer(), "v=0 answer to " + a[0]});
      auto answer = student.wait_for(
          [&](const Envelope& e) {
            return e.kind() == MessageKind::Answer && e.sender == tutor.peer();
          },
          wait);
      record(step, describe(step), answer.has_value(),
             answer ? "" : "student never received the Answer");
    } else if (step.verb == "telemetry") {
      auto& c = client(a[0]);
      TelemetryEvent ev;
      ev.student = c.peer();
      if (a[1] == "click") ev.kind = TelemetryKind::MouseClick;
      if (a[1] == "key") ev.kind = TelemetryKind::KeyInput;
      if (a[1] == "heartbeat") ev.kind = TelemetryKind::Heartbeat;
      if (a[1] == "correct" || a[1] == "incorrect") {
        ev.kind = TelemetryKind::AnswerSubmitted;
        ev.correct = a[1] == "correct";
      }
      c.send(msg::Telemetry{ev});
      c.sync();
    } else if (step.verb == "chat") {
      auto& c = client(a[0]);
      c.send(msg::Chat{c.peer(), peer_of(a[1]), join_text(a, 2)});
      c.sync();
    } else if (step.verb == "zoom") {
      auto& tutor = client(sc_.tutor_alias);
      const TierTable tiers;
      if (a[0] == "none") {
        tutor.send(msg::QualityRequest{PeerId{}, tiers.low});
      } else {
        tutor.send(msg::QualityRequest{peer_of(a[0]), tiers.high});
      }
      tutor.sync();
    } else if (step.verb == "dispatch" || step.verb == "dispatch_silent") {
      auto& tutor = client(sc_.tutor_alias);
      AvatarCommand cmd;
      cmd.target = peer_of(a[0]);
      cmd.speech_text = join_text(a, 1);
      cmd.show_bubble = step.verb == "dispatch";
      cmd.gesture = Gesture::None;
      tutor.send(cmd);
      tutor.sync();
    } else if (step.verb == "expect" || step.verb == "expect_none") {
      auto& c = client(a[0]);
      const MessageKind kind = *parse_message_kind(a[1]);
      std::vector<std::pair<std::string, std::string>> matchers;
      auto within = std::chrono::milliseconds(3000);
      for (std::size_t i = 2; i < a.size(); ++i) {
        auto [key, value] = split_matcher(a[i], step.line);
        if (key == "within") {
          within = std::chrono::milliseconds(std::llround(std::stod(value) * 1000));
        } else {
          matchers.emplace_back(key, resolve(value));
        }
      }
      auto pred = [&](const Envelope& e) {
        if (e.kind() != kind) return false;
        const Json p = payload_json(e);
        for (const auto& [key, value] : matchers) {
          if (key == "sender") {
            if (e.sender.str() != value) return false;
            continue;
          }
          const Json* v = at_path(p, key);
          if (!v || !value_matches(*v, value)) return false;
        }
        return true;
      };
      if (step.verb == "expect") {
        auto found = c.wait_for(pred, within);
        std::string detail;
        if (!found) {
          detail = a[0] + " received no matching " + a[1] + "; inbox:";
          for (const auto& e : c.inbox()) {
            if (e.envelope.kind() == kind) detail += " " + encode_payload(e.envelope.payload);
          }
        }
        record(step, describe(step), found.has_value(), detail);
      } else {
        if (!c.closed()) c.sync();
        auto found = c.wait_for(pred, std::chrono::milliseconds(0), false);
        record(step, describe(step), !found,
               found ? "unexpected " + encode_payload(found->payload) : "");
      }
    } else if (step.verb == "expect_log") {
      const auto category = *parse_log_category(a[0]);
      const Json reply = expect_ok(
          http_call(gw_, "GET",
                    "/api/sessions/" + session_.str() +
                        "/events?category=" + std::string(to_string(category)),
                    "", tutor_token_),
          "read events");
      std::vector<std::pair<std::string, std::string>> matchers;
      for (std::size_t i = 1; i < a.size(); ++i) {
        auto [key, value] = split_matcher(a[i], step.line);
        matchers.emplace_back(key, resolve(value));
      }
      bool found = false;
      for (const auto& r : reply.at("records")) {
        const Json body = Json::parse(r.at("body").get<std::string>(), nullptr, false);
        bool all = true;
        for (const auto& [key, value] : matchers) {
          const Json* v = key == "subject" ? &r.at("subject") : at_path(body, key);
          if (!v || !value_matches(*v, value)) {
            all = false;
            break;
          }
        }
        if (all) {
          found = true;
          break;
        }
      }
      record(step, describe(step), found, found ? "" : "no matching log record");
    }
  }

  const Scenario& sc_;
  GatewayAddress gw_;
  Pool pool_;
  ScenarioReport report_;
  SessionId session_;
  std::string tutor_token_;
  std::map<std::string, std::shared_ptr<Client>> clients_;
  std::vector<std::string> order_;
  std::set<std::string> active_;
  double now_secs_ = 0;
  SteadyClock::time_point start_;
  bool connected_once_ = false;
};

}  // namespace

ScenarioReport run_scenario(const Scenario& scenario, const GatewayAddress& gateway) {
  return Runner(scenario, gateway).run();
}

std::string format_report(const ScenarioReport& report) {
  std::ostringstream out;
  for (const auto& a : report.assertions) {
    out << (a.passed ? "ok    " : "FAIL  ") << "line " << a.line << ": " << a.description;
    if (!a.passed && !a.detail.empty()) out << "\n      " << a.detail;
    out << '\n';
  }
  std::size_t failed = 0;
  for (const auto& a : report.assertions) failed += a.passed ? 0 : 1;
  out << report.assertions.size() << " assertions, " << failed << " failed\n";
  if (report.first_failure) {
    out << "first failure: line " << report.first_failure->line << ": "
        << report.first_failure->description << " (" << report.first_failure->detail << ")\n";
  }
  return out.str();
}

// ---- load run ----------------------------------------------------------------------------

double percentile(std::vector<double> samples, double p) {
  if (samples.empty()) return 0;
  std::sort(samples.begin(), samples.end());
  const double rank = std::ceil(p / 100.0 * static_cast<double>(samples.size()));
  const auto index = static_cast<std::size_t>(std::max(rank, 1.0)) - 1;
  return samples[std::min(index, samples.size() - 1)];
}

namespace {

struct StudentState {
  std::shared_ptr<Client> client;
  SteadyClock::time_point join_started;
  std::atomic<bool> offered{false};
  std::atomic<bool> connected{false};
  std::atomic<double> connected_ms{0};
  std::mutex ping_mutex;
  std::deque<SteadyClock::time_point> pings;
};

}  // namespace

LoadReport load_run(const GatewayAddress& gw, const LoadOptions& options) {
  if (options.students < 1) throw Error(ErrorCode::InvalidArgument, "students must be >= 1");
  LoadReport report;
  report.students = options.students;

  Pool pool;
  std::mutex samples_mutex;
  std::vector<double> rtts;
  std::atomic<std::size_t> errors{0};

  const Json created = expect_ok(
      http_call(gw, "POST", "/api/sessions", R"({"tutor_alias":"Load Tutor"})"),
      "create session");
  const SessionId session{created.at("session_id").get<std::string>()};
  const std::string tutor_token = created.at("tutor_token").get<std::string>();
  const std::string base = "/api/sessions/" + session.str();

  const Json tj = expect_ok(
      http_call(gw, "POST", base + "/join",
                Json{{"alias", "Load Tutor"}, {"role", "Tutor"}, {"token", tutor_token}}.dump()),
      "tutor join");
  auto tutor = std::make_shared<Client>(pool.ioc(), "tutor");
  tutor->set_handler([&errors](Client& self, const Envelope& e) {
    if (e.kind() == MessageKind::Offer) {
      self.send(msg::Answer{e.sender, "v=0 answer"});
    } else if (e.kind() == MessageKind::Error) {
      ++errors;
    }
  });
  tutor->connect(gw, tj.at("token").get<std::string>(), session,
                 PeerId{tj.at("peer_id").get<std::string>()});
  const PeerId tutor_peer = tutor->peer();

  std::vector<std::unique_ptr<StudentState>> students;
  const auto first_join = SteadyClock::now();
  for (int i = 0; i < options.students; ++i) {
    auto st = std::make_unique<StudentState>();
    StudentState* raw = st.get();
    st->join_started = SteadyClock::now();
    const std::string alias = "student" + std::to_string(i + 1);
    const Json sj = expect_ok(
        http_call(gw, "POST", base + "/join", Json{{"alias", alias}}.dump()), "join " + alias);
    st->client = std::make_shared<Client>(pool.ioc(), alias);
    st->client->set_handler([raw, tutor_peer, first_join, &samples_mutex, &rtts,
                             &errors](Client& self, const Envelope& e) {
      switch (e.kind()) {
        case MessageKind::JoinAck:
        case MessageKind::RosterUpdate: {
          const auto& roster = e.kind() == MessageKind::JoinAck
                                   ? std::get<msg::JoinAck>(e.payload).roster
                                   : std::get<msg::RosterUpdate>(e.payload).roster;
          const bool tutor_present = std::any_of(roster.begin(), roster.end(), [](auto& r) {
            return r.role == Role::Tutor;
          });
          if (tutor_present && !raw->offered.exchange(true)) {
            self.send(msg::Offer{tutor_peer, "v=0 offer"});
            self.send(msg::IceCandidate{tutor_peer, "candidate:1 1 udp 1 192.0.2.1 9 typ host"});
          }
          break;
        }
        case MessageKind::Answer:
          if (!raw->connected.exchange(true)) raw->connected_ms = ms_since(raw->join_started);
          break;
        case MessageKind::QualityRequest:
          self.send(msg::Offer{tutor_peer, "v=0 re-offer"});
          break;
        case MessageKind::Heartbeat: {
          std::lock_guard lock(raw->ping_mutex);
          if (!raw->pings.empty()) {
            const double rtt = ms_since(raw->pings.front());
            raw->pings.pop_front();
            std::lock_guard slock(samples_mutex);
            rtts.push_back(rtt);
          }
          break;
        }
        case MessageKind::Error:
          ++errors;
          break;
        default:
          break;
      }
      (void)first_join;
    });
    st->client->connect(gw, sj.at("token").get<std::string>(), session,
                        PeerId{sj.at("peer_id").get<std::string>()});
    students.push_back(std::move(st));
  }

  // Health probe runs for the whole connect and traffic phase.
  std::atomic<bool> done{false};
  std::mutex health_mutex;
  std::thread prober([&] {
    while (!done) {
      const auto t0 = SteadyClock::now();
      try {
        const auto r = http_call(gw, "GET", "/healthz");
        const double ms = ms_since(t0);
        std::lock_guard lock(health_mutex);
        if (r.status == 200) {
          report.healthz_max_ms = std::max(report.healthz_max_ms, ms);
          ++report.healthz_samples;
        } else {
          report.healthz_max_ms = std::max(report.healthz_max_ms, 1e9);
        }
      } catch (const Error&) {
        std::lock_guard lock(health_mutex);
        report.healthz_max_ms = 1e9;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
  });

  const auto connect_deadline =
      SteadyClock::now() +
      std::chrono::milliseconds(static_cast<std::int64_t>(options.connect_timeout_secs * 1000));
  for (;;) {
    const auto n = std::count_if(students.begin(), students.end(),
                                 [](const auto& s) { return s->connected.load(); });
    if (n == options.students || SteadyClock::now() > connect_deadline) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  for (const auto& s : students) {
    if (!s->connected) continue;
    ++report.connected;
    report.join_to_connected_ms.push_back(s->connected_ms.load());
    report.all_connected_ms =
        std::max(report.all_connected_ms,
                 std::chrono::duration<double, std::milli>(s->join_started - first_join).count() +
                     s->connected_ms.load());
  }

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0, 1);
  const double tick_secs = 0.1;
  const auto traffic_end =
      SteadyClock::now() +
      std::chrono::milliseconds(static_cast<std::int64_t>(options.duration_secs * 1000));
  int tick = 0;
  while (SteadyClock::now() < traffic_end) {
    for (const auto& s : students) {
      if (unit(rng) < options.events_per_sec * tick_secs) {
        TelemetryEvent ev;
        ev.student = s->client->peer();
        const double r = unit(rng);
        ev.kind = r < 0.4 ? TelemetryKind::MouseClick
                          : r < 0.8 ? TelemetryKind::KeyInput : TelemetryKind::AnswerSubmitted;
        ev.correct = ev.kind == TelemetryKind::AnswerSubmitted && unit(rng) < 0.5;
        s->client->send(msg::Telemetry{ev});
      }
      if (tick % 10 == 0) {
        {
          std::lock_guard lock(s->ping_mutex);
          s->pings.push_back(SteadyClock::now());
        }
        s->client->send(msg::Heartbeat{});
      }
    }
    ++tick;
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  // Let in-flight heartbeats come back.
  for (const auto& s : students) s->client->sync(std::chrono::seconds(5));
  done = true;
  prober.join();

  const Json signals =
      expect_ok(http_call(gw, "GET", base + "/events?category=Signal", "", tutor_token),
                "read signal log");
  std::set<std::string> connected_students;
  for (const auto& r : signals.at("records")) {
    const Json body = Json::parse(r.at("body").get<std::string>(), nullptr, false);
    if (body.is_object() && body.value("to", "") == "Connected") {
      connected_students.insert(body.value("student", ""));
    }
  }
  report.connected_in_log = static_cast<int>(connected_students.size());

  const Json lifecycle =
      expect_ok(http_call(gw, "GET", base + "/events?category=Lifecycle", "", tutor_token),
                "read lifecycle log");
  for (const auto& r : lifecycle.at("records")) {
    const Json body = Json::parse(r.at("body").get<std::string>(), nullptr, false);
    if (body.is_object() && body.value("event", "") == "violation") ++report.violations;
  }

  report.rtt_ms = rtts;
  report.error_envelopes = errors;
  report.envelopes_sent = tutor->sent;
  report.envelopes_received = tutor->received;
  for (const auto& s : students) {
    report.envelopes_sent += s->client->sent;
    report.envelopes_received += s->client->received;
  }

  try {
    http_call(gw, "POST", base + "/close", "", tutor_token);
  } catch (const Error&) {
  }
  tutor->close();
  for (const auto& s : students) s->client->close();
  return report;
}

std::string format_report(const LoadReport& r) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(1);
  out << "students            " << r.students << '\n'
      << "connected           " << r.connected << " (log: " << r.connected_in_log << ")\n"
      << "all connected after " << r.all_connected_ms << " ms\n"
      << "join->Connected ms  p50 " << percentile(r.join_to_connected_ms, 50) << "  p95 "
      << percentile(r.join_to_connected_ms, 95) << "  max "
      << percentile(r.join_to_connected_ms, 100) << '\n'
      << "heartbeat rtt ms    p50 " << percentile(r.rtt_ms, 50) << "  p95 "
      << percentile(r.rtt_ms, 95) << "  p99 " << percentile(r.rtt_ms, 99) << "  (n="
      << r.rtt_ms.size() << ")\n"
      << "healthz max ms      " << r.healthz_max_ms << " (n=" << r.healthz_samples << ")\n"
      << "envelopes           sent " << r.envelopes_sent << "  received "
      << r.envelopes_received << '\n'
      << "violations          " << r.violations << "  error envelopes " << r.error_envelopes
      << '\n';
  return out.str();
}

}  // namespace tutorhub::harness
