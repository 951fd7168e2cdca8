#include "tutorhub/gateway.hpp"

#include <atomic>
#include <cctype>
#include <charconv>
#include <csignal>
#include <deque>
#include <mutex>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "tutorhub/error.hpp"

namespace tutorhub {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using Json = nlohmann::ordered_json;

namespace {

const SessionId kNoSession{"-"};

std::string percent_decode(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '+') {
      out += ' ';
    } else if (s[i] == '%' && i + 2 < s.size()) {
      int v = 0;
      auto [p, ec] = std::from_chars(s.data() + i + 1, s.data() + i + 3, v, 16);
      if (ec != std::errc{} || p != s.data() + i + 3) {
        out += s[i];
        continue;
      }
      out += static_cast<char>(v);
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

struct Target {
  std::vector<std::string> segments;
  std::unordered_map<std::string, std::string> query;
};

Target parse_target(std::string_view target) {
  Target t;
  const auto q = target.find('?');
  std::string_view path = target.substr(0, q);
  while (!path.empty()) {
    const auto slash = path.find('/');
    auto seg = path.substr(0, slash);
    if (!seg.empty()) t.segments.push_back(percent_decode(seg));
    if (slash == std::string_view::npos) break;
    path.remove_prefix(slash + 1);
  }
  if (q != std::string_view::npos) {
    std::string_view rest = target.substr(q + 1);
    while (!rest.empty()) {
      const auto amp = rest.find('&');
      auto pair = rest.substr(0, amp);
      const auto eq = pair.find('=');
      if (!pair.empty()) {
        t.query[percent_decode(pair.substr(0, eq))] =
            eq == std::string_view::npos ? "" : percent_decode(pair.substr(eq + 1));
      }
      if (amp == std::string_view::npos) break;
      rest.remove_prefix(amp + 1);
    }
  }
  return t;
}

http::status status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::SessionNotFound:
    case ErrorCode::UnknownPeer:
      return http::status::not_found;
    case ErrorCode::InvalidToken:
      return http::status::unauthorized;
    case ErrorCode::RoleViolation:
      return http::status::forbidden;
    case ErrorCode::TutorSeatTaken:
      return http::status::conflict;
    case ErrorCode::SessionClosed:
      return http::status::gone;
    case ErrorCode::StorageFailure:
      return http::status::internal_server_error;
    default:
      return http::status::bad_request;
  }
}

bool fatal_for_connection(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedFrame:
    case ErrorCode::UnknownKind:
    case ErrorCode::VersionMismatch:
    case ErrorCode::InvalidEnvelope:
    case ErrorCode::SequenceViolation:
      return true;
    default:
      return false;
  }
}

std::string bearer(const http::request<http::string_body>& req, const Target& t) {
  auto it = req.find(http::field::authorization);
  if (it != req.end()) {
    std::string_view v(it->value().data(), it->value().size());
    if (v.starts_with("Bearer ")) return std::string(v.substr(7));
  }
  if (auto q = t.query.find("token"); q != t.query.end()) return q->second;
  return {};
}

Json roster_json(const std::vector<msg::RosterEntry>& roster) {
  Json out = Json::array();
  for (const auto& e : roster) {
    out.push_back({{"peer", e.peer.str()},
                   {"alias", e.alias},
                   {"role", to_string(e.role)},
                   {"status", to_string(e.status)}});
  }
  return out;
}

}  // namespace

struct Gateway::Impl {
  explicit Impl(GatewayConfig c) : config(std::move(c)), ioc(config.threads) {}

  GatewayConfig config;
  net::io_context ioc;
  std::shared_ptr<ManualClock> manual;
  std::shared_ptr<const Clock> clock;
  std::unique_ptr<Coordinator> coordinator;
  std::unique_ptr<tcp::acceptor> acceptor;
  std::unique_ptr<net::steady_timer> ticker;
  std::vector<std::thread> threads;
  std::atomic<bool> stopping{false};
  std::uint16_t bound_port = 0;

  void accept();
  void schedule_tick();
  http::response<http::string_body> route(const http::request<http::string_body>& req);
};

// ---- WebSocket connection ---------------------------------------------------

class WsConnection final : public PeerSink,
                           public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(tcp::socket socket, Gateway::Impl& gw)
      : ws_(std::move(socket)), gw_(gw) {}

  void run(http::request<http::string_body> req) {
    const Target t = parse_target(std::string_view(req.target().data(), req.target().size()));
    if (auto it = t.query.find("token"); it != t.query.end()) {
      try {
        who_ = gw_.coordinator->authenticate(it->second);
      } catch (const Error&) {
      }
    }
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      self->on_accept(ec);
    });
  }

  void send(const PeerId& sender, msg::Payload payload) override {
    std::lock_guard lock(mutex_);
    if (closing_) return;
    if (queue_.size() >= gw_.config.outbound_queue_limit) {
      enqueue_locked(kServerPeer, msg::Error{std::string(to_string(ErrorCode::InvalidArgument)),
                                             "outbound queue overflow"});
      closing_ = true;
      spdlog::warn("disconnecting {}: outbound queue overflow",
                   who_ ? who_->peer.str() : "?");
    } else {
      enqueue_locked(sender, std::move(payload));
    }
    kick_locked();
  }

  void disconnect(const std::string& code, const std::string& reason) override {
    std::lock_guard lock(mutex_);
    if (closing_) return;
    if (!code.empty()) enqueue_locked(kServerPeer, msg::Error{code, reason});
    closing_ = true;
    close_reason_ = reason;
    kick_locked();
  }

 private:
  void enqueue_locked(const PeerId& sender, msg::Payload payload) {
    Envelope e;
    e.seq = stamper_.next(sender);
    e.ts = gw_.clock->now();
    e.session = who_ ? who_->session : kNoSession;
    e.sender = sender;
    e.payload = std::move(payload);
    try {
      queue_.push_back(encode(e));
    } catch (const Error& err) {
      spdlog::error("dropping unencodable envelope: {}", err.what());
    }
  }

  void kick_locked() {
    if (writing_) return;
    writing_ = true;
    net::post(ws_.get_executor(), [self = shared_from_this()] { self->write_next(); });
  }

  void write_next() {
    std::unique_lock lock(mutex_);
    if (queue_.empty()) {
      writing_ = false;
      if (closing_ && !close_sent_) {
        close_sent_ = true;
        lock.unlock();
        websocket::close_reason cr(websocket::close_code::normal);
        cr.reason = close_reason_.substr(0, 120);
        ws_.async_close(cr, [self = shared_from_this()](beast::error_code) {});
      }
      return;
    }
    current_ = std::move(queue_.front());
    queue_.pop_front();
    lock.unlock();
    ws_.text(true);
    ws_.async_write(net::buffer(current_),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      if (ec) {
                        self->fail();
                        return;
                      }
                      self->write_next();
                    });
  }

  void on_accept(beast::error_code ec) {
    if (ec) return;
    if (!who_) {
      disconnect(std::string(to_string(ErrorCode::InvalidToken)), "invalid token");
      read();
      return;
    }
    try {
      gw_.coordinator->attach(*who_, shared_from_this());
      attached_ = true;
    } catch (const Error& err) {
      disconnect(std::string(to_string(err.code())), err.detail());
    }
    read();
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->fail();
        return;
      }
      std::string frame = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->process(frame);
      self->read();
    });
  }

  void process(const std::string& frame) {
    if (!attached_ || closing()) return;
    try {
      Envelope e = decode(frame);
      validator_.accept(e);
      gw_.coordinator->handle(*who_, e);
    } catch (const Error& err) {
      violation(err.code(), err.detail());
    } catch (const std::exception& ex) {
      violation(ErrorCode::InvalidArgument, ex.what());
    }
  }

  void violation(ErrorCode code, const std::string& reason) {
    gw_.coordinator->record_violation(*who_, code, reason);
    if (fatal_for_connection(code)) {
      disconnect(std::string(to_string(code)), reason);
    } else {
      send(kServerPeer, msg::Error{std::string(to_string(code)), reason});
    }
  }

  bool closing() {
    std::lock_guard lock(mutex_);
    return closing_;
  }

  void fail() {
    {
      std::lock_guard lock(mutex_);
      if (finished_) return;
      finished_ = true;
      closing_ = true;
      queue_.clear();
    }
    if (attached_) gw_.coordinator->detach(*who_, this);
    beast::error_code ignored;
    beast::get_lowest_layer(ws_).socket().close(ignored);
  }

  websocket::stream<beast::tcp_stream> ws_;
  Gateway::Impl& gw_;
  beast::flat_buffer buffer_;
  std::optional<Credential> who_;
  bool attached_ = false;
  SequenceValidator validator_;

  std::mutex mutex_;
  SequenceStamper stamper_;
  std::deque<std::string> queue_;
  std::string current_;
  std::string close_reason_;
  bool writing_ = false;
  bool closing_ = false;
  bool close_sent_ = false;
  bool finished_ = false;
};

// ---- HTTP connection ------------------------------------------------------------

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket socket, Gateway::Impl& gw)
      : stream_(std::move(socket)), gw_(gw) {}

  void run() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(60));
    http::async_read(stream_, buffer_, req_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       self->on_read(ec);
                     });
  }

  void on_read(beast::error_code ec) {
    if (ec) {
      beast::error_code ignored;
      stream_.socket().shutdown(tcp::socket::shutdown_both, ignored);
      return;
    }
    if (websocket::is_upgrade(req_)) {
      stream_.expires_never();
      std::make_shared<WsConnection>(stream_.release_socket(), gw_)->run(std::move(req_));
      return;
    }
    res_ = gw_.route(req_);
    res_.keep_alive(req_.keep_alive());
    res_.prepare_payload();
    http::async_write(stream_, res_,
                      [self = shared_from_this()](beast::error_code ec, std::size_t) {
                        if (ec || !self->res_.keep_alive()) {
                          beast::error_code ignored;
                          self->stream_.socket().shutdown(tcp::socket::shutdown_both,
                                                          ignored);
                          return;
                        }
                        self->read();
                      });
  }

  beast::tcp_stream stream_;
  Gateway::Impl& gw_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  http::response<http::string_body> res_;
};

// ---- routing ----------------------------------------------------------------------

http::response<http::string_body> Gateway::Impl::route(
    const http::request<http::string_body>& req) {
  http::response<http::string_body> res{http::status::ok, req.version()};
  res.set(http::field::server, "tutorhub");
  res.set(http::field::content_type, "application/json");
  res.set(http::field::access_control_allow_origin, "*");

  auto reply = [&](http::status status, const Json& body) {
    res.result(status);
    res.body() = body.dump();
    return res;
  };
  auto fail = [&](ErrorCode code, const std::string& reason) {
    return reply(status_for(code), {{"error", to_string(code)}, {"reason", reason}});
  };

  try {
    const Target t = parse_target(std::string_view(req.target().data(), req.target().size()));
    const auto& s = t.segments;
    const auto method = req.method();

    auto body = [&]() -> Json {
      if (req.body().empty()) return Json::object();
      Json j = Json::parse(req.body(), nullptr, false);
      if (j.is_discarded() || !j.is_object()) {
        throw Error(ErrorCode::MalformedFrame, "request body must be a JSON object");
      }
      return j;
    };
    auto string_field = [](const Json& j, const char* key) -> std::optional<std::string> {
      auto it = j.find(key);
      if (it == j.end() || it->is_null()) return std::nullopt;
      if (!it->is_string()) {
        throw Error(ErrorCode::MalformedFrame, std::string("'") + key + "' must be a string");
      }
      return it->get<std::string>();
    };

    if (method == http::verb::options) {
      res.set(http::field::access_control_allow_headers, "Authorization, Content-Type");
      res.set(http::field::access_control_allow_methods, "GET, POST, OPTIONS");
      return reply(http::status::no_content, Json::object());
    }

    if (s.size() == 1 && s[0] == "healthz" && method == http::verb::get) {
      res.set(http::field::content_type, "text/plain");
      res.body() = "ok";
      return res;
    }

    if (s.size() == 2 && s[0] == "api" && s[1] == "prompts" && method == http::verb::get) {
      Json prompts = Json::array();
      for (const auto& p : coordinator->canned_prompts()) prompts.push_back(p);
      return reply(http::status::ok, {{"prompts", prompts}});
    }

    if (s.size() == 3 && s[0] == "api" && s[1] == "test" && s[2] == "clock" &&
        method == http::verb::post) {
      if (!manual) return fail(ErrorCode::InvalidArgument, "simulated clock is disabled");
      const Json j = body();
      auto it = j.find("advance_ms");
      if (it == j.end() || !it->is_number_integer() || it->get<std::int64_t>() < 0) {
        throw Error(ErrorCode::MalformedFrame, "'advance_ms' must be a non-negative integer");
      }
      // Step one second at a time so every rule sees each second boundary.
      std::int64_t left = it->get<std::int64_t>();
      while (left > 0) {
        const std::int64_t step = std::min<std::int64_t>(left, 1000);
        manual->advance(step);
        coordinator->tick();
        left -= step;
      }
      coordinator->tick();
      return reply(http::status::ok, {{"now", manual->now()}});
    }

    if (s.size() >= 2 && s[0] == "api" && s[1] == "sessions") {
      if (s.size() == 2 && method == http::verb::post) {
        const Json j = body();
        auto alias = string_field(j, "tutor_alias");
        if (!alias) throw Error(ErrorCode::MalformedFrame, "'tutor_alias' is required");
        auto created = coordinator->create_session(*alias);
        return reply(http::status::created,
                     {{"session_id", created.id.str()}, {"tutor_token", created.tutor_token}});
      }
      if (s.size() == 4) {
        const SessionId id{s[2]};
        if (s[3] == "join" && method == http::verb::post) {
          const Json j = body();
          auto alias = string_field(j, "alias");
          auto role_text = string_field(j, "role");
          if (!alias) throw Error(ErrorCode::MalformedFrame, "'alias' is required");
          Role role = Role::Student;
          if (role_text) {
            std::string name = *role_text;
            if (!name.empty()) name[0] = static_cast<char>(std::toupper(name[0]));
            auto r = parse_role(name);
            if (!r) throw Error(ErrorCode::MalformedFrame, "unknown role " + *role_text);
            role = *r;
          }
          bool takeover = false;
          if (auto it = j.find("takeover"); it != j.end() && !it->is_null()) {
            if (!it->is_boolean()) {
              throw Error(ErrorCode::MalformedFrame, "'takeover' must be a boolean");
            }
            takeover = it->get<bool>();
          }
          auto token = string_field(j, "token");
          if (!token && role == Role::Tutor) {
            const std::string b = bearer(req, t);
            if (!b.empty()) token = b;
          }
          auto joined = coordinator->join(id, *alias, role, token, takeover);
          Json ice = Json::array();
          for (const auto& i : joined.ice_servers) ice.push_back(i);
          return reply(http::status::ok, {{"peer_id", joined.peer.str()},
                                          {"token", joined.token},
                                          {"role", to_string(joined.role)},
                                          {"ice_servers", ice},
                                          {"roster", roster_json(joined.roster)}});
        }
        if (s[3] == "close" && method == http::verb::post) {
          auto summary = coordinator->close_session(id, bearer(req, t));
          return reply(http::status::ok, {{"session_id", id.str()},
                                          {"last_seq", summary.last_seq},
                                          {"already_closed", summary.already_closed}});
        }
        if (s[3] == "events" && method == http::verb::get) {
          LogFilter filter;
          if (auto it = t.query.find("since_seq"); it != t.query.end() && !it->second.empty()) {
            std::uint64_t since = 0;
            auto [p, ec] = std::from_chars(it->second.data(),
                                           it->second.data() + it->second.size(), since);
            if (ec != std::errc{} || p != it->second.data() + it->second.size()) {
              throw Error(ErrorCode::MalformedFrame, "since_seq must be an integer");
            }
            filter.seq_from = since + 1;
          }
          if (auto it = t.query.find("category"); it != t.query.end() && !it->second.empty()) {
            std::string_view rest = it->second;
            while (!rest.empty()) {
              const auto comma = rest.find(',');
              auto c = parse_log_category(rest.substr(0, comma));
              if (!c) throw Error(ErrorCode::MalformedFrame, "unknown category");
              filter.categories.push_back(*c);
              if (comma == std::string_view::npos) break;
              rest.remove_prefix(comma + 1);
            }
          }
          if (auto it = t.query.find("subject"); it != t.query.end()) {
            filter.subject = it->second;
          }
          const auto records = coordinator->events(id, bearer(req, t), filter);
          if (auto it = t.query.find("format"); it != t.query.end() && it->second == "lines") {
            res.set(http::field::content_type, "text/plain");
            std::string out;
            for (const auto& r : records) {
              out += format_record(r);
              out += '\n';
            }
            res.body() = std::move(out);
            return res;
          }
          Json list = Json::array();
          for (const auto& r : records) {
            list.push_back({{"seq", r.global_seq},
                            {"ts", r.ts},
                            {"category", to_string(r.category)},
                            {"subject", r.subject},
                            {"body", r.body}});
          }
          return reply(http::status::ok, {{"session_id", id.str()}, {"records", list}});
        }
      }
    }
    return reply(http::status::not_found, {{"error", "NotFound"}, {"reason", "no such route"}});
  } catch (const Error& err) {
    return fail(err.code(), err.detail());
  } catch (const std::exception& ex) {
    return fail(ErrorCode::InvalidArgument, ex.what());
  }
}

// ---- lifecycle ---------------------------------------------------------------------

void Gateway::Impl::accept() {
  acceptor->async_accept(net::make_strand(ioc), [this](beast::error_code ec,
                                                        tcp::socket socket) {
    if (ec) {
      if (ec != net::error::operation_aborted) {
        spdlog::warn("accept failed: {}", ec.message());
        if (!stopping) accept();
      }
      return;
    }
    std::make_shared<HttpConnection>(std::move(socket), *this)->run();
    if (!stopping) accept();
  });
}

void Gateway::Impl::schedule_tick() {
  ticker->expires_after(std::chrono::seconds(1));
  ticker->async_wait([this](beast::error_code ec) {
    if (ec || stopping) return;
    try {
      coordinator->tick();
    } catch (const std::exception& ex) {
      spdlog::error("tick failed: {}", ex.what());
    }
    schedule_tick();
  });
}

Gateway::Gateway(GatewayConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Gateway::~Gateway() {
  stop();
  wait();
}

std::uint16_t Gateway::start() {
  Impl& d = *impl_;
  d.config.validate();
  if (d.config.simulated_clock) {
    d.manual = std::make_shared<ManualClock>(0);
    d.clock = d.manual;
  } else {
    d.clock = std::make_shared<SystemClock>();
  }
  auto storage = std::make_shared<FileLogStorage>(d.config.data_dir);
  d.coordinator = std::make_unique<Coordinator>(d.config.coordinator, storage, d.clock);
  d.coordinator->log().recover();

  try {
    const auto address = net::ip::make_address(d.config.bind);
    tcp::endpoint endpoint(address, static_cast<std::uint16_t>(d.config.port));
    d.acceptor = std::make_unique<tcp::acceptor>(net::make_strand(d.ioc));
    d.acceptor->open(endpoint.protocol());
    d.acceptor->set_option(net::socket_base::reuse_address(true));
    d.acceptor->bind(endpoint);
    d.acceptor->listen(net::socket_base::max_listen_connections);
    d.bound_port = d.acceptor->local_endpoint().port();
  } catch (const boost::system::system_error& ex) {
    throw Error(ErrorCode::BindFailure,
                d.config.bind + ":" + std::to_string(d.config.port) + ": " + ex.what());
  }

  d.ticker = std::make_unique<net::steady_timer>(d.ioc);
  d.accept();
  d.schedule_tick();
  for (int i = 0; i < d.config.threads; ++i) {
    d.threads.emplace_back([&d] { d.ioc.run(); });
  }
  spdlog::info("listening on {}:{} (data {}{})", d.config.bind, d.bound_port,
               d.config.data_dir.string(), d.config.simulated_clock ? ", simulated clock" : "");
  return d.bound_port;
}

void Gateway::stop(const std::string& reason) {
  Impl& d = *impl_;
  if (!d.coordinator || d.stopping.exchange(true)) return;
  d.coordinator->close_all(reason);
  net::post(d.ioc, [&d] {
    beast::error_code ignored;
    if (d.acceptor) d.acceptor->close(ignored);
    if (d.ticker) d.ticker->cancel();
  });
  // Leave the workers a moment to flush the final Leave envelopes.
  auto grace = std::make_shared<net::steady_timer>(d.ioc, std::chrono::milliseconds(300));
  grace->async_wait([&d, grace](beast::error_code) { d.ioc.stop(); });
}

void Gateway::wait() {
  for (auto& t : impl_->threads) {
    if (t.joinable()) t.join();
  }
  impl_->threads.clear();
}

void Gateway::run_until_signal() {
  start();
  net::signal_set signals(impl_->ioc, SIGINT, SIGTERM);
  signals.async_wait([this](beast::error_code ec, int sig) {
    if (ec) return;
    spdlog::info("signal {}: shutting down", sig);
    stop();
  });
  wait();
}

std::uint16_t Gateway::port() const { return impl_->bound_port; }

Coordinator& Gateway::coordinator() { return *impl_->coordinator; }

}  // namespace tutorhub
