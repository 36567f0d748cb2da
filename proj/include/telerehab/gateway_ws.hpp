// Copyright 2026 The telerehab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// WebSocket/HTTP front end of the gateway and the real-time tick driver.
//
//   GET /healthz            -> 200 "ok"
//   GET /session?id=&decimation=   (WebSocket upgrade)
//
// Client -> server text frames:
//   {"cmd": verb, ...args}
//   {"input": {"x": m, "y": m, "grip": bool}}
//   {"cmd": "subscribe", "decimation": n}     (per-connection)
// Server -> client text frames:
//   {"hello": {...}} once, {"ack": {"cmd", "ok", "reason"?, "error"?, "data"?}},
//   {"state": tag}, {"telemetry": {...}}
//
// All network I/O runs on one io_context thread; the simulation runs on the
// driver thread and is only reached through the gateway mailbox.

#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "telerehab/gateway.hpp"

namespace telerehab {

/// Ticks one GatewaySession at its control period on a dedicated thread.
/// Late ticks are run back to back; more than 50 ms of backlog is dropped.
class RealtimeDriver {
 public:
  explicit RealtimeDriver(GatewaySession& session) : session_(session) {}
  ~RealtimeDriver() { stop(); }
  RealtimeDriver(const RealtimeDriver&) = delete;
  RealtimeDriver& operator=(const RealtimeDriver&) = delete;

  void start() {
    if (thread_.joinable()) return;
    running_ = true;
    thread_ = std::thread([this] { loop(); });
  }

  void stop() {
    running_ = false;
    if (thread_.joinable()) thread_.join();
  }

  std::uint64_t ticks() const { return ticks_.load(); }
  std::string last_error() const {
    std::lock_guard lock(error_mu_);
    return last_error_;
  }

 private:
  void loop() {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(
        std::chrono::duration<double>(session_.base_config().master.plant.integrator.dt));
    auto next = clock::now();
    while (running_) {
      try {
        if (session_.tick()) ++ticks_;
      } catch (const Error& e) {
        std::lock_guard lock(error_mu_);
        last_error_ = e.what();
        std::fprintf(stderr, "telerehab: session stopped: %s\n", e.what());
      }
      next += period;
      const auto now = clock::now();
      if (now - next > std::chrono::milliseconds(50)) next = now;
      std::this_thread::sleep_until(next);
    }
  }

  GatewaySession& session_;
  std::thread thread_;
  std::atomic<bool> running_{false};
  std::atomic<std::uint64_t> ticks_{0};
  mutable std::mutex error_mu_;
  std::string last_error_;
};

struct ServerOptions {
  std::string address = "127.0.0.1";
  std::uint16_t port = 8765;  // 0 picks a free port
  int default_decimation = 50;
  std::string default_session = "default";
};

namespace ws_detail {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

/// Value of `key` in the query string of `target`, or empty.
inline std::string query_param(std::string_view target, std::string_view key) {
  const auto q = target.find('?');
  if (q == std::string_view::npos) return {};
  std::string_view rest = target.substr(q + 1);
  while (!rest.empty()) {
    const auto amp = rest.find('&');
    const std::string_view kv = rest.substr(0, amp);
    const auto eq = kv.find('=');
    if (kv.substr(0, eq) == key) return std::string(eq == std::string_view::npos ? "" : kv.substr(eq + 1));
    if (amp == std::string_view::npos) break;
    rest = rest.substr(amp + 1);
  }
  return {};
}

inline std::string_view path_of(std::string_view target) { return target.substr(0, target.find('?')); }

class WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(tcp::socket&& socket, Gateway& gateway, const ServerOptions& opt)
      : ws_(std::move(socket)), timer_(ws_.get_executor()), gateway_(gateway), opt_(opt) {}

  void run(http::request<http::string_body> req) {
    const std::string target(req.target());
    session_id_ = query_param(target, "id");
    if (session_id_.empty()) session_id_ = opt_.default_session;
    const std::string dec = query_param(target, "decimation");
    decimation_ = dec.empty() ? opt_.default_decimation : std::max(1, std::atoi(dec.c_str()));
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&WsConnection::on_accept, shared_from_this()));
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    try {
      session_ = &gateway_.get(session_id_);
    } catch (const Error& e) {
      Ack a;
      a.cmd = "connect";
      a.ok = false;
      a.error = e.code();
      a.reason = e.what();
      send(a.to_json().dump());
      closing_ = true;
      do_read();
      return;
    }
    std::weak_ptr<WsConnection> weak = shared_from_this();
    auto exec = ws_.get_executor();
    listener_ = session_->add_state_listener([weak, exec](SessionState s) {
      net::post(exec, [weak, s] {
        if (auto self = weak.lock()) self->on_state(s);
      });
    });
    send(session_->describe().dump());
    subscription_ = session_->subscribe(decimation_);
    do_read();
    pump();
  }

  void on_state(SessionState s) {
    send(Json{{"state", std::string(to_string(s))}}.dump());
    if (s == SessionState::kRunning && (!subscription_ || subscription_->closed())) {
      subscription_ = session_->subscribe(decimation_);
    }
  }

  void pump() {
    // Frames wait in the latest-wins subscription, not the socket queue, so a
    // slow reader sees drops instead of unbounded memory growth.
    if (subscription_) {
      while (queue_.size() < kMaxQueued) {
        auto e = subscription_->try_pop();
        if (!e) break;
        send(e->to_json().dump());
      }
    }
    timer_.expires_after(std::chrono::milliseconds(5));
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (!ec && !self->finished_) self->pump();
    });
  }

  void do_read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WsConnection::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      finish();
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    if (!closing_) handle_text(text);
    do_read();
  }

  void handle_text(const std::string& text) {
    Json j;
    try {
      j = Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      reject("parse", ErrorCode::kConfigInvalid, e.what());
      return;
    }
    std::weak_ptr<WsConnection> weak = shared_from_this();
    auto exec = ws_.get_executor();
    auto reply = [weak, exec](const Ack& a) {
      net::post(exec, [weak, msg = a.to_json().dump()] {
        if (auto self = weak.lock()) self->send(msg);
      });
    };
    try {
      if (j.contains("input")) {
        OperatorInput in = OperatorInput::from_json(j.at("input"));
        session_->post_input(in, [reply](const Ack& a) {
          Ack b = a;
          b.cmd = "input";
          reply(b);
        });
        return;
      }
      SessionCommand cmd = SessionCommand::from_json(j);
      if (cmd.verb == "subscribe") {
        decimation_ = std::max(1, cmd.args.value("decimation", opt_.default_decimation));
        if (subscription_) session_->unsubscribe(subscription_);
        subscription_ = session_->subscribe(decimation_);
        Ack a;
        a.cmd = "subscribe";
        a.data = {{"decimation", decimation_}};
        send(a.to_json().dump());
        return;
      }
      session_->post(std::move(cmd), reply);
    } catch (const Error& e) {
      const bool named = j.is_object() && j.contains("cmd") && j.at("cmd").is_string();
      reject(named ? j.at("cmd").get<std::string>() : "input", e.code(), e.what());
    }
  }

  void reject(const std::string& cmd, ErrorCode code, const std::string& why) {
    Ack a;
    a.cmd = cmd;
    a.ok = false;
    a.error = code;
    a.reason = why;
    send(a.to_json().dump());
  }

  void send(std::string msg) {
    if (finished_) return;
    queue_.push_back(std::move(msg));
    if (queue_.size() > 1) return;
    write_next();
  }

  void write_next() {
    ws_.text(true);
    ws_.async_write(net::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->finish();
        return;
      }
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write_next();
    });
  }

  void finish() {
    if (finished_) return;
    finished_ = true;
    timer_.cancel();
    if (session_) {
      session_->remove_state_listener(listener_);
      if (subscription_) session_->unsubscribe(subscription_);
    }
    queue_.clear();
  }

  static constexpr std::size_t kMaxQueued = 4;

  websocket::stream<beast::tcp_stream> ws_;
  net::steady_timer timer_;
  beast::flat_buffer buffer_;
  Gateway& gateway_;
  const ServerOptions& opt_;
  std::string session_id_;
  GatewaySession* session_ = nullptr;
  std::shared_ptr<TelemetrySubscription> subscription_;
  int listener_ = 0;
  int decimation_ = 50;
  std::deque<std::string> queue_;
  bool closing_ = false;
  bool finished_ = false;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket&& socket, Gateway& gateway, const ServerOptions& opt)
      : stream_(std::move(socket)), gateway_(gateway), opt_(opt) {}

  void run() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpConnection::on_read, shared_from_this()));
  }

 private:
  void on_read(beast::error_code ec, std::size_t) {
    if (ec) return;
    const std::string target(req_.target());
    const std::string_view path = path_of(target);
    if (websocket::is_upgrade(req_) && path == "/session") {
      stream_.expires_never();
      std::make_shared<WsConnection>(stream_.release_socket(), gateway_, opt_)->run(std::move(req_));
      return;
    }
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->set(http::field::content_type, "text/plain");
    res->keep_alive(false);
    if (path == "/healthz" && req_.method() == http::verb::get) {
      res->result(http::status::ok);
      res->body() = "ok";
    } else {
      res->result(http::status::not_found);
      res->body() = "not found";
    }
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  Gateway& gateway_;
  const ServerOptions& opt_;
};

}  // namespace ws_detail

/// HTTP + WebSocket server for a Gateway. Serves from one background thread.
class GatewayServer {
 public:
  GatewayServer(Gateway& gateway, ServerOptions opt)
      : gateway_(gateway), opt_(std::move(opt)), acceptor_(io_) {
    namespace net = boost::asio;
    using tcp = net::ip::tcp;
    boost::system::error_code ec;
    const auto address = net::ip::make_address(opt_.address, ec);
    if (ec) throw Error(ErrorCode::kConfigInvalid, "bad listen address " + opt_.address);
    const tcp::endpoint ep(address, opt_.port);
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec) {
      throw Error(ErrorCode::kTransportDown,
                  "cannot listen on " + opt_.address + ":" + std::to_string(opt_.port) + ": " + ec.message());
    }
  }

  ~GatewayServer() { stop(); }
  GatewayServer(const GatewayServer&) = delete;
  GatewayServer& operator=(const GatewayServer&) = delete;

  std::uint16_t port() const { return acceptor_.local_endpoint().port(); }

  void start() {
    if (thread_.joinable()) return;
    accept();
    thread_ = std::thread([this] { io_.run(); });
  }

  void stop() {
    if (!thread_.joinable()) return;
    boost::asio::post(io_, [this] {
      boost::system::error_code ignored;
      acceptor_.close(ignored);
    });
    io_.stop();
    thread_.join();
  }

 private:
  void accept() {
    acceptor_.async_accept(boost::asio::make_strand(io_), [this](boost::system::error_code ec,
                                                                  boost::asio::ip::tcp::socket socket) {
      if (ec) return;
      std::make_shared<ws_detail::HttpConnection>(std::move(socket), gateway_, opt_)->run();
      accept();
    });
  }

  Gateway& gateway_;
  ServerOptions opt_;
  boost::asio::io_context io_{1};
  boost::asio::ip::tcp::acceptor acceptor_;
  std::thread thread_;
};

}  // namespace telerehab
