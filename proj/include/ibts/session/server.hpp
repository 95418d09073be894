#pragma once

#include <chrono>
#include <deque>
#include <iostream>
#include <map>
#include <memory>
#include <string>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "ibts/session/session.hpp"

// WebSocket transport for the session protocol. Everything runs on one
// io_context thread, so each session has a single writer.
namespace ibts::session {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

class WebSocketServer {
 public:
  // step_timeout_s <= 0 disables the timeout (humans set the pace).
  WebSocketServer(asio::io_context& ioc, const tcp::endpoint& endpoint, SessionManager& manager, double step_timeout_s = 0.0,
                  std::ostream* log = nullptr)
      : ioc_(ioc), acceptor_(ioc), manager_(manager), timeout_(step_timeout_s), timer_(ioc), log_(log) {
    acceptor_.open(endpoint.protocol());
    acceptor_.set_option(asio::socket_base::reuse_address(true));
    acceptor_.bind(endpoint);
    acceptor_.listen();
  }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  void start() {
    accept();
    if (timeout_ > 0.0) tick();
  }

  void shutdown() {
    beast::error_code ec;
    acceptor_.close(ec);
    timer_.cancel();
    for (auto& [id, w] : connections_) {
      if (auto c = w.lock()) c->close();
    }
  }

 private:
  class Connection : public std::enable_shared_from_this<Connection> {
   public:
    Connection(tcp::socket socket, WebSocketServer& server, std::string id)
        : ws_(std::move(socket)), server_(server), id_(std::move(id)) {}

    const std::string& id() const { return id_; }

    void start() {
      ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
      ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
        if (ec) return self->server_.closed(self->id_);
        self->read();
      });
    }

    void send(std::string text) {
      queue_.push_back(std::move(text));
      if (queue_.size() == 1) write();
    }

    void close() {
      beast::error_code ec;
      beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
      beast::get_lowest_layer(ws_).socket().close(ec);
    }

   private:
    void read() {
      ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) return self->server_.closed(self->id_);
        const std::string text = beast::buffers_to_string(self->buffer_.data());
        self->buffer_.consume(self->buffer_.size());
        self->server_.received(self->id_, text);
        self->read();
      });
    }

    void write() {
      ws_.text(true);
      ws_.async_write(asio::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) return self->server_.closed(self->id_);
        self->queue_.pop_front();
        if (!self->queue_.empty()) self->write();
      });
    }

    websocket::stream<beast::tcp_stream> ws_;
    beast::flat_buffer buffer_;
    std::deque<std::string> queue_;
    WebSocketServer& server_;
    std::string id_;
  };

  void accept() {
    acceptor_.async_accept(asio::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      beast::error_code opt_ec;
      socket.set_option(tcp::no_delay(true), opt_ec);  // one small message per step: avoid Nagle stalls
      const std::string id = "c" + std::to_string(++clients_);
      auto conn = std::make_shared<Connection>(std::move(socket), *this, id);
      connections_[id] = conn;
      conn->start();
      accept();
    });
  }

  void received(const std::string& client, const std::string& text) {
    if (log_) *log_ << nlohmann::json{{"from", client}, {"message", text}}.dump() << "\n";
    deliver(manager_.handle(client, text));
  }

  void closed(const std::string& client) {
    if (connections_.erase(client)) deliver(manager_.disconnect(client));
  }

  void deliver(const Outbox& out) {
    for (const auto& o : out) {
      auto it = connections_.find(o.client);
      if (it == connections_.end()) continue;
      if (auto c = it->second.lock()) c->send(o.message.dump());
    }
  }

  // Substitutes stay for humans who have not acted within the timeout.
  void tick() {
    timer_.expires_after(std::chrono::milliseconds(100));
    timer_.async_wait([this](beast::error_code ec) {
      if (ec) return;
      const auto now = std::chrono::steady_clock::now();
      for (Session* s : manager_.sessions()) {
        if (s->status() != Session::Status::Running) continue;
        auto& [step, since] = progress_[s->id()];
        if (step != s->state().t) {
          step = s->state().t;
          since = now;
        } else if (std::chrono::duration<double>(now - since).count() >= timeout_) {
          deliver(s->timeout_absent());
        }
      }
      tick();
    });
  }

  asio::io_context& ioc_;
  tcp::acceptor acceptor_;
  SessionManager& manager_;
  double timeout_;
  asio::steady_timer timer_;
  std::ostream* log_;
  std::map<std::string, std::weak_ptr<Connection>> connections_;
  std::map<std::string, std::pair<int, std::chrono::steady_clock::time_point>> progress_;
  long clients_ = 0;
};

}  // namespace ibts::session
