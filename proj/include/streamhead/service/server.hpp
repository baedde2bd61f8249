#pragma once

// Websocket front end: one Session per connection, text frames carry the
// JSON protocol. Reads that would overrun a session's audio queue block that
// connection's strand, which throttles the client (backpressure).

#include <atomic>
#include <deque>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "streamhead/diffusion/model.hpp"
#include "streamhead/service/protocol.hpp"
#include "streamhead/service/session.hpp"

namespace streamhead::service {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

struct ServerConfig {
  std::string host = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  int max_sessions = 8;
  std::optional<streaming::LatencyProfile> simulate;  // default for sessions

  void validate() const { require(max_sessions >= 1, ErrorKind::Config, "max_sessions must be >= 1"); }
};

/// Splits "host:port".
inline std::pair<std::string, unsigned short> parse_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  require(colon != std::string::npos && colon + 1 < bind.size(), ErrorKind::Config, "bind address must be host:port");
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(bind.substr(colon + 1), &used);
    require(used == bind.size() - colon - 1, ErrorKind::Config, "bad port");
  } catch (const std::exception&) {
    fail(ErrorKind::Config, "bad port in bind address '" + bind + "'");
  }
  require(port >= 0 && port <= 65535, ErrorKind::Config, "port out of range");
  return {bind.substr(0, colon), static_cast<unsigned short>(port)};
}

namespace detail {

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, std::shared_ptr<const diffusion::MotionModel> model, std::atomic<int>& active,
             const ServerConfig& cfg)
      : ws_(std::move(socket)), model_(std::move(model)), active_(active), max_sessions_(cfg.max_sessions),
        simulate_(cfg.simulate) {}

  ~Connection() {
    session_.reset();  // joins the pipeline before the counter drops
    if (counted_) --active_;
  }

  void start() {
    net::dispatch(ws_.get_executor(), [self = shared_from_this()] { self->accept(); });
  }

 private:
  void accept() {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->on_accept();
    });
  }

  void on_accept() {
    if (++active_ > max_sessions_) {
      --active_;
      enqueue(serialize(ErrorMsg{"overload", "session limit reached"}), true);
      return;
    }
    counted_ = true;
    // The pipeline thread only posts; the connection is resolved on the
    // strand so it is never released from inside the session it owns.
    std::weak_ptr<Connection> weak = shared_from_this();
    auto ex = ws_.get_executor();
    session_ = std::make_unique<Session>(model_, [weak, ex](const Message& m) {
      net::post(ex, [weak, text = serialize(m)]() mutable {
        if (auto self = weak.lock()) self->enqueue(std::move(text), false);
      });
    }, simulate_);
    read();
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->on_disconnect();
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->session_->handle_text(text);
      self->read();
    });
  }

  void on_disconnect() {
    // Ends the session; the pipeline drains when the connection is released.
    if (session_ && session_->started() && !session_->finished()) session_->handle(SessionEnd{});
  }

  void enqueue(std::string text, bool close_after) {
    outbox_.push_back(std::move(text));
    close_after_ = close_after_ || close_after;
    if (!writing_) write_next();
  }

  void write_next() {
    if (outbox_.empty()) {
      writing_ = false;
      if (close_after_)
        ws_.async_close(websocket::close_code::try_again_later, [self = shared_from_this()](beast::error_code) {});
      return;
    }
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->outbox_.clear();
        self->writing_ = false;
        return;
      }
      self->outbox_.pop_front();
      self->write_next();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::shared_ptr<const diffusion::MotionModel> model_;
  std::atomic<int>& active_;
  int max_sessions_;
  std::optional<streaming::LatencyProfile> simulate_;
  bool counted_ = false;
  std::unique_ptr<Session> session_;
  std::deque<std::string> outbox_;
  bool writing_ = false;
  bool close_after_ = false;
};

}  // namespace detail

class Server {
 public:
  Server(std::shared_ptr<const diffusion::MotionModel> model, ServerConfig cfg)
      : model_(std::move(model)), cfg_((cfg.validate(), cfg)), acceptor_(net::make_strand(ioc_)) {}

  ~Server() { stop(); }

  /// Binds and starts serving on background threads; returns the bound port.
  unsigned short start() {
    const tcp::endpoint ep(net::ip::make_address(cfg_.host), cfg_.port);
    beast::error_code ec;
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    require(!ec, ErrorKind::Config, "cannot listen on " + cfg_.host + ":" + std::to_string(cfg_.port) + ": " + ec.message());
    accept();
    const int threads = cfg_.max_sessions + 2;
    for (int i = 0; i < threads; ++i) threads_.emplace_back([this] { ioc_.run(); });
    return acceptor_.local_endpoint().port();
  }

  void stop() {
    ioc_.stop();
    for (auto& t : threads_)
      if (t.joinable()) t.join();
    threads_.clear();
  }

  int active_sessions() const { return active_.load(); }

 private:
  void accept() {
    acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (!ec) std::make_shared<detail::Connection>(std::move(socket), model_, active_, cfg_)->start();
      if (acceptor_.is_open()) accept();
    });
  }

  std::shared_ptr<const diffusion::MotionModel> model_;
  ServerConfig cfg_;
  net::io_context ioc_;
  tcp::acceptor acceptor_;
  std::vector<std::thread> threads_;
  std::atomic<int> active_{0};
};

}  // namespace streamhead::service
