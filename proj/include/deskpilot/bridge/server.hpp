#pragma once
//
// WebSocket endpoint on Boost.Beast. One io thread runs the acceptor and all
// client sessions; broadcast() and stop() may be called from any thread.

#include <atomic>
#include <chrono>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "deskpilot/bridge/protocol.hpp"
#include "deskpilot/bridge/session.hpp"

namespace deskpilot::bridge {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

/// The endpoint could not be opened.
class StartupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class WebSocketServer {
 public:
  /// Called on the io thread for each inbound text message; the returned
  /// string (if not empty) is sent back to that client only.
  using Handler = std::function<std::string(const std::string&)>;

  /// `port` 0 picks a free port (see port()).
  WebSocketServer(std::string host, unsigned short port, Handler handler)
      : host_(std::move(host)), port_(port), handler_(std::move(handler)), acceptor_(ioc_) {}

  explicit WebSocketServer(const BridgeConfig& cfg, Handler handler)
      : WebSocketServer(cfg.host, static_cast<unsigned short>(cfg.port), std::move(handler)) {
    cfg.validate();
  }

  ~WebSocketServer() { stop(); }
  WebSocketServer(const WebSocketServer&) = delete;
  WebSocketServer& operator=(const WebSocketServer&) = delete;

  void start() {
    beast::error_code ec;
    const auto addr = net::ip::make_address(host_, ec);
    if (ec) throw StartupError("bridge: bad host address '" + host_ + "'");
    const tcp::endpoint ep(addr, port_);
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec) throw StartupError("bridge: cannot listen on " + host_ + ":" + std::to_string(port_) + ": " + ec.message());
    port_ = acceptor_.local_endpoint().port();
    do_accept();
    thread_ = std::thread([this] { ioc_.run(); });
  }

  void stop() {
    if (!thread_.joinable()) return;
    net::post(ioc_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
      for (const auto& c : clients_) c->close();
    });
    // Give close frames a moment, then tear down.
    const auto until = std::chrono::steady_clock::now() + std::chrono::milliseconds(500);
    while (client_count() > 0 && std::chrono::steady_clock::now() < until)
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    ioc_.stop();
    thread_.join();
  }

  /// Sends the same message to every connected client.
  void broadcast(std::string msg) {
    auto shared = std::make_shared<const std::string>(std::move(msg));
    net::post(ioc_, [this, shared] {
      for (const auto& c : clients_) c->send(shared);
    });
  }

  unsigned short port() const noexcept { return port_; }
  std::size_t client_count() const noexcept { return count_.load(); }

 private:
  class Client : public std::enable_shared_from_this<Client> {
   public:
    Client(tcp::socket socket, WebSocketServer& server) : ws_(std::move(socket)), server_(server) {}

    void run() {
      ws_.text(true);
      ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
        if (ec) return;
        self->server_.clients_.insert(self);
        self->server_.count_.store(self->server_.clients_.size());
        self->read();
      });
    }

    void send(std::shared_ptr<const std::string> msg) {
      if (closed_) return;
      // A client this far behind is dropped rather than shown a gap.
      if (out_.size() >= kMaxQueue) {
        close();
        return;
      }
      out_.push_back(std::move(msg));
      if (out_.size() == 1) write();
    }

    void close() {
      if (closed_) return;
      closed_ = true;
      ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) { self->drop(); });
    }

   private:
    static constexpr std::size_t kMaxQueue = 256;

    void read() {
      ws_.async_read(buf_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) return self->drop();
        const std::string text = beast::buffers_to_string(self->buf_.data());
        self->buf_.consume(self->buf_.size());
        std::string reply = self->server_.handler_ ? self->server_.handler_(text) : std::string{};
        if (!reply.empty()) self->send(std::make_shared<const std::string>(std::move(reply)));
        self->read();
      });
    }

    void write() {
      ws_.async_write(net::buffer(*out_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) return self->drop();
        self->out_.pop_front();
        if (!self->out_.empty()) self->write();
      });
    }

    void drop() {
      closed_ = true;
      server_.clients_.erase(shared_from_this());
      server_.count_.store(server_.clients_.size());
    }

    websocket::stream<beast::tcp_stream> ws_;
    WebSocketServer& server_;
    beast::flat_buffer buf_;
    std::deque<std::shared_ptr<const std::string>> out_;
    bool closed_ = false;
  };

  void do_accept() {
    acceptor_.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      std::make_shared<Client>(std::move(socket), *this)->run();
      do_accept();
    });
  }

  std::string host_;
  unsigned short port_;
  Handler handler_;
  net::io_context ioc_{1};
  tcp::acceptor acceptor_;
  std::set<std::shared_ptr<Client>> clients_;  // io thread only
  std::atomic<std::size_t> count_{0};
  std::thread thread_;
};

/// Steps the session at wall-clock pace (or as fast as possible with
/// `realtime` off), broadcasting every frame. Runs for `duration` seconds of
/// sim time, or until `stop` when duration <= 0.
inline void serve(BridgeSession& session, WebSocketServer& server, double duration, const std::atomic<bool>& stop,
                  const std::function<void(const TelemetryFrame&)>& on_frame = {}, bool realtime = true) {
  const double dt = session.simulator().dt();
  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t k = 1; !stop.load(); ++k) {
    if (duration > 0.0 && static_cast<double>(k) * dt > duration + 1e-9) break;
    if (auto f = session.tick()) {
      server.broadcast(serialize(*f));
      if (on_frame) on_frame(*f);
    }
    if (realtime)
      std::this_thread::sleep_until(t0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                             std::chrono::duration<double>(static_cast<double>(k) * dt)));
  }
}

}  // namespace deskpilot::bridge
