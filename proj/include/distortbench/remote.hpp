#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <iostream>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "distortbench/classifier.hpp"
#include "distortbench/errors.hpp"
#include "distortbench/wire.hpp"

namespace distortbench {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  static Endpoint parse(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
      throw UsageError("endpoint must look like host:port, got '" + text + "'");
    }
    Endpoint e;
    e.host = text.substr(0, colon);
    try {
      const unsigned long p = std::stoul(text.substr(colon + 1));
      if (p == 0 || p > 65535) throw std::out_of_range("port");
      e.port = static_cast<std::uint16_t>(p);
    } catch (const std::exception&) {
      throw UsageError("bad port in endpoint '" + text + "'");
    }
    return e;
  }

  std::string str() const { return host + ":" + std::to_string(port); }
};

/// Owning TCP socket.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }

  void close() noexcept {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  static Socket connect(const Endpoint& ep) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(ep.port);
    if (int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
      throw TransportError("resolve " + ep.str() + ": " + ::gai_strerror(rc));
    }
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);
    std::string last_error = "no addresses";
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
      Socket s(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
      if (!s.valid()) {
        last_error = std::strerror(errno);
        continue;
      }
      if (::connect(s.fd(), ai->ai_addr, ai->ai_addrlen) == 0) {
        int one = 1;
        ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return s;
      }
      last_error = std::strerror(errno);
    }
    throw TransportError("connect " + ep.str() + ": " + last_error);
  }

  void send_all(std::span<const std::uint8_t> data) const {
    std::size_t sent = 0;
    while (sent < data.size()) {
      const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw TransportError(std::string("send: ") + std::strerror(errno));
      sent += static_cast<std::size_t>(n);
    }
  }

  /// Reads exactly `n` bytes. Returns false on clean EOF before the first byte.
  bool recv_exact(std::uint8_t* out, std::size_t n) const {
    std::size_t got = 0;
    while (got < n) {
      const ssize_t r = ::recv(fd_, out + got, n - got, 0);
      if (r < 0 && errno == EINTR) continue;
      if (r < 0) throw TransportError(std::string("recv: ") + std::strerror(errno));
      if (r == 0) {
        if (got == 0) return false;
        throw TransportError("connection closed mid-frame");
      }
      got += static_cast<std::size_t>(r);
    }
    return true;
  }

  /// Reads one protocol frame. Empty result on clean EOF.
  wire::Bytes recv_frame() const {
    wire::Bytes frame(wire::kPrefixSize);
    if (!recv_exact(frame.data(), frame.size())) return {};
    wire::FrameSize fs = wire::frame_size(frame);
    if (fs.total == 0) {
      const std::size_t have = frame.size();
      frame.resize(fs.header);
      if (!recv_exact(frame.data() + have, fs.header - have)) throw TransportError("connection closed mid-frame");
      fs = wire::frame_size(frame);
    }
    const std::size_t have = frame.size();
    frame.resize(fs.total);
    if (fs.total > have && !recv_exact(frame.data() + have, fs.total - have)) {
      throw TransportError("connection closed mid-frame");
    }
    return frame;
  }

 private:
  int fd_ = -1;
};

/// Victim reached over the wire protocol. One persistent connection, requests
/// serialized by a mutex, transport failures retried with reconnect.
class RemoteClassifier final : public Classifier {
 public:
  explicit RemoteClassifier(Endpoint ep, std::size_t num_classes = 0, int max_attempts = 3)
      : ep_(std::move(ep)), k_(num_classes), max_attempts_(max_attempts) {}

  std::size_t num_classes() const override { return k_.load(); }
  std::string id() const override { return "remote@" + ep_.str(); }

  std::vector<ProbabilityVector> forward(std::span<const ImageTensor> batch) override {
    const wire::Bytes request = wire::encode_predict_request(batch);
    std::lock_guard lock(mu_);
    std::string last_error;
    for (int attempt = 0; attempt < max_attempts_; ++attempt) {
      try {
        if (!sock_.valid()) sock_ = Socket::connect(ep_);
        sock_.send_all(request);
        wire::Bytes reply = sock_.recv_frame();
        if (reply.empty()) throw TransportError("server closed connection");
        auto rows = wire::decode_predict_response(reply, batch.size());
        if (k_.load() == 0) k_.store(rows.front().size());
        return rows;
      } catch (const TransportError& e) {
        sock_.close();
        last_error = e.what();
      }
    }
    throw TransportError("remote classifier " + ep_.str() + " failed after " + std::to_string(max_attempts_) +
                         " attempts: " + last_error);
  }

 private:
  Endpoint ep_;
  std::atomic<std::size_t> k_;
  int max_attempts_;
  std::mutex mu_;
  Socket sock_;
};

/// Serves any in-process Classifier behind the wire protocol. Each connection
/// gets its own thread; requests on a connection are handled in order.
class ClassifierServer {
 public:
  ClassifierServer(std::shared_ptr<Classifier> model, std::uint16_t port = 0, std::string bind_host = "127.0.0.1",
                   std::size_t max_batch = kDefaultMaxBatch)
      : model_(std::move(model)), max_batch_(max_batch) {
    listener_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (!listener_.valid()) throw TransportError(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, bind_host.c_str(), &addr.sin_addr) != 1) {
      throw UsageError("bind address must be a dotted IPv4 address: " + bind_host);
    }
    if (::bind(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      throw TransportError("bind " + bind_host + ":" + std::to_string(port) + ": " + std::strerror(errno));
    }
    if (::listen(listener_.fd(), 16) != 0) throw TransportError(std::string("listen: ") + std::strerror(errno));
    socklen_t len = sizeof addr;
    ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    endpoint_ = Endpoint{bind_host, ntohs(addr.sin_port)};
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  ClassifierServer(const ClassifierServer&) = delete;
  ClassifierServer& operator=(const ClassifierServer&) = delete;
  ~ClassifierServer() { stop(); }

  const Endpoint& endpoint() const noexcept { return endpoint_; }
  std::uint64_t frames_served() const noexcept { return served_.load(); }

  /// Blocks until stop() is called from another thread.
  void wait() {
    if (acceptor_.joinable()) acceptor_.join();
  }

  void stop() {
    if (stopping_.exchange(true)) return;
    ::shutdown(listener_.fd(), SHUT_RDWR);
    if (acceptor_.joinable()) acceptor_.join();
    listener_.close();
    std::lock_guard lock(conn_mu_);
    for (auto& c : connections_) ::shutdown(c.sock.fd(), SHUT_RDWR);
    for (auto& c : connections_) {
      if (c.worker.joinable()) c.worker.join();
    }
    connections_.clear();
  }

  /// Handles one request frame and produces the reply frame. Never throws.
  wire::Bytes handle(std::span<const std::uint8_t> frame) {
    try {
      auto images = wire::decode_predict_request(frame);
      if (images.size() > max_batch_) {
        return wire::encode_error("batch of " + std::to_string(images.size()) + " exceeds limit " +
                                  std::to_string(max_batch_));
      }
      std::vector<ProbabilityVector> rows;
      {
        std::lock_guard lock(model_mu_);
        rows = model_->forward(images);
      }
      ++served_;
      return wire::encode_predict_response(rows);
    } catch (const std::exception& e) {
      return wire::encode_error(e.what());
    }
  }

 private:
  struct Connection {
    Socket sock;
    std::thread worker;
  };

  void accept_loop() {
    while (!stopping_.load()) {
      const int fd = ::accept(listener_.fd(), nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        break;
      }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::lock_guard lock(conn_mu_);
      if (stopping_.load()) {
        ::close(fd);
        break;
      }
      auto& conn = connections_.emplace_back();
      conn.sock = Socket(fd);
      conn.worker = std::thread([this, &conn] { serve(conn.sock); });
    }
  }

  void serve(const Socket& sock) {
    try {
      for (;;) {
        wire::Bytes frame;
        try {
          frame = sock.recv_frame();
        } catch (const ProtocolError& e) {
          // Unparseable header: report and drop the connection, framing is lost.
          sock.send_all(wire::encode_error(e.what()));
          return;
        }
        if (frame.empty()) return;
        sock.send_all(handle(frame));
      }
    } catch (const TransportError&) {
      // peer went away
    }
  }

  std::shared_ptr<Classifier> model_;
  std::size_t max_batch_;
  Socket listener_;
  Endpoint endpoint_;
  std::thread acceptor_;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> served_{0};
  std::mutex model_mu_;
  std::mutex conn_mu_;
  std::list<Connection> connections_;
};

}  // namespace distortbench
