#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sstbench/oracle.hpp"

namespace sstbench {

// Wire protocol: 4-byte big-endian length prefix + one JSON document per
// frame, one request per response. Image data travels as base64-coded
// little-endian float32 with an explicit shape. The version field is
// mandatory; mismatches and malformed frames come back as typed error
// replies, never silence.
namespace wire {

constexpr int kVersion = 1;
constexpr uint32_t kMaxFrame = 256u << 20;

// ---- base64 ----

inline std::string base64_encode(const uint8_t* data, size_t len) {
  static const char* tab = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (size_t i = 0; i < len; i += 3) {
    uint32_t v = uint32_t(data[i]) << 16;
    if (i + 1 < len) v |= uint32_t(data[i + 1]) << 8;
    if (i + 2 < len) v |= uint32_t(data[i + 2]);
    out.push_back(tab[(v >> 18) & 63]);
    out.push_back(tab[(v >> 12) & 63]);
    out.push_back(i + 1 < len ? tab[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < len ? tab[v & 63] : '=');
  }
  return out;
}

inline std::vector<uint8_t> base64_decode(const std::string& s) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (s.size() % 4 != 0) throw ProtocolError("malformed", "base64 length not a multiple of 4");
  std::vector<uint8_t> out;
  out.reserve(s.size() / 4 * 3);
  for (size_t i = 0; i < s.size(); i += 4) {
    int pad = 0;
    uint32_t v = 0;
    for (int j = 0; j < 4; ++j) {
      char c = s[i + static_cast<size_t>(j)];
      if (c == '=') {
        ++pad;
        v <<= 6;
        continue;
      }
      int x = val(c);
      if (x < 0 || pad > 0) throw ProtocolError("malformed", "bad base64 character");
      v = (v << 6) | static_cast<uint32_t>(x);
    }
    out.push_back(static_cast<uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<uint8_t>(v));
  }
  return out;
}

inline std::string tensor_to_b64(const Tensor& t) {
  // float32 little-endian; this build targets little-endian hosts
  return base64_encode(reinterpret_cast<const uint8_t*>(t.data()),
                       static_cast<size_t>(t.size()) * 4);
}

inline Tensor tensor_from_b64(const std::string& b64, Shape shape) {
  std::vector<uint8_t> bytes = base64_decode(b64);
  if (bytes.size() != static_cast<size_t>(shape_size(shape)) * 4)
    throw ProtocolError("shape_mismatch", "payload bytes do not match shape");
  Tensor t(std::move(shape));
  std::memcpy(t.data(), bytes.data(), bytes.size());
  return t;
}

// ---- framing over a connected socket ----

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept {
    close();
    fd_ = o.fd_;
    o.fd_ = -1;
    return *this;
  }
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  void send_all(const void* data, size_t len) const {
    const char* p = static_cast<const char*>(data);
    while (len > 0) {
      ssize_t n = ::send(fd_, p, len, MSG_NOSIGNAL);
      if (n <= 0) throw ProtocolError("transport", "send failed");
      p += n;
      len -= static_cast<size_t>(n);
    }
  }

  // false on clean EOF at a frame boundary
  bool recv_all(void* data, size_t len, bool eof_ok) const {
    char* p = static_cast<char*>(data);
    size_t got = 0;
    while (got < len) {
      ssize_t n = ::recv(fd_, p + got, len - got, 0);
      if (n == 0) {
        if (got == 0 && eof_ok) return false;
        throw ProtocolError("transport", "connection closed mid-frame");
      }
      if (n < 0) throw ProtocolError("transport", "recv failed");
      got += static_cast<size_t>(n);
    }
    return true;
  }

 private:
  int fd_ = -1;
};

inline void send_frame(const Socket& s, const nlohmann::json& j) {
  std::string body = j.dump();
  if (body.size() > kMaxFrame) throw ProtocolError("malformed", "frame too large");
  uint8_t hdr[4] = {static_cast<uint8_t>(body.size() >> 24), static_cast<uint8_t>(body.size() >> 16),
                    static_cast<uint8_t>(body.size() >> 8), static_cast<uint8_t>(body.size())};
  s.send_all(hdr, 4);
  s.send_all(body.data(), body.size());
}

// empty optional on clean EOF
inline std::optional<std::string> recv_frame(const Socket& s) {
  uint8_t hdr[4];
  if (!s.recv_all(hdr, 4, /*eof_ok=*/true)) return std::nullopt;
  uint32_t len = (uint32_t(hdr[0]) << 24) | (uint32_t(hdr[1]) << 16) | (uint32_t(hdr[2]) << 8) |
                 uint32_t(hdr[3]);
  if (len == 0 || len > kMaxFrame) throw ProtocolError("malformed", "bad frame length");
  std::string body(len, '\0');
  s.recv_all(body.data(), len, /*eof_ok=*/false);
  return body;
}

inline std::pair<std::string, uint16_t> parse_address(const std::string& addr) {
  auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw ValidationError("address must be host:port");
  std::string host = addr.substr(0, colon);
  int port = std::stoi(addr.substr(colon + 1));
  if (port < 0 || port > 65535) throw ValidationError("port out of range");
  return {host, static_cast<uint16_t>(port)};
}

}  // namespace wire

// Serves a defended model over the frame protocol. One thread per
// connection; the model is immutable while serving and query accounting is
// mutex-guarded, so concurrent clients stay exact.
class OracleServer {
 public:
  OracleServer(const DefendedModel& model, uint64_t seed) : model_(model), seed_(seed) {}

  ~OracleServer() { stop(); }

  // Binds and starts accepting. Port 0 picks a free port; port() reports it.
  void serve(const std::string& address) {
    auto [host, port] = wire::parse_address(address);
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw IoError("cannot create server socket");
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1)
      throw ValidationError("cannot parse bind host " + host);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
      ::close(fd);
      throw IoError("cannot bind " + address);
    }
    if (::listen(fd, 16) != 0) {
      ::close(fd);
      throw IoError("cannot listen on " + address);
    }
    socklen_t slen = sizeof(sa);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &slen);
    port_ = ntohs(sa.sin_port);
    listener_ = wire::Socket(fd);
    running_.store(true);
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  uint16_t port() const { return port_; }

  QueryLogSnapshot log() const { return log_.snapshot(); }

  void stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listener_.fd(), SHUT_RDWR);
    listener_.close();
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> to_join;
    {
      // kick handlers out of blocking recv; they unregister before closing
      std::lock_guard<std::mutex> lk(conn_mutex_);
      for (int fd : active_fds_) ::shutdown(fd, SHUT_RDWR);
      to_join.swap(conn_threads_);
    }
    for (auto& t : to_join)
      if (t.joinable()) t.join();
  }

 private:
  void accept_loop() {
    while (running_.load()) {
      int cfd = ::accept(listener_.fd(), nullptr, nullptr);
      if (cfd < 0) {
        if (!running_.load()) break;
        continue;
      }
      std::lock_guard<std::mutex> lk(conn_mutex_);
      active_fds_.push_back(cfd);
      conn_threads_.emplace_back([this, cfd] { handle_connection(wire::Socket(cfd)); });
    }
  }

  void unregister(int fd) {
    std::lock_guard<std::mutex> lk(conn_mutex_);
    for (auto it = active_fds_.begin(); it != active_fds_.end(); ++it)
      if (*it == fd) {
        active_fds_.erase(it);
        break;
      }
  }

  void handle_connection(wire::Socket sock) {
    for (;;) {
      std::optional<std::string> body;
      try {
        body = wire::recv_frame(sock);
      } catch (const ProtocolError&) {
        break;  // framing broken beyond recovery
      }
      if (!body.has_value()) break;  // client done
      nlohmann::json reply = handle_request(*body);
      try {
        wire::send_frame(sock, reply);
      } catch (const ProtocolError&) {
        break;
      }
    }
    unregister(sock.fd());
  }

  nlohmann::json handle_request(const std::string& body) {
    auto error = [](const std::string& code, const std::string& message) {
      return nlohmann::json{{"version", wire::kVersion},
                            {"error", {{"code", code}, {"message", message}}}};
    };
    nlohmann::json req = nlohmann::json::parse(body, nullptr, false);
    if (req.is_discarded()) return error("malformed", "request is not valid JSON");
    if (!req.contains("version") || !req["version"].is_number_integer())
      return error("malformed", "missing version field");
    if (req["version"].get<int>() != wire::kVersion)
      return error("version_mismatch",
                   "server speaks version " + std::to_string(wire::kVersion));
    if (req.value("op", "query") == "stats") {
      QueryLogSnapshot s = log_.snapshot();
      return nlohmann::json{
          {"version", wire::kVersion},
          {"images", s.images},
          {"requests", s.requests},
          {"phases",
           {{"substitute-training",
             {{"images", s.images_substitute}, {"requests", s.requests_substitute}}},
            {"crafting", {{"images", s.images_crafting}, {"requests", s.requests_crafting}}}}}};
    }
    try {
      if (!req.contains("shape") || !req.contains("data"))
        return error("malformed", "missing shape/data");
      Shape shape = req["shape"].get<Shape>();
      if (shape.size() != 2 || shape[1] != static_cast<int>(model_.input_dim()))
        return error("shape_mismatch", "expected [n, " + std::to_string(model_.input_dim()) + "]");
      Tensor batch = wire::tensor_from_b64(req["data"].get<std::string>(), shape);
      for (int64_t i = 0; i < batch.size(); ++i)
        if (!(batch[i] >= 0.0f && batch[i] <= 1.0f))
          return error("malformed", "pixel outside [0,1]");
      Phase phase = phase_from_name(req.value("phase", "other"));
      uint64_t seq = seq_.fetch_add(1);
      Rng rng = req.contains("seed") ? Rng(req["seed"].get<uint64_t>())
                                     : Rng(seed_).stream(seq);
      nlohmann::json resp;
      resp["version"] = wire::kVersion;
      resp["model"] = model_.id();
      resp["seq"] = seq;
      Tensor logits = model_.logits(batch, rng);
      resp["logits"] = {{"shape", logits.shape()}, {"data", wire::tensor_to_b64(logits)}};
      if (model_.has_detector()) {
        auto verdicts = model_.verdicts(batch, rng);
        std::vector<int> v(verdicts.size());
        for (size_t i = 0; i < verdicts.size(); ++i)
          v[i] = verdicts[i] == Verdict::kAdversarial ? 1 : 0;
        resp["verdicts"] = v;
      }
      log_.record(phase, static_cast<uint64_t>(shape[0]));
      return resp;
    } catch (const ProtocolError& e) {
      return error(e.code(), e.what());
    } catch (const Error& e) {
      return error("internal", e.what());
    }
  }

  const DefendedModel& model_;
  uint64_t seed_;
  std::atomic<uint64_t> seq_{0};
  QueryLog log_;
  wire::Socket listener_;
  std::thread accept_thread_;
  std::mutex conn_mutex_;
  std::vector<std::thread> conn_threads_;
  std::vector<int> active_fds_;
  std::atomic<bool> running_{false};
  uint16_t port_ = 0;
};

// Client side of the frame protocol; implements the same Oracle interface as
// the in-process path.
class RemoteOracle : public Oracle {
 public:
  explicit RemoteOracle(const std::string& address) {
    auto [host, port] = wire::parse_address(address);
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw IoError("cannot create client socket");
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1) {
      ::close(fd);
      throw ValidationError("cannot parse host " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
      ::close(fd);
      throw ProtocolError("transport", "cannot connect to " + address);
    }
    sock_ = wire::Socket(fd);
  }

  OracleResponse query(const Tensor& batch, Phase phase) override {
    return query_impl(batch, phase, std::nullopt);
  }

  // Test hook mirroring InProcessOracle::pin_seed: server-side randomness for
  // this request comes from the given seed.
  OracleResponse query_seeded(const Tensor& batch, Phase phase, uint64_t seed) {
    return query_impl(batch, phase, seed);
  }

  QueryLogSnapshot log() const override { return log_.snapshot(); }

  // Authoritative server-side accounting.
  QueryLogSnapshot server_stats() {
    std::lock_guard<std::mutex> lk(mutex_);
    nlohmann::json req{{"version", wire::kVersion}, {"op", "stats"}};
    wire::send_frame(sock_, req);
    nlohmann::json resp = read_reply();
    QueryLogSnapshot s;
    s.images = resp.at("images").get<uint64_t>();
    s.requests = resp.at("requests").get<uint64_t>();
    const auto& ph = resp.at("phases");
    s.images_substitute = ph.at("substitute-training").at("images").get<uint64_t>();
    s.requests_substitute = ph.at("substitute-training").at("requests").get<uint64_t>();
    s.images_crafting = ph.at("crafting").at("images").get<uint64_t>();
    s.requests_crafting = ph.at("crafting").at("requests").get<uint64_t>();
    return s;
  }

 private:
  OracleResponse query_impl(const Tensor& batch, Phase phase, std::optional<uint64_t> seed) {
    if (batch.rank() != 2) throw ShapeError("remote query expects [n, m] batch");
    std::lock_guard<std::mutex> lk(mutex_);
    nlohmann::json req;
    req["version"] = wire::kVersion;
    req["model"] = "default";
    req["phase"] = phase_name(phase);
    req["shape"] = batch.shape();
    req["data"] = wire::tensor_to_b64(batch);
    if (seed.has_value()) req["seed"] = *seed;
    wire::send_frame(sock_, req);
    nlohmann::json resp = read_reply();
    OracleResponse out;
    out.model_id = resp.value("model", "");
    out.seq = resp.value("seq", uint64_t(0));
    Shape zshape = resp.at("logits").at("shape").get<Shape>();
    out.logits = wire::tensor_from_b64(resp.at("logits").at("data").get<std::string>(), zshape);
    if (resp.contains("verdicts")) {
      std::vector<Verdict> v;
      for (int x : resp["verdicts"].get<std::vector<int>>())
        v.push_back(x ? Verdict::kAdversarial : Verdict::kLegitimate);
      out.verdicts = std::move(v);
    }
    log_.record(phase, static_cast<uint64_t>(batch.dim(0)));
    return out;
  }

  nlohmann::json read_reply() {
    auto body = wire::recv_frame(sock_);
    if (!body.has_value()) throw ProtocolError("transport", "server closed the connection");
    nlohmann::json resp = nlohmann::json::parse(*body, nullptr, false);
    if (resp.is_discarded()) throw ProtocolError("malformed", "reply is not valid JSON");
    if (resp.contains("error")) {
      const auto& e = resp["error"];
      throw ProtocolError(e.value("code", "unknown"), e.value("message", ""));
    }
    if (resp.value("version", -1) != wire::kVersion)
      throw ProtocolError("version_mismatch", "unexpected reply version");
    return resp;
  }

  wire::Socket sock_;
  std::mutex mutex_;
  QueryLog log_;
};

}  // namespace sstbench
