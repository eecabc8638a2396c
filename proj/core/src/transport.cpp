#include "guiderl/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <stdexcept>

namespace guiderl {

namespace {

void append_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void append_u64(std::vector<uint8_t>& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void append_f64(std::vector<uint8_t>& b, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  append_u64(b, bits);
}

uint32_t read_u32(const uint8_t* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
  return v;
}
uint64_t read_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}
double read_f64(const uint8_t* p) {
  uint64_t bits = read_u64(p);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

bool send_all(int fd, const uint8_t* data, size_t n) {
  size_t sent = 0;
  while (sent < n) {
    ssize_t r = ::send(fd, data + sent, n - sent, MSG_NOSIGNAL);
    if (r <= 0) return false;
    sent += static_cast<size_t>(r);
  }
  return true;
}

bool recv_all(int fd, uint8_t* data, size_t n) {
  size_t got = 0;
  while (got < n) {
    ssize_t r = ::recv(fd, data + got, n - got, 0);
    if (r <= 0) return false;
    got += static_cast<size_t>(r);
  }
  return true;
}

// Reads one frame body (type + payload); false on EOF/error.
bool read_frame(int fd, std::vector<uint8_t>& body) {
  uint8_t len_buf[4];
  if (!recv_all(fd, len_buf, 4)) return false;
  uint32_t len = read_u32(len_buf);
  if (len == 0 || len > (1u << 20)) return false;
  body.resize(len);
  return recv_all(fd, body.data(), len);
}

void frame_and_send(int fd, std::mutex* write_mu, const std::vector<uint8_t>& frame) {
  if (write_mu) {
    std::lock_guard<std::mutex> lock(*write_mu);
    send_all(fd, frame.data(), frame.size());
  } else {
    send_all(fd, frame.data(), frame.size());
  }
}

}  // namespace

std::vector<uint8_t> encode_request_frame(const InferenceRequest& req) {
  std::vector<uint8_t> body;
  body.push_back(kMsgReq);
  append_u32(body, static_cast<uint32_t>(req.env_id));
  append_u64(body, static_cast<uint64_t>(req.step_idx));
  append_u32(body, static_cast<uint32_t>(req.payload.size()));
  body.insert(body.end(), req.payload.begin(), req.payload.end());
  std::vector<uint8_t> frame;
  append_u32(frame, static_cast<uint32_t>(body.size()));
  frame.insert(frame.end(), body.begin(), body.end());
  return frame;
}

std::vector<uint8_t> encode_response_frame(const InferenceResponse& resp) {
  std::vector<uint8_t> body;
  body.push_back(kMsgResp);
  append_u32(body, static_cast<uint32_t>(resp.env_id));
  append_u64(body, static_cast<uint64_t>(resp.step_idx));
  body.push_back(resp.result.mask);
  uint8_t kind = 0;
  if (resp.result.action) kind |= 1;
  if (resp.result.score) kind |= 2;
  body.push_back(kind);
  Action2D a = resp.result.action.value_or(Action2D{});
  append_f64(body, a.longitudinal);
  append_f64(body, a.steer);
  append_f64(body, resp.result.score.value_or(0.0));
  append_f64(body, resp.service_time);
  std::vector<uint8_t> frame;
  append_u32(frame, static_cast<uint32_t>(body.size()));
  frame.insert(frame.end(), body.begin(), body.end());
  return frame;
}

std::vector<uint8_t> encode_ping_frame() {
  std::vector<uint8_t> frame;
  append_u32(frame, 1);
  frame.push_back(kMsgPing);
  return frame;
}

// ---------------------------------------------------------------------------
// SocketServer

SocketServer::SocketServer(const BatcherConfig& cfg, std::shared_ptr<BatchModel> model, int port)
    : service_(cfg, std::move(model), InferenceService::Mode::kThreaded) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw std::runtime_error("transport: socket() failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<uint16_t>(port));
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(listen_fd_);
    throw std::runtime_error("transport: cannot bind port " + std::to_string(port));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  if (::listen(listen_fd_, 16) != 0) {
    ::close(listen_fd_);
    throw std::runtime_error("transport: listen() failed");
  }
}

SocketServer::~SocketServer() { stop(); }

void SocketServer::start() {
  service_.start();
  stop_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
  responder_ = std::thread([this] { response_loop(); });
}

void SocketServer::stop() {
  if (stop_.exchange(true)) return;
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& [env, fd] : env_conn_) (void)env, ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& t : readers_) {
    if (t.joinable()) t.join();
  }
  if (responder_.joinable()) responder_.join();
  service_.shutdown();
}

void SocketServer::accept_loop() {
  while (!stop_) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) break;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    {
      std::lock_guard<std::mutex> lock(mu_);
      write_mu_.emplace(fd, std::make_unique<std::mutex>());
    }
    readers_.emplace_back([this, fd] { connection_loop(fd); });
  }
}

void SocketServer::connection_loop(int fd) {
  std::vector<uint8_t> body;
  while (!stop_ && read_frame(fd, body)) {
    if (body.empty()) break;
    uint8_t type = body[0];
    if (type == kMsgPing) {
      std::mutex* wm;
      {
        std::lock_guard<std::mutex> lock(mu_);
        wm = write_mu_[fd].get();
      }
      frame_and_send(fd, wm, encode_ping_frame());
      continue;
    }
    if (type != kMsgReq || body.size() < 17) continue;
    InferenceRequest req;
    req.env_id = static_cast<int>(read_u32(&body[1]));
    req.step_idx = static_cast<int64_t>(read_u64(&body[5]));
    uint32_t text_len = read_u32(&body[13]);
    if (body.size() < 17 + text_len) continue;
    req.payload.assign(reinterpret_cast<const char*>(&body[17]), text_len);
    {
      std::lock_guard<std::mutex> lock(mu_);
      env_conn_[req.env_id] = fd;
    }
    service_.submit(std::move(req));
  }
  ::close(fd);
}

void SocketServer::response_loop() {
  while (!stop_) {
    bool any = false;
    std::vector<std::pair<int, int>> envs;  // env -> fd
    {
      std::lock_guard<std::mutex> lock(mu_);
      for (const auto& [env, fd] : env_conn_) envs.emplace_back(env, fd);
    }
    for (auto [env, fd] : envs) {
      for (const auto& resp : service_.poll(env)) {
        std::mutex* wm;
        {
          std::lock_guard<std::mutex> lock(mu_);
          auto it = write_mu_.find(fd);
          if (it == write_mu_.end()) continue;
          wm = it->second.get();
        }
        frame_and_send(fd, wm, encode_response_frame(resp));
        any = true;
      }
    }
    if (!any) std::this_thread::sleep_for(std::chrono::microseconds(500));
  }
}

// ---------------------------------------------------------------------------
// SocketClient

SocketClient::SocketClient(const std::string& host, int port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw std::runtime_error("transport: socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw std::runtime_error("transport: bad host " + host);
  }
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd_);
    throw std::runtime_error("transport: cannot connect to " + host + ":" + std::to_string(port));
  }
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  reader_ = std::thread([this] { reader_loop(); });
}

SocketClient::~SocketClient() { close(); }

void SocketClient::close() {
  if (stop_.exchange(true)) return;
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
  }
  if (reader_.joinable()) reader_.join();
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void SocketClient::reader_loop() {
  std::vector<uint8_t> body;
  while (!stop_ && read_frame(fd_, body)) {
    if (body.empty()) continue;
    if (body[0] == kMsgPing) {
      std::lock_guard<std::mutex> lock(mu_);
      ping_pending_ = false;
      ping_cv_.notify_all();
      continue;
    }
    if (body[0] != kMsgResp || body.size() < 1 + 4 + 8 + 2 + 32) continue;
    InferenceResponse resp;
    resp.env_id = static_cast<int>(read_u32(&body[1]));
    resp.step_idx = static_cast<int64_t>(read_u64(&body[5]));
    resp.result.mask = body[13];
    uint8_t kind = body[14];
    double lon = read_f64(&body[15]);
    double steer = read_f64(&body[23]);
    double score = read_f64(&body[31]);
    resp.service_time = read_f64(&body[39]);
    if (kind & 1) resp.result.action = Action2D{lon, steer};
    if (kind & 2) resp.result.score = score;
    uint8_t mask = resp.result.mask;
    int env = resp.env_id;
    std::lock_guard<std::mutex> lock(mu_);
    mailboxes_[env].push_back(std::move(resp));
    stats_.responses++;
    if (mask == 1) stats_.responses_ok++;
  }
}

MicroBatcher::SubmitResult SocketClient::submit(InferenceRequest req) {
  auto frame = encode_request_frame(req);
  {
    std::lock_guard<std::mutex> lock(mu_);
    stats_.submitted++;
    stats_.accepted++;
  }
  if (!send_all(fd_, frame.data(), frame.size())) {
    return MicroBatcher::SubmitResult::kRejected;
  }
  return MicroBatcher::SubmitResult::kAccepted;
}

std::vector<InferenceResponse> SocketClient::poll(int env_id) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = mailboxes_.find(env_id);
  if (it == mailboxes_.end()) return {};
  std::vector<InferenceResponse> out = std::move(it->second);
  it->second.clear();
  stats_.delivered += static_cast<int64_t>(out.size());
  return out;
}

BatcherStats SocketClient::stats() const {
  std::lock_guard<std::mutex> lock(mu_);
  return stats_;
}

bool SocketClient::ping(double timeout_s) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    ping_pending_ = true;
  }
  auto frame = encode_ping_frame();
  if (!send_all(fd_, frame.data(), frame.size())) return false;
  std::unique_lock<std::mutex> lock(mu_);
  return ping_cv_.wait_for(lock, std::chrono::duration<double>(timeout_s),
                           [this] { return !ping_pending_; });
}

}  // namespace guiderl
