#pragma once

#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "guiderl/batcher.hpp"

namespace guiderl {

// Length-prefixed binary socket transport for running the inference server as
// a separate process. All integers little-endian.
//
//   frame := u32 body_len, body
//   body  := u8 type, payload
//
//   REQ  (type 1): u32 env_id, u64 step_idx, u32 text_len, text bytes
//   RESP (type 2): u32 env_id, u64 step_idx, u8 mask, u8 kind,
//                  f64 longitudinal, f64 steer, f64 score, f64 service_time
//                  (kind bit 0: action fields valid, bit 1: score valid)
//   PING (type 3): empty payload; the server echoes it back
inline constexpr uint8_t kMsgReq = 1;
inline constexpr uint8_t kMsgResp = 2;
inline constexpr uint8_t kMsgPing = 3;

std::vector<uint8_t> encode_request_frame(const InferenceRequest& req);
std::vector<uint8_t> encode_response_frame(const InferenceResponse& resp);
std::vector<uint8_t> encode_ping_frame();

// Standalone inference server: accepts connections, feeds REQ frames into a
// threaded InferenceService and pushes RESP frames back on the connection the
// request arrived on.
class SocketServer {
 public:
  SocketServer(const BatcherConfig& cfg, std::shared_ptr<BatchModel> model, int port);
  ~SocketServer();

  void start();
  void stop();
  int port() const { return port_; }
  BatcherStats stats() const { return service_.stats(); }

 private:
  void accept_loop();
  void connection_loop(int fd);
  void response_loop();

  InferenceService service_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::thread acceptor_;
  std::thread responder_;
  std::vector<std::thread> readers_;
  std::atomic<bool> stop_{false};

  std::mutex mu_;
  std::unordered_map<int, int> env_conn_;  // env_id -> connection fd
  std::unordered_map<int, std::unique_ptr<std::mutex>> write_mu_;  // per fd
};

// Client side of the socket transport; satisfies the same channel contract as
// the in-process service.
class SocketClient final : public InferenceChannel {
 public:
  SocketClient(const std::string& host, int port);
  ~SocketClient() override;

  MicroBatcher::SubmitResult submit(InferenceRequest req) override;
  std::vector<InferenceResponse> poll(int env_id) override;
  BatcherStats stats() const override;
  bool ping(double timeout_s = 1.0);
  void close();

 private:
  void reader_loop();

  int fd_ = -1;
  std::thread reader_;
  std::atomic<bool> stop_{false};

  mutable std::mutex mu_;
  std::unordered_map<int, std::vector<InferenceResponse>> mailboxes_;
  BatcherStats stats_;
  bool ping_pending_ = false;
  std::condition_variable ping_cv_;
};

}  // namespace guiderl
