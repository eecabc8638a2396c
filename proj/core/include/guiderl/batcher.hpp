#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "guiderl/common.hpp"
#include "guiderl/shaping.hpp"

namespace guiderl {

// Serialized prompt record: compact observation summary plus structured
// metadata. The wire form is a deterministic single-line string.
struct PromptMeta {
  double speed = 0.0;
  Command command = Command::kFollowLane;
  int red_light_state = 0;
  int stop_sign_state = 0;
  Context context;
  SemanticAction executed;     // agent action labels, used for shaping margins
  bool want_action = true;     // mentor action suggestion requested
  bool want_score = false;     // contrastive alignment score requested
};

inline constexpr size_t kMaxPayloadBytes = 256;

// Deterministic serialization of (observation summary, metadata); byte-stable
// across runs. The result never exceeds kMaxPayloadBytes.
std::string build_prompt(const Observation& obs, const PromptMeta& eta);

struct ParsedPrompt {
  std::array<double, kStateDim> state_vec{};
  PromptMeta meta;
};
ParsedPrompt parse_prompt(const std::string& payload);  // throws on malformed input

struct InferenceRequest {
  int env_id = 0;
  int64_t step_idx = 0;
  std::string payload;
  double submit_time = 0.0;  // seconds on the service clock
};

// Model output for one request. mask == 0 means no usable feedback.
struct InferenceResult {
  uint8_t mask = 0;
  std::optional<Action2D> action;
  std::optional<double> score;
};

struct InferenceResponse {
  int env_id = 0;
  int64_t step_idx = 0;
  InferenceResult result;
  double service_time = 0.0;  // submit -> response available
};

struct BatcherConfig {
  int b_max = 8;
  double timeout_s = 0.020;
  int queue_capacity = 256;
  enum class DropPolicy { kReject, kDropOldest };
  DropPolicy drop_policy = DropPolicy::kDropOldest;

  void validate() const;
};

struct BatcherStats {
  int64_t submitted = 0;
  int64_t accepted = 0;
  int64_t rejected = 0;        // full queue under the reject policy
  int64_t evicted = 0;         // drop-oldest victims
  int64_t batches_formed = 0;
  int64_t timeouts_fired = 0;  // dispatches triggered by the timeout
  std::vector<int64_t> size_histogram;  // index = batch size, 0..B_max
  double total_wait_s = 0.0;
  int64_t dispatched = 0;
  int64_t responses = 0;      // produced by the model
  int64_t responses_ok = 0;   // produced with mask == 1
  int64_t delivered = 0;      // handed out through poll()
  int64_t duplicates_suppressed = 0;
  int64_t dropped_late = 0;   // unresolved at shutdown or past the dedup horizon

  double mean_wait_s() const { return dispatched > 0 ? total_wait_s / dispatched : 0.0; }
  // Fraction of submitted requests that came back with usable feedback.
  double availability() const {
    return submitted > 0 ? static_cast<double>(responses_ok) / static_cast<double>(submitted)
                         : 1.0;
  }
};

// Pluggable model executed by the serve loop. latency_s must be a pure
// function of the request (seeded draws) so that injected latency never
// depends on wall-clock state; infer may throw per item.
class BatchModel {
 public:
  virtual ~BatchModel() = default;
  virtual double latency_s(const InferenceRequest& req) = 0;
  virtual InferenceResult infer(const InferenceRequest& req) = 0;
};

// Single-consumer micro-batch queue: dispatch when depth reaches b_max or the
// oldest request has waited timeout_s. Not thread-safe by itself; the service
// wraps it with a lock.
class MicroBatcher {
 public:
  explicit MicroBatcher(const BatcherConfig& cfg);

  enum class SubmitResult { kAccepted, kRejected };
  SubmitResult submit(InferenceRequest req, double now);

  // Oldest-first batch per the (B_max, timeout) rule, or nothing if neither
  // trigger holds.
  std::optional<std::vector<InferenceRequest>> form_batch(double now);

  // Deadline at which the head request times out, if any.
  std::optional<double> next_deadline() const;
  // Moment the queue reached b_max (submit time of the b_max-th request);
  // only meaningful when depth() >= b_max.
  double full_trigger_time() const;
  size_t depth() const { return queue_.size(); }
  const BatcherStats& stats() const { return stats_; }
  BatcherStats& mutable_stats() { return stats_; }

 private:
  BatcherConfig cfg_;
  std::deque<InferenceRequest> queue_;
  BatcherStats stats_;
};

// Client-side view of the inference service; implemented in-process by
// InferenceService and remotely by the socket transport client.
class InferenceChannel {
 public:
  virtual ~InferenceChannel() = default;
  virtual MicroBatcher::SubmitResult submit(InferenceRequest req) = 0;
  virtual std::vector<InferenceResponse> poll(int env_id) = 0;
  virtual BatcherStats stats() const = 0;
};

// Asynchronous batched inference service. Two deployments:
//  - kSynchronous: no threads; the owner advances a virtual clock via pump().
//    Fully deterministic, used by the single-threaded training mode.
//  - kThreaded: a serve-loop thread consumes the queue against the steady
//    clock; submit/poll are safe from any rollout thread.
class InferenceService final : public InferenceChannel {
 public:
  enum class Mode { kSynchronous, kThreaded };

  InferenceService(const BatcherConfig& cfg, std::shared_ptr<BatchModel> model, Mode mode);
  ~InferenceService() override;

  InferenceService(const InferenceService&) = delete;
  InferenceService& operator=(const InferenceService&) = delete;

  // Non-blocking enqueue; applies the drop policy on a full queue.
  MicroBatcher::SubmitResult submit(InferenceRequest req) override;

  // All pending responses for the env; each response is delivered at most
  // once. Never blocks.
  std::vector<InferenceResponse> poll(int env_id) override;

  // Synchronous mode only: advance virtual time and execute due batches.
  void pump(double now_s);
  double now() const;

  // Threaded mode lifecycle.
  void start();
  void shutdown();

  BatcherStats stats() const override;

 private:
  struct EnvMailbox {
    std::deque<InferenceResponse> ready;
    std::unordered_set<int64_t> seen_steps;
    int64_t max_step_seen = -1;
  };

  void deliver(std::vector<InferenceResponse> responses);
  void run_serve_loop();
  void execute_batch(std::vector<InferenceRequest> batch, double dispatch_time);

  BatcherConfig cfg_;
  std::shared_ptr<BatchModel> model_;
  Mode mode_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  MicroBatcher batcher_;
  std::unordered_map<int, EnvMailbox> mailboxes_;

  // Synchronous-mode virtual executor state (one batch in flight).
  double vnow_ = 0.0;
  bool busy_ = false;
  double busy_until_ = 0.0;
  double executor_free_t_ = 0.0;
  std::vector<InferenceRequest> inflight_;
  double inflight_dispatch_ = 0.0;

  // Threaded mode.
  std::thread server_;
  bool running_ = false;
  bool stop_ = false;
};

}  // namespace guiderl
