#include "guiderl/batcher.hpp"

#include <chrono>
#include <cstdio>
#include <stdexcept>

namespace guiderl {

namespace {
double steady_now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}
}  // namespace

// ---------------------------------------------------------------------------
// Prompt serialization

std::string build_prompt(const Observation& obs, const PromptMeta& eta) {
  char buf[kMaxPayloadBytes];
  int n = std::snprintf(
      buf, sizeof(buf),
      "v1|sv=%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f"
      "|spd=%.4f|cmd=%d|red=%d|stop=%d|bin=%d|exe=%d,%d|want=%d%d",
      obs.state_vec[0], obs.state_vec[1], obs.state_vec[2], obs.state_vec[3], obs.state_vec[4],
      obs.state_vec[5], obs.state_vec[6], obs.state_vec[7], obs.state_vec[8], obs.state_vec[9],
      eta.speed, static_cast<int>(eta.command), eta.red_light_state, eta.stop_sign_state,
      static_cast<int>(eta.context.speed_bin), static_cast<int>(eta.executed.longitudinal),
      static_cast<int>(eta.executed.lateral), eta.want_action ? 1 : 0, eta.want_score ? 1 : 0);
  if (n < 0 || static_cast<size_t>(n) >= sizeof(buf)) {
    throw std::runtime_error("build_prompt: payload exceeds the documented cap");
  }
  return std::string(buf, static_cast<size_t>(n));
}

ParsedPrompt parse_prompt(const std::string& payload) {
  ParsedPrompt p;
  int cmd = 0, bin = 0, lon = 0, lat = 0, want_a = 0, want_s = 0;
  int n = std::sscanf(
      payload.c_str(),
      "v1|sv=%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf"
      "|spd=%lf|cmd=%d|red=%d|stop=%d|bin=%d|exe=%d,%d|want=%1d%1d",
      &p.state_vec[0], &p.state_vec[1], &p.state_vec[2], &p.state_vec[3], &p.state_vec[4],
      &p.state_vec[5], &p.state_vec[6], &p.state_vec[7], &p.state_vec[8], &p.state_vec[9],
      &p.meta.speed, &cmd, &p.meta.red_light_state, &p.meta.stop_sign_state, &bin, &lon, &lat,
      &want_a, &want_s);
  if (n != 19) throw std::invalid_argument("parse_prompt: malformed payload");
  p.meta.command = command_from_id(cmd);
  if (bin < 0 || bin >= kNumSpeedBins) throw std::invalid_argument("parse_prompt: bad speed bin");
  p.meta.context = Context{p.meta.command, static_cast<SpeedBin>(bin)};
  if (lon < 0 || lon >= kNumLongitudinal || lat < 0 || lat >= kNumLateral) {
    throw std::invalid_argument("parse_prompt: bad executed-action labels");
  }
  p.meta.executed =
      SemanticAction{static_cast<LongitudinalAction>(lon), static_cast<LateralAction>(lat)};
  p.meta.want_action = want_a != 0;
  p.meta.want_score = want_s != 0;
  return p;
}

// ---------------------------------------------------------------------------
// MicroBatcher

void BatcherConfig::validate() const {
  if (b_max < 1) throw std::invalid_argument("batcher: b_max must be >= 1");
  if (timeout_s <= 0) throw std::invalid_argument("batcher: timeout must be positive");
  if (queue_capacity < 1) throw std::invalid_argument("batcher: queue_capacity must be >= 1");
}

MicroBatcher::MicroBatcher(const BatcherConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  stats_.size_histogram.assign(static_cast<size_t>(cfg_.b_max) + 1, 0);
}

MicroBatcher::SubmitResult MicroBatcher::submit(InferenceRequest req, double now) {
  stats_.submitted++;
  req.submit_time = now;
  if (queue_.size() >= static_cast<size_t>(cfg_.queue_capacity)) {
    if (cfg_.drop_policy == BatcherConfig::DropPolicy::kReject) {
      stats_.rejected++;
      return SubmitResult::kRejected;
    }
    queue_.pop_front();
    stats_.evicted++;
  }
  queue_.push_back(std::move(req));
  stats_.accepted++;
  return SubmitResult::kAccepted;
}

std::optional<std::vector<InferenceRequest>> MicroBatcher::form_batch(double now) {
  if (queue_.empty()) return std::nullopt;
  bool full = queue_.size() >= static_cast<size_t>(cfg_.b_max);
  bool timed_out = now - queue_.front().submit_time >= cfg_.timeout_s;
  if (!full && !timed_out) return std::nullopt;

  size_t take = std::min(queue_.size(), static_cast<size_t>(cfg_.b_max));
  std::vector<InferenceRequest> batch;
  batch.reserve(take);
  for (size_t i = 0; i < take; ++i) {
    stats_.total_wait_s += now - queue_.front().submit_time;
    stats_.dispatched++;
    batch.push_back(std::move(queue_.front()));
    queue_.pop_front();
  }
  stats_.batches_formed++;
  if (!full && timed_out) stats_.timeouts_fired++;
  stats_.size_histogram[take]++;
  return batch;
}

std::optional<double> MicroBatcher::next_deadline() const {
  if (queue_.empty()) return std::nullopt;
  return queue_.front().submit_time + cfg_.timeout_s;
}

double MicroBatcher::full_trigger_time() const {
  if (queue_.size() < static_cast<size_t>(cfg_.b_max)) return 0.0;
  return queue_[static_cast<size_t>(cfg_.b_max) - 1].submit_time;
}

// ---------------------------------------------------------------------------
// InferenceService

InferenceService::InferenceService(const BatcherConfig& cfg, std::shared_ptr<BatchModel> model,
                                   Mode mode)
    : cfg_(cfg), model_(std::move(model)), mode_(mode), batcher_(cfg) {
  if (!model_) throw std::invalid_argument("inference service needs a model");
}

InferenceService::~InferenceService() {
  if (running_) shutdown();
}

double InferenceService::now() const {
  return mode_ == Mode::kSynchronous ? vnow_ : steady_now_s();
}

MicroBatcher::SubmitResult InferenceService::submit(InferenceRequest req) {
  std::unique_lock<std::mutex> lock(mu_);
  double t = mode_ == Mode::kSynchronous ? vnow_ : steady_now_s();
  auto res = batcher_.submit(std::move(req), t);
  if (mode_ == Mode::kThreaded) cv_.notify_one();
  return res;
}

void InferenceService::deliver(std::vector<InferenceResponse> responses) {
  // Caller holds mu_.
  constexpr int64_t kDedupHorizon = 16384;
  for (auto& r : responses) {
    EnvMailbox& box = mailboxes_[r.env_id];
    if (box.seen_steps.count(r.step_idx)) {
      batcher_.mutable_stats().duplicates_suppressed++;
      continue;
    }
    if (box.max_step_seen - r.step_idx > kDedupHorizon) {
      batcher_.mutable_stats().dropped_late++;
      continue;
    }
    box.seen_steps.insert(r.step_idx);
    box.max_step_seen = std::max(box.max_step_seen, r.step_idx);
    // Prune the dedup set so long runs stay bounded.
    if (box.seen_steps.size() > 2 * kDedupHorizon) {
      for (auto it = box.seen_steps.begin(); it != box.seen_steps.end();) {
        if (box.max_step_seen - *it > kDedupHorizon) {
          it = box.seen_steps.erase(it);
        } else {
          ++it;
        }
      }
    }
    box.ready.push_back(std::move(r));
  }
}

std::vector<InferenceResponse> InferenceService::poll(int env_id) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = mailboxes_.find(env_id);
  if (it == mailboxes_.end()) return {};
  std::vector<InferenceResponse> out(it->second.ready.begin(), it->second.ready.end());
  it->second.ready.clear();
  batcher_.mutable_stats().delivered += static_cast<int64_t>(out.size());
  return out;
}

void InferenceService::execute_batch(std::vector<InferenceRequest> batch, double dispatch_time) {
  // Caller holds mu_ in synchronous mode; threaded mode calls it unlocked and
  // re-locks for delivery.
  double exec = 0.0;
  for (const auto& req : batch) exec = std::max(exec, model_->latency_s(req));
  double ready_time = dispatch_time + exec;
  std::vector<InferenceResponse> responses;
  responses.reserve(batch.size());
  for (const auto& req : batch) {
    InferenceResponse resp;
    resp.env_id = req.env_id;
    resp.step_idx = req.step_idx;
    resp.service_time = ready_time - req.submit_time;
    try {
      resp.result = model_->infer(req);
    } catch (const std::exception&) {
      resp.result = InferenceResult{};  // availability mask stays 0
    }
    batcher_.mutable_stats().responses++;
    if (resp.result.mask == 1) batcher_.mutable_stats().responses_ok++;
    responses.push_back(std::move(resp));
  }
  deliver(std::move(responses));
}

void InferenceService::pump(double now_s) {
  if (mode_ != Mode::kSynchronous) throw std::logic_error("pump() is for the synchronous mode");
  std::lock_guard<std::mutex> lock(mu_);
  vnow_ = std::max(vnow_, now_s);
  for (;;) {
    if (busy_) {
      if (busy_until_ > vnow_ + 1e-12) break;  // model still running
      executor_free_t_ = busy_until_;
      execute_batch(std::move(inflight_), inflight_dispatch_);
      inflight_.clear();
      busy_ = false;
    }
    if (batcher_.depth() == 0) break;
    // Reconstruct the moment the dispatch trigger fired so timeout semantics
    // do not depend on pump cadence; a serial executor also cannot start a
    // batch before the previous invocation finished.
    double trigger;
    if (batcher_.depth() >= static_cast<size_t>(cfg_.b_max)) {
      trigger = batcher_.full_trigger_time();
    } else {
      auto deadline = batcher_.next_deadline();
      if (!deadline || *deadline > vnow_ + 1e-12) break;
      trigger = *deadline;
    }
    double dispatch_t = std::max(trigger, executor_free_t_);
    if (dispatch_t > vnow_ + 1e-12) break;
    auto batch = batcher_.form_batch(dispatch_t);
    if (!batch) break;
    double exec = 0.0;
    for (const auto& req : *batch) exec = std::max(exec, model_->latency_s(req));
    busy_ = true;
    inflight_ = std::move(*batch);
    inflight_dispatch_ = dispatch_t;
    busy_until_ = dispatch_t + exec;
  }
}

void InferenceService::start() {
  if (mode_ != Mode::kThreaded) throw std::logic_error("start() is for the threaded mode");
  std::lock_guard<std::mutex> lock(mu_);
  if (running_) return;
  stop_ = false;
  running_ = true;
  server_ = std::thread([this] { run_serve_loop(); });
}

void InferenceService::run_serve_loop() {
  std::unique_lock<std::mutex> lock(mu_);
  while (!stop_) {
    double now = steady_now_s();
    auto batch = batcher_.form_batch(now);
    if (!batch) {
      auto deadline = batcher_.next_deadline();
      if (deadline) {
        cv_.wait_for(lock, std::chrono::duration<double>(std::max(0.0, *deadline - now)));
      } else {
        cv_.wait_for(lock, std::chrono::milliseconds(50));
      }
      continue;
    }
    lock.unlock();
    // Injected latency: the batch runs "in parallel", so the invocation costs
    // the slowest item.
    double exec = 0.0;
    for (const auto& req : *batch) exec = std::max(exec, model_->latency_s(req));
    if (exec > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(exec));
    }
    lock.lock();
    execute_batch(std::move(*batch), now);
  }
  // Drain: everything still queued is dropped late.
  while (batcher_.depth() > 0) {
    auto rest = batcher_.form_batch(1e300);
    if (!rest) break;
    batcher_.mutable_stats().dropped_late += static_cast<int64_t>(rest->size());
    batcher_.mutable_stats().dispatched -= static_cast<int64_t>(rest->size());
    batcher_.mutable_stats().batches_formed--;
    batcher_.mutable_stats().size_histogram[rest->size()]--;
  }
}

void InferenceService::shutdown() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (!running_) return;
    stop_ = true;
  }
  cv_.notify_all();
  server_.join();
  running_ = false;
}

BatcherStats InferenceService::stats() const {
  std::lock_guard<std::mutex> lock(mu_);
  return batcher_.stats();
}

}  // namespace guiderl
