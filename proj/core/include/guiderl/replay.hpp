#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "guiderl/common.hpp"
#include "guiderl/rng.hpp"

namespace guiderl {

// Replay record: standard transition plus the mentor feedback slot and its
// availability mask. mask == 1 exactly when vlm_feedback holds a value.
struct AugmentedTransition {
  Observation obs;
  Action2D action;
  double reward = 0.0;
  Observation next_obs;
  uint8_t done = 0;
  std::optional<Action2D> vlm_feedback;
  uint8_t mask = 0;

  // Matching key for asynchronous feedback attachment.
  int env_id = 0;
  int64_t step_idx = 0;
};

// Column view of a sampled minibatch; all arrays share one length.
struct SampledBatch {
  std::vector<Observation> obs;
  std::vector<Action2D> action;
  std::vector<double> reward;
  std::vector<Observation> next_obs;
  std::vector<uint8_t> done;
  std::vector<Action2D> vlm_feedback;  // zeros where mask == 0
  std::vector<uint8_t> mask;

  size_t size() const { return reward.size(); }
};

enum class AttachResult { kAttached, kDropped, kDuplicate };

struct ReplayStats {
  int64_t pushed = 0;
  int64_t evicted = 0;
  int64_t attached = 0;
  int64_t dropped_unknown = 0;
  int64_t dropped_stale = 0;
  int64_t duplicates = 0;
};

// Ring buffer with late asynchronous feedback attachment. One writer and one
// reader may operate concurrently; every operation is individually locked.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity, int64_t staleness_horizon = 5000);

  // Stores the transition immediately (possibly with mask = 0) and returns a
  // monotonically increasing slot key. Throws on invariant violations.
  uint64_t push(AugmentedTransition t);

  // Attaches mentor feedback to the resident transition with the given key;
  // evicted/unknown keys and stale responses are dropped, repeats are no-ops.
  AttachResult attach_feedback(int env_id, int64_t step_idx, const Action2D& feedback);

  // Uniform sampling without replacement; deterministic under seed. Throws if
  // fewer than batch_size transitions are resident.
  SampledBatch sample(int batch_size, uint64_t seed) const;

  size_t size() const;
  size_t capacity() const { return capacity_; }
  ReplayStats stats() const;
  double mask_fraction() const;
  // Full-scan invariant check: mask == 1 <=> feedback present, done in {0,1}.
  bool check_invariants() const;
  void scan(const std::function<void(const AugmentedTransition&)>& fn) const;

  // Versioned binary snapshot for resumable runs.
  void save(const std::string& path) const;
  static std::unique_ptr<ReplayBuffer> load(const std::string& path);

 private:
  static uint64_t key_of(int env_id, int64_t step_idx) {
    return (static_cast<uint64_t>(static_cast<uint32_t>(env_id)) << 40) ^
           static_cast<uint64_t>(step_idx);
  }

  size_t capacity_;
  int64_t staleness_horizon_;

  mutable std::mutex mu_;
  std::vector<AugmentedTransition> slots_;
  std::vector<uint64_t> push_id_;  // per slot, for staleness checks
  size_t write_pos_ = 0;
  size_t size_ = 0;
  uint64_t next_id_ = 0;
  std::unordered_map<uint64_t, size_t> key_to_slot_;
  ReplayStats stats_;
};

}  // namespace guiderl
