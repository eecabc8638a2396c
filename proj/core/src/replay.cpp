#include "guiderl/replay.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

namespace guiderl {

ReplayBuffer::ReplayBuffer(size_t capacity, int64_t staleness_horizon)
    : capacity_(capacity), staleness_horizon_(staleness_horizon) {
  if (capacity_ == 0) throw std::invalid_argument("replay: capacity must be positive");
  slots_.resize(capacity_);
  push_id_.resize(capacity_, 0);
}

uint64_t ReplayBuffer::push(AugmentedTransition t) {
  if (t.done > 1) throw std::invalid_argument("replay: done must be 0 or 1");
  if ((t.mask == 1) != t.vlm_feedback.has_value()) {
    throw std::invalid_argument("replay: mask must be 1 exactly when feedback is present");
  }
  std::lock_guard<std::mutex> lock(mu_);
  if (size_ == capacity_) {
    // Evicting: drop the stale key-table entry of the overwritten slot.
    const AugmentedTransition& old = slots_[write_pos_];
    auto it = key_to_slot_.find(key_of(old.env_id, old.step_idx));
    if (it != key_to_slot_.end() && it->second == write_pos_) key_to_slot_.erase(it);
    stats_.evicted++;
  }
  uint64_t id = next_id_++;
  key_to_slot_[key_of(t.env_id, t.step_idx)] = write_pos_;
  push_id_[write_pos_] = id;
  slots_[write_pos_] = std::move(t);
  write_pos_ = (write_pos_ + 1) % capacity_;
  if (size_ < capacity_) ++size_;
  stats_.pushed++;
  return id;
}

AttachResult ReplayBuffer::attach_feedback(int env_id, int64_t step_idx,
                                           const Action2D& feedback) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = key_to_slot_.find(key_of(env_id, step_idx));
  if (it == key_to_slot_.end()) {
    stats_.dropped_unknown++;
    return AttachResult::kDropped;
  }
  size_t slot = it->second;
  AugmentedTransition& t = slots_[slot];
  if (t.env_id != env_id || t.step_idx != step_idx) {  // slot was recycled
    stats_.dropped_unknown++;
    return AttachResult::kDropped;
  }
  if (staleness_horizon_ > 0 &&
      static_cast<int64_t>(next_id_ - push_id_[slot]) > staleness_horizon_) {
    stats_.dropped_stale++;
    return AttachResult::kDropped;
  }
  if (t.mask == 1) {
    stats_.duplicates++;
    return AttachResult::kDuplicate;
  }
  t.vlm_feedback = feedback.clamped();
  t.mask = 1;
  stats_.attached++;
  return AttachResult::kAttached;
}

SampledBatch ReplayBuffer::sample(int batch_size, uint64_t seed) const {
  std::lock_guard<std::mutex> lock(mu_);
  if (batch_size <= 0) throw std::invalid_argument("replay: batch_size must be positive");
  if (static_cast<size_t>(batch_size) > size_) {
    throw std::invalid_argument("replay: buffer holds " + std::to_string(size_) +
                                " transitions, cannot sample " + std::to_string(batch_size));
  }
  Rng rng(Rng::mix(seed, 0x7265706cULL));
  std::vector<size_t> picks;
  picks.reserve(batch_size);
  if (static_cast<size_t>(batch_size) * 3 < size_) {
    std::unordered_set<size_t> seen;
    while (picks.size() < static_cast<size_t>(batch_size)) {
      size_t idx = static_cast<size_t>(rng.below(size_));
      if (seen.insert(idx).second) picks.push_back(idx);
    }
  } else {
    std::vector<size_t> all(size_);
    for (size_t i = 0; i < size_; ++i) all[i] = i;
    for (int i = 0; i < batch_size; ++i) {
      size_t j = i + static_cast<size_t>(rng.below(size_ - i));
      std::swap(all[i], all[j]);
      picks.push_back(all[i]);
    }
  }
  SampledBatch b;
  b.obs.reserve(batch_size);
  b.next_obs.reserve(batch_size);
  for (size_t idx : picks) {
    const AugmentedTransition& t = slots_[idx];
    b.obs.push_back(t.obs);
    b.action.push_back(t.action);
    b.reward.push_back(t.reward);
    b.next_obs.push_back(t.next_obs);
    b.done.push_back(t.done);
    b.vlm_feedback.push_back(t.vlm_feedback.value_or(Action2D{}));
    b.mask.push_back(t.mask);
  }
  return b;
}

size_t ReplayBuffer::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return size_;
}

ReplayStats ReplayBuffer::stats() const {
  std::lock_guard<std::mutex> lock(mu_);
  return stats_;
}

double ReplayBuffer::mask_fraction() const {
  std::lock_guard<std::mutex> lock(mu_);
  if (size_ == 0) return 0.0;
  int64_t masked = 0;
  for (size_t i = 0; i < size_; ++i) masked += slots_[i].mask;
  return static_cast<double>(masked) / static_cast<double>(size_);
}

bool ReplayBuffer::check_invariants() const {
  std::lock_guard<std::mutex> lock(mu_);
  for (size_t i = 0; i < size_; ++i) {
    const AugmentedTransition& t = slots_[i];
    if ((t.mask == 1) != t.vlm_feedback.has_value()) return false;
    if (t.done > 1) return false;
  }
  return true;
}

void ReplayBuffer::scan(const std::function<void(const AugmentedTransition&)>& fn) const {
  std::lock_guard<std::mutex> lock(mu_);
  for (size_t i = 0; i < size_; ++i) fn(slots_[i]);
}

// ---------------------------------------------------------------------------
// Snapshot

namespace {
constexpr char kMagic[8] = {'G', 'R', 'L', 'R', 'B', '0', '0', '1'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("replay snapshot: truncated file");
  return v;
}

void put_obs(std::ostream& out, const Observation& o) {
  put<int32_t>(out, o.grid_c);
  put<int32_t>(out, o.grid_h);
  put<int32_t>(out, o.grid_w);
  out.write(reinterpret_cast<const char*>(o.grid.data()),
            static_cast<std::streamsize>(o.grid.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(o.state_vec.data()),
            static_cast<std::streamsize>(o.state_vec.size() * sizeof(double)));
}

Observation get_obs(std::istream& in) {
  Observation o;
  o.grid_c = get<int32_t>(in);
  o.grid_h = get<int32_t>(in);
  o.grid_w = get<int32_t>(in);
  o.grid.resize(static_cast<size_t>(o.grid_size()));
  in.read(reinterpret_cast<char*>(o.grid.data()),
          static_cast<std::streamsize>(o.grid.size() * sizeof(float)));
  in.read(reinterpret_cast<char*>(o.state_vec.data()),
          static_cast<std::streamsize>(o.state_vec.size() * sizeof(double)));
  if (!in) throw std::runtime_error("replay snapshot: truncated observation");
  return o;
}
}  // namespace

void ReplayBuffer::save(const std::string& path) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("replay snapshot: cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  put<uint64_t>(out, capacity_);
  put<uint64_t>(out, size_);
  put<uint64_t>(out, write_pos_);
  put<uint64_t>(out, next_id_);
  put<int64_t>(out, staleness_horizon_);
  for (size_t i = 0; i < size_; ++i) {
    const AugmentedTransition& t = slots_[i];
    put_obs(out, t.obs);
    put<double>(out, t.action.longitudinal);
    put<double>(out, t.action.steer);
    put<double>(out, t.reward);
    put_obs(out, t.next_obs);
    put<uint8_t>(out, t.done);
    put<uint8_t>(out, t.mask);
    Action2D fb = t.vlm_feedback.value_or(Action2D{});
    put<double>(out, fb.longitudinal);
    put<double>(out, fb.steer);
    put<int32_t>(out, t.env_id);
    put<int64_t>(out, t.step_idx);
    put<uint64_t>(out, push_id_[i]);
  }
}

std::unique_ptr<ReplayBuffer> ReplayBuffer::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("replay snapshot: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("replay snapshot: bad header in " + path);
  }
  uint64_t capacity = get<uint64_t>(in);
  uint64_t size = get<uint64_t>(in);
  uint64_t write_pos = get<uint64_t>(in);
  uint64_t next_id = get<uint64_t>(in);
  int64_t horizon = get<int64_t>(in);
  auto rb_ptr = std::make_unique<ReplayBuffer>(capacity, horizon);
  ReplayBuffer& rb = *rb_ptr;
  rb.size_ = size;
  rb.write_pos_ = write_pos;
  rb.next_id_ = next_id;
  for (size_t i = 0; i < size; ++i) {
    AugmentedTransition t;
    t.obs = get_obs(in);
    t.action.longitudinal = get<double>(in);
    t.action.steer = get<double>(in);
    t.reward = get<double>(in);
    t.next_obs = get_obs(in);
    t.done = get<uint8_t>(in);
    t.mask = get<uint8_t>(in);
    Action2D fb;
    fb.longitudinal = get<double>(in);
    fb.steer = get<double>(in);
    if (t.mask == 1) t.vlm_feedback = fb;
    t.env_id = get<int32_t>(in);
    t.step_idx = get<int64_t>(in);
    rb.push_id_[i] = get<uint64_t>(in);
    rb.key_to_slot_[key_of(t.env_id, t.step_idx)] = i;
    rb.slots_[i] = std::move(t);
  }
  rb.stats_.pushed = static_cast<int64_t>(next_id);
  return rb_ptr;
}

}  // namespace guiderl
