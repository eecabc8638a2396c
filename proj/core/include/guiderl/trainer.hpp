#pragma once

#include <string>
#include <utility>
#include <vector>

#include "guiderl/config.hpp"
#include "guiderl/mentor.hpp"
#include "guiderl/metrics.hpp"
#include "guiderl/replay.hpp"

namespace guiderl {

struct TrainSummary {
  std::string run_dir;
  int64_t steps = 0;
  int episodes = 0;
  // (global env step at episode end, episode return)
  std::vector<std::pair<int64_t, double>> episode_returns;
  double availability = 1.0;
  double mask_fraction = 0.0;
  BatcherStats batcher;
  ReplayStats replay;
  // Per-CSV-row replay-buffer margin trace (empty when shaping is off).
  std::vector<std::pair<int64_t, double>> margin_trace;
  bool failed = false;
};

// One seeded training run into <out_dir>/seed_<seed>/; writes train.csv,
// episodes.csv, config.json, manifest.json and ckpt_final.bin.
TrainSummary train_run(const RunConfig& cfg, uint64_t seed);

// All seeds in the config, sequentially.
std::vector<TrainSummary> train(const RunConfig& cfg);

// Evaluation episodes under zero exploration noise with evaluation-mode
// termination. Writes metrics.json + eval_episodes.csv next to the
// checkpoint unless out_dir is empty.
AggregateMetrics evaluate_checkpoint(const std::string& checkpoint_path, const RunConfig& cfg,
                                     uint64_t seed, const std::string& out_dir = "");

// Scripted-expert rollout, used for mentor sanity checks and for calibrating
// learning-curve thresholds.
EpisodeRecord run_expert_episode(const RunConfig& cfg, const RouteSpec& route, uint64_t seed,
                                 bool evaluation_mode);

struct BenchReport {
  double policy_forward_fps = 0.0;     // single-observation actor inference
  double mentor_roundtrip_fps = 0.0;   // through the threaded batcher
  double roundtrip_latency_mean_s = 0.0;
  double roundtrip_latency_p95_s = 0.0;
  int max_batch_size = 0;
  double rollout_fps_plain = 0.0;      // env stepping without inference
  double rollout_fps_infer = 0.0;      // env stepping with submit/poll attached
  BatcherStats batcher;

  std::string to_table() const;
};

// Latency/throughput measurements; writes bench.csv into cfg.out_dir when
// write_csv is set.
BenchReport bench(const RunConfig& cfg, bool write_csv = false);

}  // namespace guiderl
