#pragma once

#include <string>
#include <vector>

#include "guiderl/batcher.hpp"
#include "guiderl/env.hpp"
#include "guiderl/guidance.hpp"
#include "guiderl/learner.hpp"
#include "guiderl/mentor.hpp"
#include "guiderl/shaping.hpp"

namespace guiderl {

struct RouteGenConfig {
  std::string kind = "loop";  // loop | straight | curvy | file
  double straight_len = 60.0;
  double corner_radius = 12.0;
  bool left_handed = false;
  double length = 200.0;  // straight routes
  int segments = 6;       // curvy routes
  double seg_len = 30.0;
  uint64_t seed = 0;
  std::string file;
};

RouteSpec build_route(const RouteGenConfig& cfg);

// Multiplicative per-infraction discount factors (leaderboard-style).
struct InfractionFactors {
  double collision_pedestrian = 0.5;
  double collision_vehicle = 0.6;
  double red_light = 0.7;
  double stop_sign = 0.8;
};

struct RunConfig {
  EnvConfig env;
  RouteGenConfig route;
  LearnerConfig learner;
  GuidanceConfig guidance;
  BatcherConfig batcher;
  MentorConfig mentor;
  ShapingConfig shaping;
  InfractionFactors infractions;

  std::vector<uint64_t> seeds = {1};
  int64_t total_steps = 20000;
  int64_t replay_capacity = 200000;
  int64_t replay_staleness_horizon = 5000;
  int eval_episodes = 10;
  std::string out_dir = "runs/latest";
  int n_envs = 2;
  bool deterministic = true;  // single-threaded virtual-time mode
  int64_t learning_starts = 1000;
  int update_every = 1;
  int log_every = 1;           // CSV row every N sweeps
  double step_wall_s = 0.002;  // virtual seconds one rollout sweep costs
  int pending_grace_steps = 24;
  double soft_reset_prob = 0.25;
  double soft_reset_return_threshold = 100.0;
  int snapshot_every_updates = 50;  // threaded mode: actor snapshot cadence

  std::string transport = "inproc";  // inproc | socket
  std::string socket_host = "127.0.0.1";
  int socket_port = 7601;

  bool want_action_feedback() const {
    return guidance.vmr_enabled || guidance.awag_enabled;
  }
  bool want_score_feedback() const { return shaping.enabled; }
  bool mentor_enabled() const { return want_action_feedback() || want_score_feedback(); }

  void validate() const;  // throws std::invalid_argument with field context

  std::string to_json_string() const;
  static RunConfig from_json_string(const std::string& text);
  static RunConfig load_file(const std::string& path,
                             const std::vector<std::string>& overrides = {});
  void save_file(const std::string& path) const;
  // Apply "block.field=value" style overrides on top of this config.
  static RunConfig with_overrides(const RunConfig& base, const std::vector<std::string>& overrides);
};

}  // namespace guiderl
