#include "guiderl/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace guiderl {

using nlohmann::json;

RouteSpec build_route(const RouteGenConfig& cfg) {
  if (cfg.kind == "loop") {
    return make_loop_route(cfg.straight_len, cfg.corner_radius, cfg.left_handed);
  }
  if (cfg.kind == "straight") {
    return make_straight_route(cfg.length);
  }
  if (cfg.kind == "curvy") {
    return make_curvy_route(cfg.seed, cfg.segments, cfg.seg_len);
  }
  if (cfg.kind == "file") {
    if (cfg.file.empty()) throw std::invalid_argument("route: kind=file needs route.file");
    return RouteSpec::load(cfg.file);
  }
  throw std::invalid_argument("route: unknown kind '" + cfg.kind + "'");
}

namespace {

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

json env_to_json(const EnvConfig& e) {
  return json{{"dt", e.dt},
              {"v_max", e.v_max},
              {"detect_range", e.detect_range},
              {"wheelbase", e.wheelbase},
              {"max_steer_rad", e.max_steer_rad},
              {"accel_max", e.accel_max},
              {"brake_max", e.brake_max},
              {"ego_radius", e.ego_radius},
              {"lane_half_width", e.lane_half_width},
              {"detect_corridor", e.detect_corridor},
              {"k_lateral", e.k_lateral},
              {"k_heading", e.k_heading},
              {"k_smooth", e.k_smooth},
              {"terminal_penalty", e.terminal_penalty},
              {"terminal_success", e.terminal_success},
              {"lat_threshold", e.lat_threshold},
              {"lat_threshold_intersection_scale", e.lat_threshold_intersection_scale},
              {"blocked_speed", e.blocked_speed},
              {"blocked_steps", e.blocked_steps},
              {"max_episode_steps", e.max_episode_steps},
              {"completion_radius", e.completion_radius},
              {"evaluation_mode", e.evaluation_mode},
              {"grid_c", e.grid_c},
              {"grid_h", e.grid_h},
              {"grid_w", e.grid_w},
              {"grid_extent", e.grid_extent},
              {"min_lookahead", e.min_lookahead},
              {"lookahead_gain", e.lookahead_gain},
              {"red_light_s", e.red_light_s},
              {"stop_sign_s", e.stop_sign_s},
              {"zone_half_length", e.zone_half_length},
              {"light_green_s", e.light_green_s},
              {"light_red_s", e.light_red_s},
              {"rule_ahead_range", e.rule_ahead_range},
              {"spawn",
               {{"n_vehicles", e.spawn.n_vehicles},
                {"n_pedestrians", e.spawn.n_pedestrians},
                {"vehicle_speed", e.spawn.vehicle_speed},
                {"lateral_spread", e.spawn.lateral_spread},
                {"on_lane", e.spawn.on_lane},
                {"min_s", e.spawn.min_s}}}};
}

void env_from_json(const json& j, EnvConfig& e) {
  read_if(j, "dt", e.dt);
  read_if(j, "v_max", e.v_max);
  read_if(j, "detect_range", e.detect_range);
  read_if(j, "wheelbase", e.wheelbase);
  read_if(j, "max_steer_rad", e.max_steer_rad);
  read_if(j, "accel_max", e.accel_max);
  read_if(j, "brake_max", e.brake_max);
  read_if(j, "ego_radius", e.ego_radius);
  read_if(j, "lane_half_width", e.lane_half_width);
  read_if(j, "detect_corridor", e.detect_corridor);
  read_if(j, "k_lateral", e.k_lateral);
  read_if(j, "k_heading", e.k_heading);
  read_if(j, "k_smooth", e.k_smooth);
  read_if(j, "terminal_penalty", e.terminal_penalty);
  read_if(j, "terminal_success", e.terminal_success);
  read_if(j, "lat_threshold", e.lat_threshold);
  read_if(j, "lat_threshold_intersection_scale", e.lat_threshold_intersection_scale);
  read_if(j, "blocked_speed", e.blocked_speed);
  read_if(j, "blocked_steps", e.blocked_steps);
  read_if(j, "max_episode_steps", e.max_episode_steps);
  read_if(j, "completion_radius", e.completion_radius);
  read_if(j, "evaluation_mode", e.evaluation_mode);
  read_if(j, "grid_c", e.grid_c);
  read_if(j, "grid_h", e.grid_h);
  read_if(j, "grid_w", e.grid_w);
  read_if(j, "grid_extent", e.grid_extent);
  read_if(j, "min_lookahead", e.min_lookahead);
  read_if(j, "lookahead_gain", e.lookahead_gain);
  read_if(j, "red_light_s", e.red_light_s);
  read_if(j, "stop_sign_s", e.stop_sign_s);
  read_if(j, "zone_half_length", e.zone_half_length);
  read_if(j, "light_green_s", e.light_green_s);
  read_if(j, "light_red_s", e.light_red_s);
  read_if(j, "rule_ahead_range", e.rule_ahead_range);
  if (j.contains("spawn")) {
    const json& s = j.at("spawn");
    read_if(s, "n_vehicles", e.spawn.n_vehicles);
    read_if(s, "n_pedestrians", e.spawn.n_pedestrians);
    read_if(s, "vehicle_speed", e.spawn.vehicle_speed);
    read_if(s, "lateral_spread", e.spawn.lateral_spread);
    read_if(s, "on_lane", e.spawn.on_lane);
    read_if(s, "min_s", e.spawn.min_s);
  }
}

json route_to_json(const RouteGenConfig& r) {
  return json{{"kind", r.kind},           {"straight_len", r.straight_len},
              {"corner_radius", r.corner_radius}, {"left_handed", r.left_handed},
              {"length", r.length},       {"segments", r.segments},
              {"seg_len", r.seg_len},     {"seed", r.seed},
              {"file", r.file}};
}

void route_from_json(const json& j, RouteGenConfig& r) {
  read_if(j, "kind", r.kind);
  read_if(j, "straight_len", r.straight_len);
  read_if(j, "corner_radius", r.corner_radius);
  read_if(j, "left_handed", r.left_handed);
  read_if(j, "length", r.length);
  read_if(j, "segments", r.segments);
  read_if(j, "seg_len", r.seg_len);
  read_if(j, "seed", r.seed);
  read_if(j, "file", r.file);
}

json learner_to_json(const LearnerConfig& l) {
  return json{{"gamma", l.gamma},
              {"batch_size", l.batch_size},
              {"actor_lr", l.actor_lr},
              {"critic_lr", l.critic_lr},
              {"polyak_rho", l.polyak_rho},
              {"noise_start", l.noise_start},
              {"noise_end", l.noise_end},
              {"noise_decay_fraction", l.noise_decay_fraction},
              {"stochastic", l.stochastic},
              {"net",
               {{"conv1_channels", l.net.conv1_channels},
                {"conv2_channels", l.net.conv2_channels},
                {"hidden", l.net.hidden},
                {"log_std_min", l.net.log_std_min},
                {"log_std_max", l.net.log_std_max}}}};
}

void learner_from_json(const json& j, LearnerConfig& l) {
  read_if(j, "gamma", l.gamma);
  read_if(j, "batch_size", l.batch_size);
  read_if(j, "actor_lr", l.actor_lr);
  read_if(j, "critic_lr", l.critic_lr);
  read_if(j, "polyak_rho", l.polyak_rho);
  read_if(j, "noise_start", l.noise_start);
  read_if(j, "noise_end", l.noise_end);
  read_if(j, "noise_decay_fraction", l.noise_decay_fraction);
  read_if(j, "stochastic", l.stochastic);
  if (j.contains("net")) {
    const json& n = j.at("net");
    read_if(n, "conv1_channels", l.net.conv1_channels);
    read_if(n, "conv2_channels", l.net.conv2_channels);
    read_if(n, "hidden", l.net.hidden);
    read_if(n, "log_std_min", l.net.log_std_min);
    read_if(n, "log_std_max", l.net.log_std_max);
  }
}

json guidance_to_json(const GuidanceConfig& g) {
  return json{{"vmr_enabled", g.vmr_enabled},
              {"awag_enabled", g.awag_enabled},
              {"margin_delta", g.margin_delta},
              {"vmr_start", g.vmr_start},
              {"vmr_end", g.vmr_end},
              {"vmr_exponent", g.vmr_exponent},
              {"awag_start", g.awag_start},
              {"awag_end", g.awag_end},
              {"awag_exponent", g.awag_exponent},
              {"awag_decay_enabled", g.awag_decay_enabled},
              {"horizon_steps", g.horizon_steps},
              {"alpha", g.alpha},
              {"eps", g.eps},
              {"beta", g.beta},
              {"w_max", g.w_max}};
}

void guidance_from_json(const json& j, GuidanceConfig& g) {
  read_if(j, "vmr_enabled", g.vmr_enabled);
  read_if(j, "awag_enabled", g.awag_enabled);
  read_if(j, "margin_delta", g.margin_delta);
  read_if(j, "vmr_start", g.vmr_start);
  read_if(j, "vmr_end", g.vmr_end);
  read_if(j, "vmr_exponent", g.vmr_exponent);
  read_if(j, "awag_start", g.awag_start);
  read_if(j, "awag_end", g.awag_end);
  read_if(j, "awag_exponent", g.awag_exponent);
  read_if(j, "awag_decay_enabled", g.awag_decay_enabled);
  read_if(j, "horizon_steps", g.horizon_steps);
  read_if(j, "alpha", g.alpha);
  read_if(j, "eps", g.eps);
  read_if(j, "beta", g.beta);
  read_if(j, "w_max", g.w_max);
}

json batcher_to_json(const BatcherConfig& b) {
  return json{{"b_max", b.b_max},
              {"timeout_s", b.timeout_s},
              {"queue_capacity", b.queue_capacity},
              {"drop_policy",
               b.drop_policy == BatcherConfig::DropPolicy::kReject ? "reject" : "drop-oldest"}};
}

void batcher_from_json(const json& j, BatcherConfig& b) {
  read_if(j, "b_max", b.b_max);
  read_if(j, "timeout_s", b.timeout_s);
  read_if(j, "queue_capacity", b.queue_capacity);
  if (j.contains("drop_policy")) {
    std::string p = j.at("drop_policy").get<std::string>();
    if (p == "reject") {
      b.drop_policy = BatcherConfig::DropPolicy::kReject;
    } else if (p == "drop-oldest") {
      b.drop_policy = BatcherConfig::DropPolicy::kDropOldest;
    } else {
      throw std::invalid_argument("batcher: unknown drop_policy '" + p + "'");
    }
  }
}

json mentor_to_json(const MentorConfig& m) {
  const char* dist = m.latency_dist == MentorConfig::LatencyDist::kConstant    ? "constant"
                     : m.latency_dist == MentorConfig::LatencyDist::kUniform   ? "uniform"
                                                                               : "lognormal";
  return json{{"latency_dist", dist},       {"latency_a", m.latency_a},
              {"latency_b", m.latency_b},   {"failure_rate", m.failure_rate},
              {"noise_scale", m.noise_scale}, {"seed", m.seed}};
}

void mentor_from_json(const json& j, MentorConfig& m) {
  if (j.contains("latency_dist")) {
    std::string d = j.at("latency_dist").get<std::string>();
    if (d == "constant") {
      m.latency_dist = MentorConfig::LatencyDist::kConstant;
    } else if (d == "uniform") {
      m.latency_dist = MentorConfig::LatencyDist::kUniform;
    } else if (d == "lognormal") {
      m.latency_dist = MentorConfig::LatencyDist::kLognormal;
    } else {
      throw std::invalid_argument("mentor: unknown latency_dist '" + d + "'");
    }
  }
  read_if(j, "latency_a", m.latency_a);
  read_if(j, "latency_b", m.latency_b);
  read_if(j, "failure_rate", m.failure_rate);
  read_if(j, "noise_scale", m.noise_scale);
  read_if(j, "seed", m.seed);
}

json shaping_to_json(const ShapingConfig& s) {
  return json{{"enabled", s.enabled},     {"tau_clip", s.tau_clip},
              {"lambda_shape", s.lambda_shape}, {"sigma_e", s.sigma_e},
              {"eps_rms", s.eps_rms},     {"embed_dim", s.embed_dim}};
}

void shaping_from_json(const json& j, ShapingConfig& s) {
  read_if(j, "enabled", s.enabled);
  read_if(j, "tau_clip", s.tau_clip);
  read_if(j, "lambda_shape", s.lambda_shape);
  read_if(j, "sigma_e", s.sigma_e);
  read_if(j, "eps_rms", s.eps_rms);
  read_if(j, "embed_dim", s.embed_dim);
}

json factors_to_json(const InfractionFactors& f) {
  return json{{"collision_pedestrian", f.collision_pedestrian},
              {"collision_vehicle", f.collision_vehicle},
              {"red_light", f.red_light},
              {"stop_sign", f.stop_sign}};
}

void factors_from_json(const json& j, InfractionFactors& f) {
  read_if(j, "collision_pedestrian", f.collision_pedestrian);
  read_if(j, "collision_vehicle", f.collision_vehicle);
  read_if(j, "red_light", f.red_light);
  read_if(j, "stop_sign", f.stop_sign);
}

json run_to_json(const RunConfig& c) {
  json j;
  j["env"] = env_to_json(c.env);
  j["route"] = route_to_json(c.route);
  j["learner"] = learner_to_json(c.learner);
  j["guidance"] = guidance_to_json(c.guidance);
  j["batcher"] = batcher_to_json(c.batcher);
  j["mentor"] = mentor_to_json(c.mentor);
  j["shaping"] = shaping_to_json(c.shaping);
  j["infraction_factors"] = factors_to_json(c.infractions);
  j["seeds"] = c.seeds;
  j["total_steps"] = c.total_steps;
  j["replay_capacity"] = c.replay_capacity;
  j["replay_staleness_horizon"] = c.replay_staleness_horizon;
  j["eval_episodes"] = c.eval_episodes;
  j["out_dir"] = c.out_dir;
  j["n_envs"] = c.n_envs;
  j["deterministic"] = c.deterministic;
  j["learning_starts"] = c.learning_starts;
  j["update_every"] = c.update_every;
  j["log_every"] = c.log_every;
  j["step_wall_s"] = c.step_wall_s;
  j["pending_grace_steps"] = c.pending_grace_steps;
  j["soft_reset_prob"] = c.soft_reset_prob;
  j["soft_reset_return_threshold"] = c.soft_reset_return_threshold;
  j["snapshot_every_updates"] = c.snapshot_every_updates;
  j["transport"] = c.transport;
  j["socket_host"] = c.socket_host;
  j["socket_port"] = c.socket_port;
  return j;
}

RunConfig run_from_json(const json& j) {
  RunConfig c;
  if (j.contains("env")) env_from_json(j.at("env"), c.env);
  if (j.contains("route")) route_from_json(j.at("route"), c.route);
  if (j.contains("learner")) learner_from_json(j.at("learner"), c.learner);
  if (j.contains("guidance")) guidance_from_json(j.at("guidance"), c.guidance);
  if (j.contains("batcher")) batcher_from_json(j.at("batcher"), c.batcher);
  if (j.contains("mentor")) mentor_from_json(j.at("mentor"), c.mentor);
  if (j.contains("shaping")) shaping_from_json(j.at("shaping"), c.shaping);
  if (j.contains("infraction_factors")) factors_from_json(j.at("infraction_factors"), c.infractions);
  read_if(j, "seeds", c.seeds);
  read_if(j, "total_steps", c.total_steps);
  read_if(j, "replay_capacity", c.replay_capacity);
  read_if(j, "replay_staleness_horizon", c.replay_staleness_horizon);
  read_if(j, "eval_episodes", c.eval_episodes);
  read_if(j, "out_dir", c.out_dir);
  read_if(j, "n_envs", c.n_envs);
  read_if(j, "deterministic", c.deterministic);
  read_if(j, "learning_starts", c.learning_starts);
  read_if(j, "update_every", c.update_every);
  read_if(j, "log_every", c.log_every);
  read_if(j, "step_wall_s", c.step_wall_s);
  read_if(j, "pending_grace_steps", c.pending_grace_steps);
  read_if(j, "soft_reset_prob", c.soft_reset_prob);
  read_if(j, "soft_reset_return_threshold", c.soft_reset_return_threshold);
  read_if(j, "snapshot_every_updates", c.snapshot_every_updates);
  read_if(j, "transport", c.transport);
  read_if(j, "socket_host", c.socket_host);
  read_if(j, "socket_port", c.socket_port);
  return c;
}

json parse_override_value(const std::string& text) {
  if (text == "true") return json(true);
  if (text == "false") return json(false);
  try {
    size_t pos = 0;
    if (text.find('.') != std::string::npos || text.find('e') != std::string::npos ||
        text.find('E') != std::string::npos) {
      double d = std::stod(text, &pos);
      if (pos == text.size()) return json(d);
    } else {
      long long v = std::stoll(text, &pos);
      if (pos == text.size()) return json(v);
    }
  } catch (...) {
  }
  return json(text);
}

void apply_override(json& j, const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("override must look like block.field=value: " + spec);
  }
  std::string path = spec.substr(0, eq);
  std::string value = spec.substr(eq + 1);
  json* node = &j;
  size_t start = 0;
  for (;;) {
    size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw std::invalid_argument("bad override path: " + spec);
    if (dot == std::string::npos) {
      (*node)[key] = parse_override_value(value);
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace

void RunConfig::validate() const {
  learner.validate();
  guidance.validate();
  batcher.validate();
  mentor.validate();
  if (total_steps < 0) throw std::invalid_argument("run: total_steps must be >= 0");
  if (replay_capacity < 1) throw std::invalid_argument("run: replay_capacity must be >= 1");
  if (n_envs < 1) throw std::invalid_argument("run: n_envs must be >= 1");
  if (seeds.empty()) throw std::invalid_argument("run: at least one seed required");
  if (update_every < 1) throw std::invalid_argument("run: update_every must be >= 1");
  if (log_every < 1) throw std::invalid_argument("run: log_every must be >= 1");
  if (step_wall_s <= 0) throw std::invalid_argument("run: step_wall_s must be positive");
  if (pending_grace_steps < 0) throw std::invalid_argument("run: pending_grace_steps >= 0");
  if (soft_reset_prob < 0 || soft_reset_prob > 1) {
    throw std::invalid_argument("run: soft_reset_prob must be in [0,1]");
  }
  if (transport != "inproc" && transport != "socket") {
    throw std::invalid_argument("run: transport must be 'inproc' or 'socket'");
  }
  if (transport == "socket" && deterministic) {
    throw std::invalid_argument("run: the socket transport requires deterministic=false");
  }
  if (guidance.awag_enabled && !learner.stochastic) {
    throw std::invalid_argument("run: AWAG requires learner.stochastic=true");
  }
  if (shaping.tau_clip <= 0) throw std::invalid_argument("shaping: tau_clip must be positive");
  if (shaping.lambda_shape < 0) throw std::invalid_argument("shaping: lambda_shape must be >= 0");
  if (shaping.eps_rms <= 0) throw std::invalid_argument("shaping: eps_rms must be positive");
  build_route(route).validate();
}

std::string RunConfig::to_json_string() const { return run_to_json(*this).dump(2) + "\n"; }

RunConfig RunConfig::from_json_string(const std::string& text) {
  json j = json::parse(text);
  return run_from_json(j);
}

RunConfig RunConfig::load_file(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const std::exception& e) {
    throw std::invalid_argument("config: " + path + ": " + e.what());
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig c = run_from_json(j);
  c.validate();
  return c;
}

void RunConfig::save_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write " + path);
  out << to_json_string();
}

RunConfig RunConfig::with_overrides(const RunConfig& base,
                                    const std::vector<std::string>& overrides) {
  json j = json::parse(base.to_json_string());
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig c = run_from_json(j);
  c.validate();
  return c;
}

}  // namespace guiderl
