#include "guiderl/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "guiderl/shaping.hpp"

namespace guiderl {

const char* command_name(Command c) {
  switch (c) {
    case Command::kTurnLeft: return "turn-left";
    case Command::kTurnRight: return "turn-right";
    case Command::kGoStraight: return "go-straight";
    case Command::kFollowLane: return "follow-lane";
    case Command::kChangeLeft: return "change-left";
    case Command::kChangeRight: return "change-right";
  }
  return "unknown";
}

const char* command_phrase(Command c) {
  switch (c) {
    case Command::kTurnLeft: return "turn left at the intersection";
    case Command::kTurnRight: return "turn right at the intersection";
    case Command::kGoStraight: return "go straight at the intersection";
    case Command::kFollowLane: return "follow the current lane";
    case Command::kChangeLeft: return "change to the left lane";
    case Command::kChangeRight: return "change to the right lane";
  }
  return "unknown";
}

Command command_from_id(int id) {
  if (id < 0 || id >= kNumCommands) {
    throw std::invalid_argument("unknown command id " + std::to_string(id));
  }
  return static_cast<Command>(id);
}

const char* termination_name(TerminationEvent e) {
  switch (e) {
    case TerminationEvent::kNone: return "none";
    case TerminationEvent::kBlocked: return "blocked";
    case TerminationEvent::kRouteDeviation: return "route_deviation";
    case TerminationEvent::kRedLight: return "red_light";
    case TerminationEvent::kStopSign: return "stop_sign";
    case TerminationEvent::kCollision: return "collision";
    case TerminationEvent::kRouteCompleted: return "route_completed";
    case TerminationEvent::kTimeout: return "timeout";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// RouteSpec

double RouteSpec::total_length() const {
  double len = 0.0;
  const int n = static_cast<int>(waypoints.size());
  for (int i = 0; i + 1 < n; ++i) len += (waypoints[i + 1] - waypoints[i]).norm();
  if (loop && n >= 2) len += (waypoints[0] - waypoints[n - 1]).norm();
  return len;
}

void RouteSpec::validate() const {
  if (waypoints.size() < 2) {
    throw std::invalid_argument("route needs at least 2 waypoints, got " +
                                std::to_string(waypoints.size()));
  }
  if (static_cast<int>(commands.size()) != segment_count()) {
    throw std::invalid_argument("route has " + std::to_string(segment_count()) +
                                " segments but " + std::to_string(commands.size()) +
                                " commands");
  }
  const int n = static_cast<int>(waypoints.size());
  for (int i = 0; i < segment_count(); ++i) {
    const Vec2& a = waypoints[i];
    const Vec2& b = waypoints[(i + 1) % n];
    if ((b - a).norm() < 1e-9) {
      throw std::invalid_argument("route segment " + std::to_string(i) +
                                  " has zero length");
    }
  }
  if (total_length() <= 0.0) throw std::invalid_argument("route has zero total length");
}

RouteSpec RouteSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open route file: " + path);
  RouteSpec r;
  std::vector<int> cmd_ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    double x = 0.0, y = 0.0;
    int cmd = 0;
    if (std::sscanf(line.c_str(), "%lf %lf %d", &x, &y, &cmd) != 3) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 'x y command-id'");
    }
    r.waypoints.push_back({x, y});
    cmd_ids.push_back(cmd);
  }
  // Per-segment command comes from the segment's first waypoint line.
  for (size_t i = 0; i + 1 < cmd_ids.size(); ++i) {
    r.commands.push_back(command_from_id(cmd_ids[i]));
  }
  r.validate();
  return r;
}

void RouteSpec::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write route file: " + path);
  for (size_t i = 0; i < waypoints.size(); ++i) {
    int cmd = static_cast<int>(i < commands.size() ? commands[i] : Command::kFollowLane);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%.6f %.6f %d\n", waypoints[i].x, waypoints[i].y, cmd);
    out << buf;
  }
}

RouteSpec make_straight_route(double length, double spacing, Command cmd) {
  RouteSpec r;
  int n = std::max(1, static_cast<int>(std::ceil(length / spacing)));
  for (int i = 0; i <= n; ++i) r.waypoints.push_back({length * i / n, 0.0});
  r.commands.assign(n, cmd);
  return r;
}

RouteSpec make_loop_route(double straight_len, double corner_radius, bool left_handed) {
  // Stadium circuit: two straights joined by 180-degree arcs. Clockwise by
  // default, so the corner command is turn-right.
  RouteSpec r;
  r.loop = true;
  const double R = corner_radius;
  const int arc_pts = 12;
  const int straight_pts = std::max(2, static_cast<int>(straight_len / 5.0));
  const Command turn = left_handed ? Command::kTurnLeft : Command::kTurnRight;
  auto add = [&](Vec2 p, Command c) {
    r.waypoints.push_back(p);
    r.commands.push_back(c);
  };
  const double y_top = 0.0, y_bot = -2.0 * R;  // clockwise when traversing +x first
  for (int i = 0; i < straight_pts; ++i) {
    add({straight_len * i / straight_pts, y_top}, Command::kFollowLane);
  }
  for (int i = 0; i < arc_pts; ++i) {  // right arc, from top going clockwise
    double a = M_PI / 2 - M_PI * i / arc_pts;
    add({straight_len + R * std::cos(a), -R + R * std::sin(a)}, turn);
  }
  for (int i = 0; i < straight_pts; ++i) {
    add({straight_len * (straight_pts - i) / straight_pts, y_bot}, Command::kFollowLane);
  }
  for (int i = 0; i < arc_pts; ++i) {  // left arc back to start
    double a = -M_PI / 2 - M_PI * i / arc_pts;
    add({R * std::cos(a), -R + R * std::sin(a)}, turn);
  }
  if (left_handed) {  // mirror about y=0 flips the traversal handedness
    for (auto& p : r.waypoints) p.y = -p.y - 2.0 * R;
  }
  return r;
}

RouteSpec make_curvy_route(uint64_t seed, int segments, double seg_len) {
  Rng rng(Rng::mix(seed, 0x6f75746572ULL));
  RouteSpec r;
  Vec2 p{0, 0};
  double heading = 0.0;
  r.waypoints.push_back(p);
  for (int s = 0; s < segments; ++s) {
    bool arc = (s % 2 == 1);
    double turn_rate = 0.0;
    Command cmd = Command::kFollowLane;
    if (arc) {
      double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
      turn_rate = sign * rng.uniform(0.01, 0.025);  // rad per meter
      cmd = sign > 0 ? Command::kTurnLeft : Command::kTurnRight;
    }
    int steps = static_cast<int>(seg_len / 5.0);
    for (int i = 0; i < steps; ++i) {
      heading += turn_rate * 5.0;
      p = p + Vec2{std::cos(heading), std::sin(heading)} * 5.0;
      r.waypoints.push_back(p);
      r.commands.push_back(cmd);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// KineticEnv

KineticEnv::KineticEnv(EnvConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.dt <= 0) throw std::invalid_argument("env: dt must be positive");
  if (cfg_.v_max <= 0) throw std::invalid_argument("env: v_max must be positive");
  if (cfg_.detect_range <= 0) throw std::invalid_argument("env: detect_range must be positive");
  if (cfg_.grid_c < 0 || cfg_.grid_h < 0 || cfg_.grid_w < 0 || cfg_.grid_extent <= 0) {
    throw std::invalid_argument("env: bad grid dimensions");
  }
}

double KineticEnv::max_heading_change_per_step() const {
  return cfg_.v_max / cfg_.wheelbase * std::tan(cfg_.max_steer_rad) * cfg_.dt;
}

Observation KineticEnv::reset(uint64_t seed, const RouteSpec& route, bool soft) {
  route.validate();
  route_ = route;
  const int n = static_cast<int>(route_.waypoints.size());
  cum_len_.assign(n + (route_.loop ? 1 : 0), 0.0);
  for (int i = 1; i < n; ++i) {
    cum_len_[i] = cum_len_[i - 1] + (route_.waypoints[i] - route_.waypoints[i - 1]).norm();
  }
  if (route_.loop) {
    cum_len_[n] = cum_len_[n - 1] + (route_.waypoints[0] - route_.waypoints[n - 1]).norm();
  }
  route_len_ = route_.loop ? cum_len_[n] : cum_len_[n - 1];

  uint64_t route_hash = fnv1a(route_.waypoints.data(), route_.waypoints.size() * sizeof(Vec2));
  rng_ = Rng(Rng::mix(Rng::mix(seed, route_hash), 0x656e76ULL));

  const bool keep_background = soft && initialized_;
  if (!keep_background) {
    clock_s_ = 0.0;
    spawn_obstacles();
    zones_.clear();
    for (double s : cfg_.red_light_s) {
      zones_.push_back({RuleZone::Type::kRedLight, s, cfg_.zone_half_length, false});
    }
    for (double s : cfg_.stop_sign_s) {
      zones_.push_back({RuleZone::Type::kStopSign, s, cfg_.zone_half_length, false});
    }
  }
  for (auto& z : zones_) z.stop_satisfied = false;

  ego_ = EgoState{};
  ego_.position = route_.waypoints[0];
  Vec2 first_dir = (route_.waypoints[1] - route_.waypoints[0]).normalized();
  ego_.heading = wrap_angle(std::atan2(first_dir.y, first_dir.x));
  ego_.speed = 0.0;

  initialized_ = true;
  done_ = false;
  steps_ = 0;
  episode_return_ = 0.0;
  progress_m_ = 0.0;
  completion_ = 0.0;
  prev_s_ = 0.0;
  segment_hint_ = 0;
  blocked_counter_ = 0;
  return render();
}

void KineticEnv::spawn_obstacles() {
  obstacles_.clear();
  const ObstacleSpawn& sp = cfg_.spawn;
  auto place = [&](Obstacle::Kind kind, double radius, double speed) {
    double s = rng_.uniform(sp.min_s, std::max(sp.min_s + 1.0, route_len_ - 5.0));
    double off;
    if (sp.on_lane) {
      off = 0.0;
    } else {
      // Keep scenery obstacles out of the driving corridor.
      double mag = rng_.uniform(cfg_.lane_half_width + 0.5 + radius, sp.lateral_spread + radius);
      off = rng_.uniform() < 0.5 ? mag : -mag;
    }
    double tang = tangent_at_s(s);
    Vec2 normal{-std::sin(tang), std::cos(tang)};  // left of route direction
    Obstacle ob;
    ob.kind = kind;
    ob.radius = radius;
    ob.position = point_at_s(s) + normal * off;
    ob.velocity = Vec2{std::cos(tang), std::sin(tang)} * speed;
    obstacles_.push_back(ob);
  };
  for (int i = 0; i < sp.n_vehicles; ++i) place(Obstacle::Kind::kVehicle, 1.0, sp.vehicle_speed);
  for (int i = 0; i < sp.n_pedestrians; ++i) place(Obstacle::Kind::kPedestrian, 0.4, 0.0);
}

void KineticEnv::advance_obstacles() {
  for (auto& ob : obstacles_) ob.position = ob.position + ob.velocity * cfg_.dt;
}

double KineticEnv::desired_speed(std::optional<double> dist_to_obstacle) const {
  if (!dist_to_obstacle.has_value()) return cfg_.v_max;
  double d = *dist_to_obstacle;
  if (d < 0) throw std::invalid_argument("desired_speed: negative obstacle distance");
  return cfg_.v_max * std::min(d / cfg_.detect_range, 1.0);
}

Vec2 KineticEnv::point_at_s(double s) const {
  const int n = static_cast<int>(route_.waypoints.size());
  const int segs = route_.segment_count();
  if (route_.loop) s = std::fmod(std::fmod(s, route_len_) + route_len_, route_len_);
  s = clamp(s, 0.0, route_len_);
  for (int i = 0; i < segs; ++i) {
    double s0 = cum_len_[i], s1 = cum_len_[i + 1];
    if (s <= s1 || i == segs - 1) {
      const Vec2& a = route_.waypoints[i];
      const Vec2& b = route_.waypoints[(i + 1) % n];
      double t = (s1 - s0) > 1e-12 ? (s - s0) / (s1 - s0) : 0.0;
      return a + (b - a) * clamp(t, 0.0, 1.0);
    }
  }
  return route_.waypoints.back();
}

double KineticEnv::tangent_at_s(double s) const {
  const int n = static_cast<int>(route_.waypoints.size());
  const int segs = route_.segment_count();
  if (route_.loop) s = std::fmod(std::fmod(s, route_len_) + route_len_, route_len_);
  s = clamp(s, 0.0, route_len_);
  for (int i = 0; i < segs; ++i) {
    if (s <= cum_len_[i + 1] || i == segs - 1) {
      const Vec2& a = route_.waypoints[i];
      const Vec2& b = route_.waypoints[(i + 1) % n];
      Vec2 d = (b - a).normalized();
      return std::atan2(d.y, d.x);
    }
  }
  return 0.0;
}

Command KineticEnv::command_at_segment(int segment) const {
  if (route_.commands.empty()) return Command::kFollowLane;
  segment = std::clamp(segment, 0, static_cast<int>(route_.commands.size()) - 1);
  return route_.commands[segment];
}

bool KineticEnv::in_intersection(int segment) const {
  Command c = command_at_segment(segment);
  return c == Command::kTurnLeft || c == Command::kTurnRight || c == Command::kGoStraight;
}

KineticEnv::RouteFrame KineticEnv::locate(const Vec2& p, int hint_segment) const {
  const int n = static_cast<int>(route_.waypoints.size());
  const int segs = route_.segment_count();
  // Search a window of segments around the hint; wide enough that one step
  // can never jump past it, narrow enough to stay stable on self-crossings.
  const double window_m = 60.0;
  RouteFrame best;
  double best_d = 1e18;
  for (int off = -segs; off <= segs; ++off) {
    int i = hint_segment + off;
    if (route_.loop) {
      i = ((i % segs) + segs) % segs;
    } else if (i < 0 || i >= segs) {
      continue;
    }
    // Skip segments far from the hint along the route.
    double ds = std::abs(cum_len_[std::min(i, segs)] - cum_len_[std::min(hint_segment, segs)]);
    if (route_.loop) ds = std::min(ds, route_len_ - ds);
    if (ds > window_m) continue;

    const Vec2& a = route_.waypoints[i];
    const Vec2& b = route_.waypoints[(i + 1) % n];
    double t = project_on_segment(p, a, b);
    Vec2 q = a + (b - a) * t;
    double d = (p - q).norm();
    if (d < best_d - 1e-12) {
      best_d = d;
      Vec2 tang = (b - a).normalized();
      best.s = cum_len_[i] + (b - a).norm() * t;
      // cross(tangent, offset) > 0 means p is left of the route direction
      best.d_lat = tang.cross(p - q) >= 0 ? best_d : -best_d;
      best.tangent = std::atan2(tang.y, tang.x);
      best.segment = i;
    }
  }
  return best;
}

bool KineticEnv::red_phase_active(const RuleZone& z) const {
  if (z.type != RuleZone::Type::kRedLight) return false;
  double cycle = cfg_.light_green_s + cfg_.light_red_s;
  if (cycle <= 0) return false;
  double phase = std::fmod(clock_s_, cycle);
  return phase >= cfg_.light_green_s;
}

std::optional<double> KineticEnv::nearest_obstacle_ahead() const {
  double c = std::cos(ego_.heading), s = std::sin(ego_.heading);
  std::optional<double> best;
  for (const auto& ob : obstacles_) {
    Vec2 d = ob.position - ego_.position;
    double rel_x = c * d.x + s * d.y;
    double rel_y = -s * d.x + c * d.y;
    if (rel_x <= 0) continue;
    if (std::abs(rel_y) > cfg_.detect_corridor + ob.radius) continue;
    double gap = rel_x - ob.radius - cfg_.ego_radius;
    if (gap < 0) gap = 0;
    if (gap > cfg_.detect_range) continue;
    if (!best || gap < *best) best = gap;
  }
  return best;
}

KineticEnv::StepResult KineticEnv::step(const Action2D& action) {
  if (!initialized_) throw std::logic_error("step before reset");
  if (done_) throw std::logic_error("step after episode end");

  const Action2D a = action.clamped();
  const double dt = cfg_.dt;

  // Kinematic bicycle update. Positive steer turns right (heading decreases
  // in the CCW-positive convention).
  double accel = a.longitudinal >= 0 ? a.longitudinal * cfg_.accel_max
                                     : a.longitudinal * cfg_.brake_max;
  double v_new = clamp(ego_.speed + accel * dt, 0.0, cfg_.v_max);
  double delta = a.steer * cfg_.max_steer_rad;
  double heading_new = wrap_angle(ego_.heading - v_new / cfg_.wheelbase * std::tan(delta) * dt);
  ego_.position = ego_.position + Vec2{std::cos(heading_new), std::sin(heading_new)} * (v_new * dt);
  double prev_steer = ego_.last_steer;
  ego_.heading = heading_new;
  ego_.speed = v_new;
  ego_.last_longitudinal = a.longitudinal;
  ego_.last_steer = a.steer;

  advance_obstacles();
  clock_s_ += dt;
  ++steps_;

  RouteFrame frame = locate(ego_.position, segment_hint_);
  segment_hint_ = frame.segment;
  double ds = frame.s - prev_s_;
  if (route_.loop) {
    if (ds < -route_len_ / 2) ds += route_len_;
    if (ds > route_len_ / 2) ds -= route_len_;
  }
  prev_s_ = frame.s;
  progress_m_ += ds;
  if (route_len_ > 0) {
    completion_ = std::max(completion_, clamp(progress_m_ / route_len_, 0.0, 1.0));
  }

  double heading_err = wrap_angle(frame.tangent - ego_.heading);
  std::optional<double> obst = nearest_obstacle_ahead();
  double v_des = desired_speed(obst);

  // Reward components (ROACH-style shaping).
  RewardBreakdown rb;
  rb.speed = 1.0 - std::abs(v_new - v_des) / cfg_.v_max;
  rb.lateral = -cfg_.k_lateral * frame.d_lat * frame.d_lat;
  rb.heading = -cfg_.k_heading * std::abs(heading_err);
  rb.smooth = -cfg_.k_smooth * (a.steer - prev_steer) * (a.steer - prev_steer);

  // Termination checks, most severe first.
  TerminationEvent event = TerminationEvent::kNone;
  InfractionCounts infr;

  for (const auto& ob : obstacles_) {
    if ((ob.position - ego_.position).norm() <= ob.radius + cfg_.ego_radius) {
      event = TerminationEvent::kCollision;
      if (ob.kind == Obstacle::Kind::kVehicle) {
        infr.collision_vehicle++;
      } else {
        infr.collision_pedestrian++;
      }
      break;
    }
  }

  auto zone_rel = [&](const RuleZone& z) {
    double d = frame.s - z.s_center;
    if (route_.loop) {
      if (d < -route_len_ / 2) d += route_len_;
      if (d > route_len_ / 2) d -= route_len_;
    }
    return d;
  };

  if (event == TerminationEvent::kNone) {
    for (auto& z : zones_) {
      double d = zone_rel(z);
      bool inside = std::abs(d) <= z.half_length;
      if (z.type == RuleZone::Type::kRedLight) {
        if (inside && red_phase_active(z) && v_new > cfg_.blocked_speed) {
          event = TerminationEvent::kRedLight;
          infr.red_light++;
          break;
        }
      } else {
        if (d < -z.half_length) z.stop_satisfied = false;  // re-arm on approach
        if (inside && v_new < cfg_.blocked_speed) z.stop_satisfied = true;
        bool crossed = d > z.half_length && d - ds <= z.half_length;
        if (crossed && !z.stop_satisfied) {
          event = TerminationEvent::kStopSign;
          infr.stop_sign++;
          break;
        }
      }
    }
  }

  if (event == TerminationEvent::kNone) {
    double thresh = cfg_.lat_threshold *
                    (in_intersection(frame.segment) ? cfg_.lat_threshold_intersection_scale : 1.0);
    if (std::abs(frame.d_lat) > thresh) event = TerminationEvent::kRouteDeviation;
  }

  if (event == TerminationEvent::kNone) {
    blocked_counter_ = v_new < cfg_.blocked_speed ? blocked_counter_ + 1 : 0;
    if (blocked_counter_ >= cfg_.blocked_steps) event = TerminationEvent::kBlocked;
  }

  if (event == TerminationEvent::kNone && cfg_.evaluation_mode && !route_.loop) {
    if ((ego_.position - route_.waypoints.back()).norm() <= cfg_.completion_radius) {
      event = TerminationEvent::kRouteCompleted;
      completion_ = 1.0;
    }
  }

  if (event == TerminationEvent::kNone && cfg_.max_episode_steps > 0 &&
      steps_ >= cfg_.max_episode_steps) {
    event = TerminationEvent::kTimeout;
  }

  switch (event) {
    case TerminationEvent::kBlocked:
    case TerminationEvent::kRouteDeviation:
    case TerminationEvent::kRedLight:
    case TerminationEvent::kStopSign:
    case TerminationEvent::kCollision:
      rb.terminal = cfg_.terminal_penalty;
      break;
    case TerminationEvent::kRouteCompleted:
      rb.terminal = cfg_.terminal_success;
      break;
    default:
      break;
  }

  done_ = event != TerminationEvent::kNone;
  double reward = rb.total();
  episode_return_ += reward;

  StepResult out;
  out.reward = reward;
  out.done = done_;
  out.event = event;
  out.info.route_completion = completion_;
  out.info.env_reward = reward;
  out.info.reward_terms = rb;
  out.info.desired_speed = v_des;
  out.info.command = command_at_segment(frame.segment);
  out.info.speed_bin = static_cast<int>(discretize_speed(v_new));
  out.info.infractions = infr;
  out.info.route_progress_m = progress_m_;
  out.info.lateral_dev = frame.d_lat;
  out.info.heading_err = heading_err;
  out.info.obstacle_dist = obst;
  out.obs = render();
  return out;
}

Observation KineticEnv::render() const {
  Observation obs;
  obs.grid_c = cfg_.grid_c;
  obs.grid_h = cfg_.grid_h;
  obs.grid_w = cfg_.grid_w;
  obs.grid.assign(static_cast<size_t>(obs.grid_size()), 0.0f);

  RouteFrame frame = locate(ego_.position, segment_hint_);
  double heading_err = wrap_angle(frame.tangent - ego_.heading);
  std::optional<double> obst = nearest_obstacle_ahead();
  double v_des = desired_speed(obst);

  // Lookahead target for the pure-pursuit angle.
  double lookahead = std::max(cfg_.min_lookahead, cfg_.lookahead_gain * ego_.speed);
  double s_target = frame.s + lookahead;
  if (!route_.loop) s_target = std::min(s_target, route_len_);
  Vec2 target = point_at_s(s_target);
  Vec2 to_target = target - ego_.position;
  double alpha = 0.0;
  if (to_target.norm() > 1e-6) {
    alpha = wrap_angle(std::atan2(to_target.y, to_target.x) - ego_.heading);
  }

  auto zone_rel = [&](const RuleZone& z) {
    double d = z.s_center - frame.s;
    if (route_.loop) {
      if (d < -route_len_ / 2) d += route_len_;
      if (d > route_len_ / 2) d -= route_len_;
    }
    return d;  // positive: zone ahead of the ego
  };
  double red_flag = 0.0, stop_flag = 0.0;
  for (const auto& z : zones_) {
    double ahead = zone_rel(z);
    bool in_range = ahead >= -z.half_length && ahead <= cfg_.rule_ahead_range;
    if (!in_range) continue;
    if (z.type == RuleZone::Type::kRedLight && red_phase_active(z)) red_flag = 1.0;
    if (z.type == RuleZone::Type::kStopSign && !z.stop_satisfied) stop_flag = 1.0;
  }

  obs.state_vec[0] = ego_.speed / cfg_.v_max;
  obs.state_vec[1] = ego_.last_longitudinal;
  obs.state_vec[2] = ego_.last_steer;
  obs.state_vec[3] = clamp(frame.d_lat / 2.0, -2.0, 2.0);
  obs.state_vec[4] = heading_err / M_PI;
  obs.state_vec[5] = alpha / M_PI;
  obs.state_vec[6] = v_des / cfg_.v_max;
  obs.state_vec[7] = obst ? *obst / cfg_.detect_range : 1.0;
  obs.state_vec[8] = red_flag;
  obs.state_vec[9] = stop_flag;

  if (obs.grid_size() == 0) return obs;

  const int H = cfg_.grid_h, W = cfg_.grid_w;
  const double res = cfg_.grid_extent / H;
  const double c = std::cos(ego_.heading), s = std::sin(ego_.heading);
  const int n = static_cast<int>(route_.waypoints.size());
  const int segs = route_.segment_count();

  // Route segments within raster range of the ego.
  std::vector<int> near_segs;
  near_segs.reserve(32);
  for (int i = 0; i < segs; ++i) {
    const Vec2& a = route_.waypoints[i];
    const Vec2& b = route_.waypoints[(i + 1) % n];
    if (point_segment_distance(ego_.position, a, b) < cfg_.grid_extent * 1.2) {
      near_segs.push_back(i);
    }
  }

  struct ZoneMark {
    Vec2 p;
    int chan;
  };
  std::vector<ZoneMark> marks;
  for (const auto& z : zones_) {
    if (z.type == RuleZone::Type::kRedLight) {
      if (red_phase_active(z)) marks.push_back({point_at_s(z.s_center), kChanRedLight});
    } else if (!z.stop_satisfied) {
      marks.push_back({point_at_s(z.s_center), kChanStopSign});
    }
  }

  auto at = [&](int chan, int i, int j) -> float& {
    return obs.grid[static_cast<size_t>((chan * H + i) * W + j)];
  };

  for (int i = 0; i < H; ++i) {
    double fwd = (i - H / 2 + 0.5) * res;  // +forward along ego heading
    for (int j = 0; j < W; ++j) {
      double left = (j - W / 2 + 0.5) * res;
      Vec2 wp{ego_.position.x + c * fwd - s * left, ego_.position.y + s * fwd + c * left};
      double droute = 1e18;
      for (int si : near_segs) {
        const Vec2& a = route_.waypoints[si];
        const Vec2& b = route_.waypoints[(si + 1) % n];
        droute = std::min(droute, point_segment_distance(wp, a, b));
        if (droute < 1e-3) break;
      }
      if (droute <= cfg_.lane_half_width) at(kChanDrivable, i, j) = 1.0f;
      if (droute <= 0.6) at(kChanRoute, i, j) = 1.0f;
      for (const auto& ob : obstacles_) {
        if ((ob.position - wp).norm() <= ob.radius) {
          at(ob.kind == Obstacle::Kind::kVehicle ? kChanVehicle : kChanPedestrian, i, j) = 1.0f;
        }
      }
      for (const auto& m : marks) {
        if ((m.p - wp).norm() <= cfg_.lane_half_width) at(m.chan, i, j) = 1.0f;
      }
    }
  }
  return obs;
}

}  // namespace guiderl
