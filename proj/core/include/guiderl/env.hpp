#pragma once

#include <optional>
#include <string>
#include <vector>

#include "guiderl/common.hpp"
#include "guiderl/rng.hpp"

namespace guiderl {

struct EgoState {
  Vec2 position;
  double heading = 0.0;  // radians, wrapped to (-pi, pi], CCW positive
  double speed = 0.0;    // m/s, >= 0
  double last_longitudinal = 0.0;
  double last_steer = 0.0;
};

struct RouteSpec {
  std::vector<Vec2> waypoints;
  std::vector<Command> commands;  // one per segment; size == segment count
  bool loop = false;              // closed circuit: last waypoint joins the first

  int segment_count() const {
    if (waypoints.size() < 2) return 0;
    return static_cast<int>(waypoints.size()) - (loop ? 0 : 1);
  }
  double total_length() const;
  void validate() const;  // throws std::invalid_argument with a diagnostic

  static RouteSpec load(const std::string& path);  // "x y command-id" per line
  void save(const std::string& path) const;
};

// Convenience builders for tests and default scenarios.
RouteSpec make_straight_route(double length, double spacing = 5.0,
                              Command cmd = Command::kFollowLane);
// Rounded-rectangle circuit; corner arcs carry turn commands.
RouteSpec make_loop_route(double straight_len = 60.0, double corner_radius = 12.0,
                          bool left_handed = false);
// Open route with alternating gentle arcs.
RouteSpec make_curvy_route(uint64_t seed, int segments = 6, double seg_len = 30.0);

struct Obstacle {
  enum class Kind : int { kVehicle = 0, kPedestrian = 1 };
  Vec2 position;
  double radius = 1.0;
  Kind kind = Kind::kVehicle;
  Vec2 velocity;  // scripted constant-velocity motion
};

struct RuleZone {
  enum class Type : int { kRedLight = 0, kStopSign = 1 };
  Type type = Type::kRedLight;
  double s_center = 0.0;  // arclength position along the route
  double half_length = 1.5;
  bool stop_satisfied = false;  // stop signs: ego came to rest inside the zone
};

struct RewardBreakdown {
  double speed = 0.0;
  double lateral = 0.0;
  double heading = 0.0;
  double smooth = 0.0;
  double terminal = 0.0;

  double total() const { return speed + lateral + heading + smooth + terminal; }
};

struct StepInfo {
  double route_completion = 0.0;  // in [0,1], nondecreasing within an episode
  double env_reward = 0.0;
  RewardBreakdown reward_terms;
  double desired_speed = 0.0;
  Command command = Command::kFollowLane;  // context: current segment command
  int speed_bin = 0;                       // context: discretized ego speed
  InfractionCounts infractions;            // events fired this step
  double route_progress_m = 0.0;           // cumulative meters along the route
  double lateral_dev = 0.0;
  double heading_err = 0.0;
  std::optional<double> obstacle_dist;     // nearest obstacle ahead, if any
};

struct ObstacleSpawn {
  int n_vehicles = 0;
  int n_pedestrians = 0;
  double vehicle_speed = 0.0;   // m/s along route tangent
  double lateral_spread = 4.0;  // max |offset| from centerline
  bool on_lane = false;         // place on the centerline (static blocking suite)
  double min_s = 10.0;          // keep spawn away from the route start
};

struct EnvConfig {
  double dt = 0.1;
  double v_max = 6.0;
  double detect_range = 20.0;  // D: obstacle detection range
  double wheelbase = 2.5;
  double max_steer_rad = 0.6;  // front wheel angle at |steer| = 1
  double accel_max = 3.0;      // m/s^2 at longitudinal = +1
  double brake_max = 5.0;      // m/s^2 at longitudinal = -1
  double ego_radius = 1.0;
  double lane_half_width = 2.0;
  double detect_corridor = 2.0;  // half width of the obstacle lookahead corridor

  // Reward shaping coefficients.
  double k_lateral = 0.5;
  double k_heading = 1.0;
  double k_smooth = 0.5;
  double terminal_penalty = -10.0;  // applied on failure terminations
  double terminal_success = 0.0;    // applied on route_completed

  // Termination.
  double lat_threshold = 2.0;
  double lat_threshold_intersection_scale = 1.5;
  double blocked_speed = 0.1;
  int blocked_steps = 100;
  int max_episode_steps = 1000;  // <= 0 disables the timeout
  double completion_radius = 2.0;
  bool evaluation_mode = false;

  // Observation raster.
  int grid_c = 6;
  int grid_h = 48;
  int grid_w = 48;
  double grid_extent = 24.0;  // meters covered by the grid side

  // Pure-pursuit lookahead used for state_vec[5].
  double min_lookahead = 2.0;
  double lookahead_gain = 1.0;  // lookahead = max(min_lookahead, gain * speed)

  // Traffic rule zones (arclength positions along the route).
  std::vector<double> red_light_s;
  std::vector<double> stop_sign_s;
  double zone_half_length = 1.5;
  double light_green_s = 5.0;
  double light_red_s = 5.0;
  double rule_ahead_range = 15.0;  // flag zones this far ahead in state_vec

  ObstacleSpawn spawn;
};

// Grid channel indices.
enum GridChannel : int {
  kChanDrivable = 0,
  kChanRoute = 1,
  kChanVehicle = 2,
  kChanPedestrian = 3,
  kChanRedLight = 4,
  kChanStopSign = 5,
};

// 2D kinematic driving simulator. Single-threaded; instances may be moved
// between threads only between calls.
class KineticEnv {
 public:
  explicit KineticEnv(EnvConfig cfg);

  // Hard reset rebuilds obstacles from (seed, route); soft reset teleports the
  // ego back to the route start and keeps background obstacle state.
  Observation reset(uint64_t seed, const RouteSpec& route, bool soft = false);

  struct StepResult {
    Observation obs;
    double reward = 0.0;
    bool done = false;
    TerminationEvent event = TerminationEvent::kNone;
    StepInfo info;
  };
  StepResult step(const Action2D& action);

  // Desired speed under the obstacle-aware rule: v_max with no obstacle,
  // linearly reduced to zero as the gap closes.
  double desired_speed(std::optional<double> dist_to_obstacle) const;

  bool episode_done() const { return done_; }
  const EgoState& ego() const { return ego_; }
  const std::vector<Obstacle>& obstacles() const { return obstacles_; }
  const EnvConfig& config() const { return cfg_; }
  double episode_return() const { return episode_return_; }
  int episode_steps() const { return steps_; }
  double route_length() const { return route_len_; }

  // Kinematic sanity bound: max |heading change| per step.
  double max_heading_change_per_step() const;

 private:
  struct RouteFrame {
    double s = 0.0;        // arclength of the projection
    double d_lat = 0.0;    // signed lateral offset, positive left of the route
    double tangent = 0.0;  // route direction at the projection
    int segment = 0;
  };

  RouteFrame locate(const Vec2& p, int hint_segment) const;
  Vec2 point_at_s(double s) const;
  double tangent_at_s(double s) const;
  Command command_at_segment(int segment) const;
  bool in_intersection(int segment) const;
  bool red_phase_active(const RuleZone& z) const;
  std::optional<double> nearest_obstacle_ahead() const;
  Observation render() const;
  void spawn_obstacles();
  void advance_obstacles();

  EnvConfig cfg_;
  RouteSpec route_;
  std::vector<double> cum_len_;  // cumulative arclength per waypoint
  double route_len_ = 0.0;

  EgoState ego_;
  std::vector<Obstacle> obstacles_;
  std::vector<RuleZone> zones_;
  Rng rng_;

  bool initialized_ = false;
  bool done_ = true;
  int steps_ = 0;
  double clock_s_ = 0.0;  // rule-phase clock, survives soft resets
  double episode_return_ = 0.0;
  double progress_m_ = 0.0;
  double completion_ = 0.0;
  double prev_s_ = 0.0;
  int segment_hint_ = 0;
  int blocked_counter_ = 0;
};

}  // namespace guiderl
