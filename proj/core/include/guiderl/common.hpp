#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "guiderl/geometry.hpp"

namespace guiderl {

inline const char* kVersionString = "guiderl 0.1.0";

// 2D control: signed longitudinal (throttle > 0, brake < 0) and steer.
// Positive steer turns right.
struct Action2D {
  double longitudinal = 0.0;
  double steer = 0.0;

  Action2D clamped() const {
    return {clamp(longitudinal, -1.0, 1.0), clamp(steer, -1.0, 1.0)};
  }
};

// 3D control as emitted by the mentor models (throttle, steer, brake).
struct Action3D {
  double throttle = 0.0;
  double steer = 0.0;
  double brake = 0.0;

  Action3D clamped() const {
    return {clamp(throttle, 0.0, 1.0), clamp(steer, -1.0, 1.0), clamp(brake, 0.0, 1.0)};
  }
};

// High-level navigation commands, one per route segment.
enum class Command : int {
  kTurnLeft = 0,
  kTurnRight = 1,
  kGoStraight = 2,
  kFollowLane = 3,
  kChangeLeft = 4,
  kChangeRight = 5,
};
inline constexpr int kNumCommands = 6;

const char* command_name(Command c);
const char* command_phrase(Command c);  // natural-language form used in prompts
Command command_from_id(int id);        // throws on unknown id

// Observation fed to the learner: ego-centric feature grid plus a compact
// state vector. Grid values are in [0,1]; the state vector layout is:
//   0 speed/v_max     1 last_longitudinal  2 last_steer
//   3 lateral_dev/2m  4 heading_err/pi     5 lookahead_angle/pi
//   6 desired/v_max   7 obstacle_dist/D    8 red_light_ahead  9 stop_sign_ahead
struct Observation {
  int grid_c = 0;
  int grid_h = 0;
  int grid_w = 0;
  std::vector<float> grid;
  std::array<double, 10> state_vec{};

  int grid_size() const { return grid_c * grid_h * grid_w; }
  bool operator==(const Observation& o) const = default;
};

inline constexpr int kStateDim = 10;

enum class TerminationEvent : int {
  kNone = 0,
  kBlocked,
  kRouteDeviation,
  kRedLight,
  kStopSign,
  kCollision,
  kRouteCompleted,
  kTimeout,
};
const char* termination_name(TerminationEvent e);

struct InfractionCounts {
  int collision_pedestrian = 0;
  int collision_vehicle = 0;
  int red_light = 0;
  int stop_sign = 0;

  int total() const {
    return collision_pedestrian + collision_vehicle + red_light + stop_sign;
  }
  InfractionCounts& operator+=(const InfractionCounts& o) {
    collision_pedestrian += o.collision_pedestrian;
    collision_vehicle += o.collision_vehicle;
    red_light += o.red_light;
    stop_sign += o.stop_sign;
    return *this;
  }
};

}  // namespace guiderl
