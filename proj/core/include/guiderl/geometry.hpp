#pragma once

#include <cmath>

namespace guiderl {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
  Vec2 normalized() const {
    double n = norm();
    return n > 1e-12 ? Vec2{x / n, y / n} : Vec2{1.0, 0.0};
  }
};

// Wrap angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0) a += 2.0 * M_PI;
  double w = a - M_PI;
  return w == -M_PI ? M_PI : w;
}

inline double clamp(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

// Closest point on segment [a,b]; returns parameter t in [0,1].
inline double project_on_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  Vec2 ab = b - a;
  double len2 = ab.dot(ab);
  if (len2 < 1e-12) return 0.0;
  return clamp((p - a).dot(ab) / len2, 0.0, 1.0);
}

inline double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  double t = project_on_segment(p, a, b);
  Vec2 q = a + (b - a) * t;
  return (p - q).norm();
}

}  // namespace guiderl
