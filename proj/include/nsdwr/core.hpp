#pragma once

// Small shared utilities: 2D vectors/matrices, error handling, deterministic
// summation, edge keys.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace nsdwr {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
  Vec2 normalized() const {
    const double n = norm();
    return {x / n, y / n};
  }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }

/// Row-major 2x2 matrix.
struct Mat2 {
  double a00 = 0, a01 = 0, a10 = 0, a11 = 0;

  double det() const { return a00 * a11 - a01 * a10; }
  Mat2 inverse() const {
    const double d = det();
    return {a11 / d, -a01 / d, -a10 / d, a00 / d};
  }
  Mat2 transpose() const { return {a00, a10, a01, a11}; }
  Vec2 operator*(const Vec2& v) const {
    return {a00 * v.x + a01 * v.y, a10 * v.x + a11 * v.y};
  }
};

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::runtime_error("nsdwr: " + msg);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

/// Deterministic pairwise reduction; order independent of how the terms were
/// produced, and less prone to cancellation noise than a running sum.
inline double pairwise_sum(std::vector<double> terms) {
  if (terms.empty()) return 0.0;
  while (terms.size() > 1) {
    std::size_t half = (terms.size() + 1) / 2;
    for (std::size_t i = 0; i + half < terms.size(); ++i)
      terms[i] += terms[i + half];
    terms.resize(half);
  }
  return terms[0];
}

/// Undirected edge identifier built from two vertex ids.
using EdgeKey = std::uint64_t;

inline EdgeKey edge_key(int a, int b) {
  const auto lo = static_cast<std::uint64_t>(a < b ? a : b);
  const auto hi = static_cast<std::uint64_t>(a < b ? b : a);
  return (lo << 32) | hi;
}

inline int edge_key_lo(EdgeKey k) { return static_cast<int>(k >> 32); }
inline int edge_key_hi(EdgeKey k) { return static_cast<int>(k & 0xffffffffu); }

}  // namespace nsdwr
