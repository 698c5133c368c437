#pragma once

// Reference-element machinery: tensor-product Lagrange shape functions on
// [0,1]^2 with equispaced nodes, tensor Gauss-Legendre quadrature, and the
// bilinear cell mapping.

#include <vector>

#include "nsdwr/core.hpp"

namespace nsdwr {

// ---------------------------------------------------------------------------
// 1D Lagrange factors at equispaced nodes {0, 1/k, ..., 1}.

namespace detail {

inline double lagrange_1d_value(int degree, int i, double x) {
  double v = 1.0;
  for (int j = 0; j <= degree; ++j) {
    if (j == i) continue;
    v *= (x * degree - j) / double(i - j);
  }
  return v;
}

inline double lagrange_1d_derivative(int degree, int i, double x) {
  // d/dx prod_j (x k - j)/(i - j) via the product rule.
  double sum = 0.0;
  for (int l = 0; l <= degree; ++l) {
    if (l == i) continue;
    double term = double(degree) / double(i - l);
    for (int j = 0; j <= degree; ++j) {
      if (j == i || j == l) continue;
      term *= (x * degree - j) / double(i - j);
    }
    sum += term;
  }
  return sum;
}

}  // namespace detail

/// Weights of the 1D Lagrange basis of `degree` at equispaced nodes,
/// evaluated at parameter t: row j is the coefficient of node j.
inline std::vector<double> lagrange_1d_weights(int degree, double t) {
  std::vector<double> w(degree + 1);
  for (int j = 0; j <= degree; ++j)
    w[j] = detail::lagrange_1d_value(degree, j, t);
  return w;
}

// ---------------------------------------------------------------------------
// Tensor-product scalar basis on the reference square.

struct ShapeValue {
  double value;
  Vec2 gradient;  // with respect to reference coordinates
};

/// Q_k scalar Lagrange basis, nodes lexicographic: node (i,j) -> j*(k+1)+i at
/// (i/k, j/k). Supported degrees: 1, 2, 4.
struct LagrangeBasis {
  int degree;

  explicit LagrangeBasis(int k) : degree(k) {
    require(k == 1 || k == 2 || k == 4, "LagrangeBasis: degree must be 1, 2 or 4");
  }

  int size() const { return (degree + 1) * (degree + 1); }

  Vec2 node(int i) const {
    require(i >= 0 && i < size(), "LagrangeBasis: node index out of range");
    const int nx = i % (degree + 1);
    const int ny = i / (degree + 1);
    return {double(nx) / degree, double(ny) / degree};
  }

  ShapeValue eval(int i, const Vec2& xi) const {
    require(i >= 0 && i < size(), "LagrangeBasis: shape index out of range");
    const int nx = i % (degree + 1);
    const int ny = i / (degree + 1);
    const double vx = detail::lagrange_1d_value(degree, nx, xi.x);
    const double vy = detail::lagrange_1d_value(degree, ny, xi.y);
    const double dx = detail::lagrange_1d_derivative(degree, nx, xi.x);
    const double dy = detail::lagrange_1d_derivative(degree, ny, xi.y);
    return {vx * vy, {dx * vy, vx * dy}};
  }
};

// ---------------------------------------------------------------------------
// Gauss-Legendre quadrature.

struct QuadratureRule {
  std::vector<Vec2> points;     // on [0,1]^2
  std::vector<double> weights;  // sum to 1
};

namespace detail {

/// Gauss-Legendre nodes/weights on [0,1], computed by Newton iteration on
/// the Legendre recurrence. Deterministic, accurate to machine precision.
inline void gauss_1d(int n, std::vector<double>* points,
                     std::vector<double>* weights) {
  points->resize(n);
  weights->resize(n);
  const double pi = std::acos(-1.0);
  for (int i = 0; i < n; ++i) {
    // Initial guess on [-1,1] (Chebyshev-like), then Newton.
    double x = std::cos(pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    (*points)[n - 1 - i] = 0.5 * (1.0 + x);
    (*weights)[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
  }
}

}  // namespace detail

/// Tensor Gauss rule with n points per direction; exact for polynomials of
/// degree 2n-1 in each variable.
inline QuadratureRule gauss_rule(int n) {
  require(n >= 1 && n <= 8, "gauss_rule: supported point counts are 1..8");
  std::vector<double> x, w;
  detail::gauss_1d(n, &x, &w);
  QuadratureRule rule;
  rule.points.reserve(n * n);
  rule.weights.reserve(n * n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      rule.points.emplace_back(x[i], x[j]);
      rule.weights.push_back(w[i] * w[j]);
    }
  return rule;
}

/// 1D Gauss rule on [0,1] for edge integrals.
inline void gauss_rule_1d(int n, std::vector<double>* points,
                          std::vector<double>* weights) {
  require(n >= 1 && n <= 8, "gauss_rule_1d: supported point counts are 1..8");
  detail::gauss_1d(n, points, weights);
}

// ---------------------------------------------------------------------------
// Bilinear cell mapping.

struct MappedPoint {
  Vec2 x;
  double det = 0.0;
  Mat2 jac_inv_t;  // inverse-transpose of the Jacobian
};

struct CellMapping {
  std::array<Vec2, 4> v;  // corners, counter-clockwise

  Vec2 map(const Vec2& xi) const {
    return v[0] * ((1 - xi.x) * (1 - xi.y)) + v[1] * (xi.x * (1 - xi.y)) +
           v[2] * (xi.x * xi.y) + v[3] * ((1 - xi.x) * xi.y);
  }

  Mat2 jacobian(const Vec2& xi) const {
    const Vec2 dxi = (v[1] - v[0]) * (1 - xi.y) + (v[2] - v[3]) * xi.y;
    const Vec2 deta = (v[3] - v[0]) * (1 - xi.x) + (v[2] - v[1]) * xi.x;
    return {dxi.x, deta.x, dxi.y, deta.y};
  }

  MappedPoint at(const Vec2& xi) const {
    const Mat2 J = jacobian(xi);
    const double d = J.det();
    require(d > 0.0, "CellMapping: non-positive Jacobian determinant");
    return {map(xi), d, J.inverse().transpose()};
  }

  /// Inverts the bilinear map by Newton iteration. Converges for points in
  /// (a neighborhood of) the cell; tolerance on the residual in x.
  Vec2 invert(const Vec2& x, double tol = 1e-12) const {
    Vec2 xi{0.5, 0.5};
    for (int it = 0; it < 50; ++it) {
      const Vec2 r = map(xi) - x;
      if (r.norm() <= tol) return xi;
      const Mat2 J = jacobian(xi);
      const Vec2 dx = J.inverse() * r;
      xi = xi - dx;
    }
    require((map(xi) - x).norm() <= 1e-9,
            "CellMapping::invert: Newton did not converge");
    return xi;
  }
};

}  // namespace nsdwr
