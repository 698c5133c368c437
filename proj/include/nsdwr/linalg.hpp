#pragma once

// Sparse linear algebra: compressed-row storage assembled with constraint
// condensation, and a deterministic sparse direct LU (UMFPACK when
// available, Eigen SparseLU otherwise). One factorization serves both the
// primal solve and the transposed (adjoint) solve.

#include <chrono>
#include <cstdlib>
#include <limits>
#include <memory>

#include "nsdwr/space.hpp"

#ifdef NSDWR_USE_UMFPACK
#include <umfpack.h>
#else
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#endif

namespace nsdwr {

namespace detail {
// Pin BLAS threading for run-to-run determinism of the factorization.
struct BlasThreadPin {
  BlasThreadPin() {
    ::setenv("OPENBLAS_NUM_THREADS", "1", 0);
    ::setenv("OMP_NUM_THREADS", "1", 0);
  }
};
inline const BlasThreadPin blas_thread_pin{};
}  // namespace detail

// ---------------------------------------------------------------------------
// Scatter targets: a dof contributes to itself, or (if constrained) to its
// masters with the constraint weights.

inline void for_each_target(const FeSystem& s, int dof,
                            const std::function<void(int, double)>& f) {
  const ConstraintLine* line = s.constraints.line(dof);
  if (!line) {
    f(dof, 1.0);
    return;
  }
  for (const auto& [m, w] : line->masters) f(m, w);
}

// ---------------------------------------------------------------------------
// CSR pattern and matrix

struct SparsityPattern {
  int n = 0;
  std::vector<int> row_ptr;
  std::vector<int> cols;  // strictly increasing per row

  int find(int i, int j) const {
    const int lo = row_ptr[i], hi = row_ptr[i + 1];
    auto it = std::lower_bound(cols.begin() + lo, cols.begin() + hi, j);
    if (it == cols.begin() + hi || *it != j) return -1;
    return static_cast<int>(it - cols.begin());
  }
};

struct SparseMatrix {
  std::shared_ptr<const SparsityPattern> pattern;
  std::vector<double> values;

  int n() const { return pattern->n; }

  void zero() { std::fill(values.begin(), values.end(), 0.0); }

  void add(int i, int j, double v) {
    const int k = pattern->find(i, j);
    require(k >= 0, "SparseMatrix::add: entry outside the pattern");
    values[k] += v;
  }

  /// y = A x
  std::vector<double> multiply(const std::vector<double>& x) const {
    std::vector<double> y(n(), 0.0);
    for (int i = 0; i < n(); ++i)
      for (int k = pattern->row_ptr[i]; k < pattern->row_ptr[i + 1]; ++k)
        y[i] += values[k] * x[pattern->cols[k]];
    return y;
  }

  double frobenius_norm() const {
    std::vector<double> sq(values.size());
    for (std::size_t k = 0; k < values.size(); ++k) sq[k] = values[k] * values[k];
    return std::sqrt(pairwise_sum(std::move(sq)));
  }
};

/// Sparsity covering all cell couplings after constraint condensation, plus
/// the diagonal (identity rows for constrained dofs). Pattern is symmetric.
inline SparseMatrix assemble_pattern(const FeSystem& s) {
  auto sp = std::make_shared<SparsityPattern>();
  sp->n = s.n_dofs;
  std::vector<std::vector<int>> rows(s.n_dofs);
  for (int i = 0; i < s.n_dofs; ++i) rows[i].push_back(i);

  std::vector<int> targets;
  for (const auto& dofs : s.cell_dofs) {
    targets.clear();
    for (int dof : dofs)
      for_each_target(s, dof, [&](int t, double) { targets.push_back(t); });
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    for (int i : targets)
      for (int j : targets) rows[i].push_back(j);
  }

  sp->row_ptr.assign(s.n_dofs + 1, 0);
  for (int i = 0; i < s.n_dofs; ++i) {
    auto& r = rows[i];
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
    sp->row_ptr[i + 1] = sp->row_ptr[i] + static_cast<int>(r.size());
  }
  sp->cols.reserve(sp->row_ptr[s.n_dofs]);
  for (auto& r : rows) sp->cols.insert(sp->cols.end(), r.begin(), r.end());

  SparseMatrix m;
  m.pattern = std::move(sp);
  m.values.assign(m.pattern->cols.size(), 0.0);
  return m;
}

struct LinearSolveReport {
  double residual_norm = 0.0;
  double pivot_growth_estimate = 0.0;  // a posteriori backward-error based
  double seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Direct solver

/// Deterministic sparse LU with fill-reducing ordering. Factorize once,
/// solve A x = b and A^T x = b as often as needed.
class DirectSolver {
 public:
  /// Refuse systems beyond this size instead of degrading silently.
  static constexpr int kDefaultMaxDofs = 400000;

  explicit DirectSolver(int max_dofs = kDefaultMaxDofs) : max_dofs_(max_dofs) {}

  ~DirectSolver() { release(); }
  DirectSolver(const DirectSolver&) = delete;
  DirectSolver& operator=(const DirectSolver&) = delete;

  void factorize(const SparseMatrix& a) {
    require(a.n() <= max_dofs_,
            "DirectSolver: system size " + std::to_string(a.n()) +
                " exceeds the configured cap " + std::to_string(max_dofs_));
    release();
    matrix_ = a;  // keep values for refinement / residuals
    const auto t0 = std::chrono::steady_clock::now();
#ifdef NSDWR_USE_UMFPACK
    // Our CSR arrays read as compressed columns describe A^T; UMFPACK's `sys`
    // flag picks the right triangular solves for A and A^T.
    const auto& p = *matrix_.pattern;
    umfpack_di_defaults(control_.data());
    control_[UMFPACK_IRSTEP] = 2;
    int status = umfpack_di_symbolic(p.n, p.n, p.row_ptr.data(), p.cols.data(),
                                     matrix_.values.data(), &symbolic_,
                                     control_.data(), info_.data());
    require(status == UMFPACK_OK, diagnose("symbolic factorization", status));
    status = umfpack_di_numeric(p.row_ptr.data(), p.cols.data(),
                                matrix_.values.data(), symbolic_, &numeric_,
                                control_.data(), info_.data());
    require(status == UMFPACK_OK, diagnose("numeric factorization", status));
#else
    const auto& p = *matrix_.pattern;
    eigen_matrix_ = Eigen::SparseMatrix<double>(
        Eigen::Map<const Eigen::SparseMatrix<double, Eigen::RowMajor, int>>(
            p.n, p.n, static_cast<int>(p.cols.size()), p.row_ptr.data(),
            p.cols.data(), matrix_.values.data()));
    eigen_lu_ = std::make_unique<
        Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>>>();
    eigen_lu_->compute(eigen_matrix_);
    require(eigen_lu_->info() == Eigen::Success,
            diagnose("LU factorization", static_cast<int>(eigen_lu_->info())));
#endif
    factor_seconds_ =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    factorized_ = true;
  }

  std::vector<double> solve(const std::vector<double>& b,
                            LinearSolveReport* report = nullptr) const {
    return solve_impl(b, false, report);
  }

  std::vector<double> solve_transpose(const std::vector<double>& b,
                                      LinearSolveReport* report = nullptr) const {
    return solve_impl(b, true, report);
  }

  double factor_seconds() const { return factor_seconds_; }

 private:
  std::vector<double> solve_impl(const std::vector<double>& b, bool transpose,
                                 LinearSolveReport* report) const {
    require(factorized_, "DirectSolver: factorize first");
    require(static_cast<int>(b.size()) == matrix_.n(),
            "DirectSolver: right-hand side size mismatch");
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> x(b.size(), 0.0);
#ifdef NSDWR_USE_UMFPACK
    const auto& p = *matrix_.pattern;
    // Stored matrix is A^T in column form: UMFPACK_At solves A x = b.
    const int sys = transpose ? UMFPACK_A : UMFPACK_At;
    std::array<double, UMFPACK_INFO> info;
    const int status = umfpack_di_solve(
        sys, p.row_ptr.data(), p.cols.data(), matrix_.values.data(), x.data(),
        b.data(), numeric_, control_.data(), info.data());
    require(status == UMFPACK_OK, diagnose("solve", status));
#else
    Eigen::Map<const Eigen::VectorXd> bm(b.data(), b.size());
    Eigen::VectorXd xe = transpose ? eigen_lu_->transpose().solve(bm)
                                   : eigen_lu_->solve(bm);
    require(eigen_lu_->info() == Eigen::Success,
            diagnose("solve", static_cast<int>(eigen_lu_->info())));
    std::copy(xe.data(), xe.data() + xe.size(), x.begin());
#endif
    if (report) {
      std::vector<double> r =
          transpose ? multiply_transpose(x) : matrix_.multiply(x);
      std::vector<double> sq(r.size());
      double xn2 = 0.0, bn2 = 0.0;
      for (std::size_t i = 0; i < r.size(); ++i) {
        r[i] -= b[i];
        sq[i] = r[i] * r[i];
        xn2 += x[i] * x[i];
        bn2 += b[i] * b[i];
      }
      report->residual_norm = std::sqrt(pairwise_sum(std::move(sq)));
      const double scale =
          matrix_.frobenius_norm() * std::sqrt(xn2) + std::sqrt(bn2);
      const double eps = std::numeric_limits<double>::epsilon();
      report->pivot_growth_estimate =
          scale > 0.0 ? report->residual_norm / (scale * eps) : 0.0;
      report->seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
    }
    return x;
  }

  std::vector<double> multiply_transpose(const std::vector<double>& x) const {
    const auto& p = *matrix_.pattern;
    std::vector<double> y(p.n, 0.0);
    for (int i = 0; i < p.n; ++i)
      for (int k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k)
        y[p.cols[k]] += matrix_.values[k] * x[i];
    return y;
  }

  std::string diagnose(const char* phase, int status) const {
    std::string msg = std::string("DirectSolver: ") + phase + " failed (status " +
                      std::to_string(status) + ")";
    // Best-effort diagnostics: report the first structurally empty row.
    const auto& p = *matrix_.pattern;
    for (int i = 0; i < p.n; ++i) {
      bool empty = true;
      for (int k = p.row_ptr[i]; k < p.row_ptr[i + 1] && empty; ++k)
        if (matrix_.values[k] != 0.0) empty = false;
      if (empty) {
        msg += "; first zero pivot row " + std::to_string(i);
        break;
      }
    }
    return msg;
  }

  void release() {
#ifdef NSDWR_USE_UMFPACK
    if (numeric_) umfpack_di_free_numeric(&numeric_);
    if (symbolic_) umfpack_di_free_symbolic(&symbolic_);
    numeric_ = symbolic_ = nullptr;
#endif
    factorized_ = false;
  }

  int max_dofs_;
  SparseMatrix matrix_;
  bool factorized_ = false;
  double factor_seconds_ = 0.0;
#ifdef NSDWR_USE_UMFPACK
  void* symbolic_ = nullptr;
  void* numeric_ = nullptr;
  std::array<double, UMFPACK_CONTROL> control_{};
  mutable std::array<double, UMFPACK_INFO> info_{};
#else
  Eigen::SparseMatrix<double> eigen_matrix_;
  std::unique_ptr<
      Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>>>
      eigen_lu_;
#endif
};

/// One-shot convenience: factorize + solve with report.
inline std::pair<std::vector<double>, LinearSolveReport> solve_direct(
    const SparseMatrix& a, const std::vector<double>& b,
    int max_dofs = DirectSolver::kDefaultMaxDofs) {
  DirectSolver solver(max_dofs);
  solver.factorize(a);
  LinearSolveReport report;
  auto x = solver.solve(b, &report);
  return {std::move(x), report};
}

}  // namespace nsdwr
