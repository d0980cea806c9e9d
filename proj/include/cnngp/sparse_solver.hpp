#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cnngp/nngp_factor.hpp"

namespace cnngp {

// Deterministic parallel dot product: fixed-size chunks reduced in index
// order, so the result is bit-identical for any thread count.
inline double det_dot(const Eigen::Ref<const Eigen::VectorXd>& a,
                      const Eigen::Ref<const Eigen::VectorXd>& b) {
  const std::int64_t n = a.size();
  constexpr std::int64_t kChunk = 4096;
  const std::int64_t nchunks = (n + kChunk - 1) / kChunk;
  if (nchunks <= 1) return a.dot(b);
  std::vector<double> partial(nchunks);
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < nchunks; ++c) {
    const std::int64_t lo = c * kChunk;
    const std::int64_t len = std::min(kChunk, n - lo);
    partial[c] = a.segment(lo, len).dot(b.segment(lo, len));
  }
  double acc = 0.0;
  for (double p : partial) acc += p;
  return acc;
}

// Prior on the regression coefficients plus the inverse-gamma variance
// hyperparameters of the NIG family. The improper flat choice drops every
// beta-prior contribution from the posterior.
struct BetaPrior {
  struct Proper {
    Eigen::VectorXd mu;
    Eigen::MatrixXd v;  // SPD
  };
  std::optional<Proper> proper;  // nullopt: improper flat
  double a_sigma = 2.0;
  double b_sigma = 1.0;

  bool flat() const { return !proper.has_value(); }

  static BetaPrior improper_flat(double a_sigma, double b_sigma) {
    BetaPrior p;
    p.a_sigma = a_sigma;
    p.b_sigma = b_sigma;
    return p;
  }

  static BetaPrior normal(Eigen::VectorXd mu, Eigen::MatrixXd v, double a_sigma, double b_sigma) {
    BetaPrior p;
    p.proper = Proper{std::move(mu), std::move(v)};
    p.a_sigma = a_sigma;
    p.b_sigma = b_sigma;
    return p;
  }
};

// The augmented normal-equation matrix, held in blocks:
//   [ BB   BW ]    BB = X^T X / delta^2 + prior precision   (p x p)
//   [ BW^T WW ]    BW = X^T / delta^2                       (p x n)
//                  WW = I/delta^2 + (I-A)^T D^{-1} (I-A)    (sparse)
// The n x n block is never materialized densely; WW holds at most
// n (m+1)^2 nonzeros.
struct SparseSym {
  int n = 0, p = 0;
  double delta2 = 0.0;
  bool flat_prior = true;
  Eigen::MatrixXd bb;                     // p x p
  Eigen::MatrixXd bwt;                    // n x p: BW stored transposed, both actions implicit
  std::vector<std::int64_t> ww_row_ptr;   // CSR over the n x n block
  std::vector<int> ww_cols;
  std::vector<double> ww_vals;

  int dim() const { return n + p; }
  std::int64_t ww_nnz() const { return static_cast<std::int64_t>(ww_vals.size()); }

  // y = [BB BW; BW^T WW] x
  void multiply(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::VectorXd& y) const {
    const auto xb = x.head(p);
    const auto xw = x.tail(n);
    if (p > 0) {
      y.head(p) = bb * xb;
      for (int r = 0; r < p; ++r) y[r] += det_dot(bwt.col(r), xw);
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::int64_t k = ww_row_ptr[i]; k < ww_row_ptr[i + 1]; ++k)
        acc += ww_vals[k] * xw[ww_cols[k]];
      for (int r = 0; r < p; ++r) acc += bwt(i, r) * xb[r];
      y[p + i] = acc;
    }
  }

  Eigen::VectorXd diagonal() const {
    Eigen::VectorXd diag(dim());
    if (p > 0) diag.head(p) = bb.diagonal();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
      double v = 0.0;
      for (std::int64_t k = ww_row_ptr[i]; k < ww_row_ptr[i + 1]; ++k)
        if (ww_cols[k] == i) v = ww_vals[k];
      diag[p + i] = v;
    }
    return diag;
  }
};

namespace detail {

// CSR of (I-A)^T D^{-1} (I-A) + (1/delta2) I accumulated over the rows of
// (I-A); each row i contributes the rank-one block r_i r_i^T / d_i with
// support {i} u Pa[i]. No dense n x n object is ever formed.
inline void accumulate_ww(const NNGPFactor& f, double delta2, std::vector<std::int64_t>& row_ptr,
                          std::vector<int>& cols, std::vector<double>& vals) {
  const int n = f.n();
  struct Entry {
    int row, col;
    double v;
  };
  std::vector<Entry> entries;
  std::int64_t cap = 0;
  for (int i = 0; i < n; ++i) {
    const std::int64_t k = f.row_ptr[i + 1] - f.row_ptr[i] + 1;
    cap += k * k;
  }
  entries.reserve(cap);
  std::vector<int> idx;
  std::vector<double> coef;
  for (int i = 0; i < n; ++i) {
    idx.clear();
    coef.clear();
    idx.push_back(i);
    coef.push_back(1.0);
    for (std::int64_t k = f.row_ptr[i]; k < f.row_ptr[i + 1]; ++k) {
      idx.push_back(f.cols[k]);
      coef.push_back(-f.vals[k]);
    }
    const double dinv = 1.0 / f.d[i];
    for (std::size_t a = 0; a < idx.size(); ++a)
      for (std::size_t b = 0; b < idx.size(); ++b)
        entries.push_back({idx[a], idx[b], coef[a] * coef[b] * dinv});
  }
  for (int i = 0; i < n; ++i) entries.push_back({i, i, 1.0 / delta2});

  // Bucket by row, then sort and merge duplicates within each row.
  std::vector<std::int64_t> counts(n + 1, 0);
  for (const Entry& e : entries) ++counts[e.row + 1];
  for (int i = 0; i < n; ++i) counts[i + 1] += counts[i];
  std::vector<Entry> by_row(entries.size());
  {
    std::vector<std::int64_t> cursor(counts.begin(), counts.end() - 1);
    for (const Entry& e : entries) by_row[cursor[e.row]++] = e;
  }
  entries.clear();
  entries.shrink_to_fit();

  row_ptr.assign(n + 1, 0);
  cols.clear();
  vals.clear();
  cols.reserve(by_row.size());
  vals.reserve(by_row.size());
  for (int i = 0; i < n; ++i) {
    auto lo = by_row.begin() + counts[i];
    auto hi = by_row.begin() + counts[i + 1];
    std::sort(lo, hi, [](const Entry& a, const Entry& b) { return a.col < b.col; });
    for (auto it = lo; it != hi;) {
      const int c = it->col;
      double v = 0.0;
      while (it != hi && it->col == c) {
        v += it->v;
        ++it;
      }
      cols.push_back(c);
      vals.push_back(v);
    }
    row_ptr[i + 1] = static_cast<std::int64_t>(cols.size());
  }
}

}  // namespace detail

// Assembles X*^T X* for the augmented system, blockwise.
inline SparseSym assemble_normal_equations(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                           const NNGPFactor& factor, double delta2,
                                           const BetaPrior& prior) {
  if (factor.target != FactorTarget::Latent)
    throw std::invalid_argument("assemble_normal_equations: factor must target the latent model");
  const int n = factor.n();
  const int p = static_cast<int>(x.cols());
  if (x.rows() != n) throw std::invalid_argument("assemble_normal_equations: X row mismatch");
  if (!(delta2 > 0.0)) throw std::invalid_argument("assemble_normal_equations: delta2 must be > 0");
  if (prior.flat() && p >= n)
    throw std::invalid_argument(
        "assemble_normal_equations: flat prior requires p < n (non-identifiable)");
  if (prior.proper && (prior.proper->mu.size() != p || prior.proper->v.rows() != p ||
                       prior.proper->v.cols() != p))
    throw std::invalid_argument("assemble_normal_equations: prior dimension mismatch");

  SparseSym sys;
  sys.n = n;
  sys.p = p;
  sys.delta2 = delta2;
  sys.flat_prior = prior.flat();
  sys.bb.resize(p, p);
  sys.bwt.resize(n, p);
  if (p > 0) {
    sys.bb = x.transpose() * x / delta2;
    if (prior.proper) {
      Eigen::LLT<Eigen::MatrixXd> llt(prior.proper->v);
      if (llt.info() != Eigen::Success)
        throw std::invalid_argument("assemble_normal_equations: prior V_beta is not SPD");
      sys.bb += llt.solve(Eigen::MatrixXd::Identity(p, p));
    }
    sys.bwt = x / delta2;
  }
  detail::accumulate_ww(factor, delta2, sys.ww_row_ptr, sys.ww_cols, sys.ww_vals);
  return sys;
}

// X*^T y* = [ X^T y / delta2 + prior precision * mu_beta ; y / delta2 ].
inline Eigen::VectorXd assemble_rhs(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                    const Eigen::Ref<const Eigen::VectorXd>& y,
                                    const NNGPFactor& factor, double delta2,
                                    const BetaPrior& prior) {
  const int n = factor.n();
  const int p = static_cast<int>(x.cols());
  if (x.rows() != n || y.size() != n)
    throw std::invalid_argument("assemble_rhs: dimension mismatch");
  Eigen::VectorXd rhs(n + p);
  if (p > 0) {
    rhs.head(p) = x.transpose() * y / delta2;
    if (prior.proper) {
      Eigen::LLT<Eigen::MatrixXd> llt(prior.proper->v);
      if (llt.info() != Eigen::Success)
        throw std::invalid_argument("assemble_rhs: prior V_beta is not SPD");
      rhs.head(p) += llt.solve(prior.proper->mu);
    }
  }
  rhs.tail(n) = y / delta2;
  return rhs;
}

enum class Preconditioner { Jacobi, None };

struct CGConfig {
  double rel_tol = 1e-8;
  int max_iter = 0;  // 0: use 10 * dim
  Preconditioner preconditioner = Preconditioner::Jacobi;
  bool verbose = false;
};

struct CGResult {
  Eigen::VectorXd x;
  int iters = 0;
  double rel_residual = 0.0;
};

// Jacobi-preconditioned conjugate gradient on the block operator. The matrix
// enters only through matrix-vector products. The recurrence residual is
// refreshed from scratch every 50 iterations, and convergence is accepted
// only after the true residual meets the tolerance.
inline CGResult cg_solve(const SparseSym& sys, const Eigen::Ref<const Eigen::VectorXd>& b,
                         const CGConfig& cfg = {}) {
  const int dim = sys.dim();
  if (b.size() != dim) throw std::invalid_argument("cg_solve: rhs dimension mismatch");
  if (!b.allFinite()) throw std::invalid_argument("cg_solve: rhs contains NaN/Inf");
  if (!(cfg.rel_tol > 0.0)) throw std::invalid_argument("cg_solve: rel_tol must be positive");
  const int max_iter = cfg.max_iter > 0 ? cfg.max_iter : 10 * dim;

  CGResult res;
  res.x = Eigen::VectorXd::Zero(dim);
  const double bnorm = std::sqrt(det_dot(b, b));
  if (bnorm == 0.0) return res;

  Eigen::VectorXd minv = Eigen::VectorXd::Ones(dim);
  if (cfg.preconditioner == Preconditioner::Jacobi) {
    Eigen::VectorXd diag = sys.diagonal();
    for (int i = 0; i < dim; ++i) {
      if (!(diag[i] > 0.0))
        throw std::runtime_error("cg_solve: nonpositive diagonal, system not SPD");
      minv[i] = 1.0 / diag[i];
    }
  }

  Eigen::VectorXd r = b;  // r = b - A x, x = 0
  Eigen::VectorXd z = minv.cwiseProduct(r);
  Eigen::VectorXd q = z;
  Eigen::VectorXd aq(dim);
  double rz = det_dot(r, z);

  for (int it = 1; it <= max_iter; ++it) {
    sys.multiply(q, aq);
    const double qaq = det_dot(q, aq);
    if (!(qaq > 0.0) || !std::isfinite(qaq))
      throw std::runtime_error("cg_solve: breakdown (q^T A q = " + std::to_string(qaq) +
                               ") at iteration " + std::to_string(it));
    const double alpha = rz / qaq;
    res.x += alpha * q;
    if (it % 50 == 0) {
      sys.multiply(res.x, aq);
      r = b - aq;
    } else {
      r -= alpha * aq;
    }
    if (!r.allFinite()) throw std::runtime_error("cg_solve: residual became NaN/Inf");
    const double rnorm = std::sqrt(det_dot(r, r));
    if (rnorm / bnorm <= cfg.rel_tol) {
      // Recurrence may drift; accept only on the true residual.
      sys.multiply(res.x, aq);
      Eigen::VectorXd rtrue = b - aq;
      const double tnorm = std::sqrt(det_dot(rtrue, rtrue));
      if (tnorm / bnorm <= cfg.rel_tol) {
        res.iters = it;
        res.rel_residual = tnorm / bnorm;
        return res;
      }
      r = rtrue;
    }
    z = minv.cwiseProduct(r);
    const double rz_next = det_dot(r, z);
    q = z + (rz_next / rz) * q;
    rz = rz_next;
  }
  sys.multiply(res.x, aq);
  const double final_res = std::sqrt(det_dot(b - aq, b - aq)) / bnorm;
  throw std::runtime_error("cg_solve: no convergence after " + std::to_string(max_iter) +
                           " iterations, relative residual " + std::to_string(final_res));
}

}  // namespace cnngp
