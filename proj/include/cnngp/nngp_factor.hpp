#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cnngp/covariance.hpp"
#include "cnngp/geometry.hpp"

namespace cnngp {

// Latent targets factor the correlation matrix M itself; response targets
// factor K = M + delta^2 I, the marginal correlation of the outcome.
enum class FactorTarget { Latent, Response };

// Sparse kriging-weight factor: strictly lower-triangular A stored by row
// (row i supported on Pa[i]) and the positive conditional-variance diagonal
// D, together representing the precision (I-A)^T D^{-1} (I-A).
struct NNGPFactor {
  FactorTarget target = FactorTarget::Latent;
  double phi = 0.0;
  double delta2 = 0.0;
  std::vector<std::int64_t> row_ptr;
  std::vector<int> cols;
  std::vector<double> vals;
  Eigen::VectorXd d;

  int n() const { return static_cast<int>(d.size()); }
  std::int64_t nnz() const { return static_cast<std::int64_t>(vals.size()); }

  // (I - A) v
  Eigen::VectorXd apply_ImA(const Eigen::Ref<const Eigen::VectorXd>& v) const {
    Eigen::VectorXd out = v;
    const int nn = n();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < nn; ++i) {
      double acc = 0.0;
      for (std::int64_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) acc += vals[k] * v[cols[k]];
      out[i] -= acc;
    }
    return out;
  }

  // (I - A)^T v; scatter form, serial to keep results thread-count independent.
  Eigen::VectorXd apply_ImA_T(const Eigen::Ref<const Eigen::VectorXd>& v) const {
    Eigen::VectorXd out = v;
    const int nn = n();
    for (int i = 0; i < nn; ++i) {
      for (std::int64_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) out[cols[k]] -= vals[k] * v[i];
    }
    return out;
  }

  // w^T (I-A)^T D^{-1} (I-A) w
  double quad_form(const Eigen::Ref<const Eigen::VectorXd>& w) const {
    const int nn = n();
    double acc = 0.0;
    for (int i = 0; i < nn; ++i) {
      double r = w[i];
      for (std::int64_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) r -= vals[k] * w[cols[k]];
      acc += r * r / d[i];
    }
    return acc;
  }
};

// Kriging weights from a prediction set onto the training set: exactly m
// nonzeros per row plus the conditional variance diagonal d_u.
struct PredictionFactor {
  FactorTarget target = FactorTarget::Latent;
  double phi = 0.0;
  double delta2 = 0.0;
  int n_train = 0;
  std::vector<std::int64_t> row_ptr;
  std::vector<int> cols;
  std::vector<double> vals;
  Eigen::VectorXd d_u;

  int size() const { return static_cast<int>(d_u.size()); }

  // A_u v for v over the training set.
  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& v) const {
    const int np = size();
    Eigen::VectorXd out(np);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < np; ++i) {
      double acc = 0.0;
      for (std::int64_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) acc += vals[k] * v[cols[k]];
      out[i] = acc;
    }
    return out;
  }
};

namespace detail {

// Solves the local kriging system over one parent set: weights
// a = C(Pa,Pa)^{-1} c(Pa, s) and conditional variance d = marg - c^T a.
// The parent matrix gets a small jitter escalation before giving up;
// coincident points make it exactly singular in finite precision.
struct LocalKriging {
  Eigen::VectorXd weights;
  double cond_var;
};

inline LocalKriging solve_local(const Eigen::MatrixXd& parent_corr, const Eigen::VectorXd& cross,
                                double marginal, int location_index) {
  static constexpr double kJitters[] = {0.0, 1e-10, 1e-8};
  for (double jit : kJitters) {
    Eigen::MatrixXd cp = parent_corr;
    if (jit > 0.0) cp.diagonal().array() += jit;
    Eigen::LLT<Eigen::MatrixXd> llt(cp);
    if (llt.info() != Eigen::Success) continue;
    LocalKriging out;
    out.weights = llt.solve(cross);
    out.cond_var = marginal - cross.dot(out.weights);
    if (!out.weights.allFinite() || !std::isfinite(out.cond_var)) continue;
    return out;
  }
  throw std::runtime_error("nngp factor: singular neighbor correlation at location " +
                           std::to_string(location_index));
}

inline void local_system(const Eigen::MatrixX2d& coords, const std::vector<int>& pa,
                         const std::vector<double>& pa_dist, const KernelSpec& kernel,
                         double diag_add, Eigen::MatrixXd& parent_corr, Eigen::VectorXd& cross) {
  const int k = static_cast<int>(pa.size());
  parent_corr.resize(k, k);
  cross.resize(k);
  for (int a = 0; a < k; ++a) {
    cross[a] = corr(kernel, pa_dist[a]);
    parent_corr(a, a) = 1.0 + diag_add;
    for (int b = a + 1; b < k; ++b) {
      const double dx = coords(pa[a], 0) - coords(pa[b], 0);
      const double dy = coords(pa[a], 1) - coords(pa[b], 1);
      const double c = corr(kernel, std::sqrt(dx * dx + dy * dy));
      parent_corr(a, b) = c;
      parent_corr(b, a) = c;
    }
  }
}

}  // namespace detail

// Builds the training factor (A, D) on the correlation scale. Row i solves
// an |Pa[i]| x |Pa[i]| kriging system; rows are independent and run in
// parallel. delta2 participates only for the response target.
inline NNGPFactor build_factor(const LocationSet& locs, const NeighborGraph& graph,
                               const KernelSpec& kernel, FactorTarget target, double delta2 = 0.0) {
  if (graph.kind != GraphKind::Training)
    throw std::invalid_argument("build_factor: graph must be a training graph");
  const int n = locs.size();
  if (graph.size() != n) throw std::invalid_argument("build_factor: graph/location size mismatch");
  const double diag_add = target == FactorTarget::Response ? delta2 : 0.0;
  const double marginal = 1.0 + diag_add;

  NNGPFactor f;
  f.target = target;
  f.phi = kernel.phi;
  f.delta2 = diag_add;
  f.row_ptr.resize(n + 1);
  f.row_ptr[0] = 0;
  for (int i = 0; i < n; ++i)
    f.row_ptr[i + 1] = f.row_ptr[i] + static_cast<std::int64_t>(graph.parents[i].size());
  f.cols.resize(f.row_ptr[n]);
  f.vals.resize(f.row_ptr[n]);
  f.d.resize(n);
  f.d[0] = marginal;

#pragma omp parallel
  {
    Eigen::MatrixXd parent_corr;
    Eigen::VectorXd cross;
#pragma omp for schedule(dynamic, 64)
    for (int i = 1; i < n; ++i) {
      const auto& pa = graph.parents[i];
      detail::local_system(locs.coords, pa, graph.parent_dist[i], kernel, diag_add,
                           parent_corr, cross);
      detail::LocalKriging lk = detail::solve_local(parent_corr, cross, marginal, i);
      for (std::size_t k = 0; k < pa.size(); ++k) {
        f.cols[f.row_ptr[i] + k] = pa[k];
        f.vals[f.row_ptr[i] + k] = lk.weights[k];
      }
      // Coincident duplicates drive the conditional variance to zero; keep
      // D strictly positive so the precision stays well defined.
      f.d[i] = std::max(lk.cond_var, 1e-12);
    }
  }
  return f;
}

// Kriging weights of prediction sites onto their observed parents, per row
// on the correlation scale. The response target adds the noise ratio on the
// parent diagonal (used when scoring with the response model).
inline PredictionFactor build_prediction_factor(const LocationSet& train, const LocationSet& pred,
                                                const NeighborGraph& graph,
                                                const KernelSpec& kernel,
                                                FactorTarget target = FactorTarget::Latent,
                                                double delta2 = 0.0) {
  if (graph.kind != GraphKind::Prediction)
    throw std::invalid_argument("build_prediction_factor: graph must be a prediction graph");
  const int np = pred.size();
  if (graph.size() != np)
    throw std::invalid_argument("build_prediction_factor: graph/site size mismatch");
  if (train.size() < 1) throw std::invalid_argument("build_prediction_factor: empty training set");
  const double diag_add = target == FactorTarget::Response ? delta2 : 0.0;
  const double marginal = 1.0 + diag_add;

  PredictionFactor f;
  f.target = target;
  f.phi = kernel.phi;
  f.delta2 = diag_add;
  f.n_train = train.size();
  f.row_ptr.resize(np + 1);
  f.row_ptr[0] = 0;
  for (int i = 0; i < np; ++i)
    f.row_ptr[i + 1] = f.row_ptr[i] + static_cast<std::int64_t>(graph.parents[i].size());
  f.cols.resize(f.row_ptr[np]);
  f.vals.resize(f.row_ptr[np]);
  f.d_u.resize(np);

#pragma omp parallel
  {
    Eigen::MatrixXd parent_corr;
    Eigen::VectorXd cross;
#pragma omp for schedule(dynamic, 64)
    for (int i = 0; i < np; ++i) {
      const auto& pa = graph.parents[i];
      detail::local_system(train.coords, pa, graph.parent_dist[i], kernel, diag_add,
                           parent_corr, cross);
      detail::LocalKriging lk = detail::solve_local(parent_corr, cross, marginal, i);
      for (std::size_t k = 0; k < pa.size(); ++k) {
        f.cols[f.row_ptr[i] + k] = pa[k];
        f.vals[f.row_ptr[i] + k] = lk.weights[k];
      }
      // A site coincident with a parent interpolates exactly (d_u = 0).
      f.d_u[i] = std::min(std::max(lk.cond_var, 0.0), marginal);
    }
  }
  return f;
}

// log det of the implied covariance: log det (I-A)^{-1} D (I-A)^{-T} is just
// the sum of log conditional variances, no sparse Cholesky needed.
inline double log_det_factor(const NNGPFactor& f) {
  double acc = 0.0;
  for (int i = 0; i < f.n(); ++i) acc += std::log(f.d[i]);
  return acc;
}

}  // namespace cnngp
