#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cnngp/rng.hpp"
#include "cnngp/sparse_solver.hpp"

namespace cnngp {

// Exact joint NIG posterior of (gamma, sigma^2) for the conjugate latent
// model: solved mean, the scaled precision in block form, and the updated
// inverse-gamma parameters. Keeps the factor and prior pieces needed to
// draw from the posterior later.
struct NIGPosterior {
  Eigen::VectorXd gamma_hat;  // [beta_hat; w_hat]
  SparseSym sys;              // X*^T X*, the posterior precision / sigma^2
  NNGPFactor factor;
  Eigen::MatrixXd lbeta;      // lower Cholesky of V_beta; empty for flat priors
  Eigen::VectorXd prior_mu;
  double a_star = 0.0, b_star = 0.0;
  double a_sigma = 0.0, b_sigma = 0.0;
  double delta2 = 0.0, phi = 0.0;
  int fit_iters = 0;
  double fit_residual = 0.0;

  int n() const { return sys.n; }
  int p() const { return sys.p; }
  Eigen::VectorXd beta_hat() const { return gamma_hat.head(p()); }
  Eigen::VectorXd w_hat() const { return gamma_hat.tail(n()); }
  double sigma2_mean() const { return b_star / (a_star - 1.0); }
};

struct PosteriorDraws {
  Eigen::MatrixXd beta;    // p x L
  Eigen::MatrixXd w;       // n x L
  Eigen::VectorXd sigma2;  // L
  Eigen::VectorXd tau2;    // L
  std::uint64_t seed = 0;
  std::vector<int> cg_iters;
  std::vector<double> cg_residuals;

  int count() const { return static_cast<int>(sigma2.size()); }
};

// Fits the conjugate latent model at fixed (phi, delta2): gamma_hat from a
// CG solve of the augmented normal equations, then the NIG scale update
// computed blockwise from the stacked residual.
inline NIGPosterior fit_latent(const Eigen::Ref<const Eigen::MatrixXd>& x,
                               const Eigen::Ref<const Eigen::VectorXd>& y,
                               const NNGPFactor& factor, double delta2, const BetaPrior& prior,
                               const CGConfig& cfg = {}) {
  const int n = factor.n();
  const int p = static_cast<int>(x.cols());
  if (y.size() != n || x.rows() != n) throw std::invalid_argument("fit_latent: dimension mismatch");
  if (!(prior.a_sigma > 0.0) || !(prior.b_sigma > 0.0))
    throw std::invalid_argument("fit_latent: NIG hyperparameters must be positive");

  NIGPosterior post;
  post.sys = assemble_normal_equations(x, factor, delta2, prior);
  Eigen::VectorXd rhs = assemble_rhs(x, y, factor, delta2, prior);
  CGResult sol = cg_solve(post.sys, rhs, cfg);
  post.gamma_hat = std::move(sol.x);
  post.fit_iters = sol.iters;
  post.fit_residual = sol.rel_residual;
  post.factor = factor;
  post.a_sigma = prior.a_sigma;
  post.b_sigma = prior.b_sigma;
  post.delta2 = delta2;
  post.phi = factor.phi;
  if (prior.proper) {
    Eigen::LLT<Eigen::MatrixXd> llt(prior.proper->v);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("fit_latent: V_beta not SPD");
    post.lbeta = llt.matrixL();
    post.prior_mu = prior.proper->mu;
  }

  const Eigen::VectorXd beta = post.gamma_hat.head(p);
  const Eigen::VectorXd w = post.gamma_hat.tail(n);
  Eigen::VectorXd data_resid = y - w;
  if (p > 0) data_resid -= x * beta;
  double quad = data_resid.squaredNorm() / delta2 + factor.quad_form(w);
  if (prior.proper) {
    Eigen::VectorXd db = post.lbeta.triangularView<Eigen::Lower>().solve(beta - post.prior_mu);
    quad += db.squaredNorm();
  }
  post.a_star = prior.a_sigma + 0.5 * n;
  post.b_star = prior.b_sigma + 0.5 * quad;
  return post;
}

// Exact posterior sampling: sigma^2 from IG(a*, b*), then gamma = gamma_hat
// + v where X*^T X* v = X*^T u and u ~ N(0, sigma^2 I). The stacked u is
// never materialized against a dense X*; each segment enters through the
// block actions. Draw l uses the (seed, l) substream, so any parallel
// schedule gives identical output.
inline PosteriorDraws sample_latent(const NIGPosterior& post, int num_draws, std::uint64_t seed,
                                    const CGConfig& cfg = {}) {
  const int n = post.n();
  const int p = post.p();
  const bool proper = post.lbeta.size() > 0;
  const double delta = std::sqrt(post.delta2);

  PosteriorDraws draws;
  draws.beta.resize(p, num_draws);
  draws.w.resize(n, num_draws);
  draws.sigma2.resize(num_draws);
  draws.tau2.resize(num_draws);
  draws.seed = seed;
  draws.cg_iters.resize(num_draws);
  draws.cg_residuals.resize(num_draws);

  std::vector<std::string> failures(num_draws);
#pragma omp parallel for schedule(dynamic)
  for (int l = 0; l < num_draws; ++l) {
    try {
      std::mt19937_64 gen = substream(seed, static_cast<std::uint64_t>(l));
      const double sigma2 = draw_inverse_gamma(gen, post.a_star, post.b_star);
      const double sigma = std::sqrt(sigma2);
      std::normal_distribution<double> stdnorm(0.0, 1.0);

      Eigen::VectorXd u1(n), u3(n);
      for (int i = 0; i < n; ++i) u1[i] = sigma * stdnorm(gen);
      Eigen::VectorXd u2(proper ? p : 0);
      for (int i = 0; i < u2.size(); ++i) u2[i] = sigma * stdnorm(gen);
      for (int i = 0; i < n; ++i) u3[i] = sigma * stdnorm(gen);

      Eigen::VectorXd rhs(n + p);
      if (p > 0) {
        rhs.head(p) = post.sys.bwt.transpose() * u1 * delta;  // (1/delta) X^T u1
        if (proper)
          rhs.head(p) +=
              post.lbeta.transpose().triangularView<Eigen::Upper>().solve(u2);  // L^-T u2
      }
      rhs.tail(n) = u1 / delta;
      Eigen::VectorXd dinv_u3 = u3.cwiseQuotient(post.factor.d.cwiseSqrt());
      rhs.tail(n) += post.factor.apply_ImA_T(dinv_u3);

      CGResult sol = cg_solve(post.sys, rhs, cfg);
      draws.beta.col(l) = post.gamma_hat.head(p) + sol.x.head(p);
      draws.w.col(l) = post.gamma_hat.tail(n) + sol.x.tail(n);
      draws.sigma2[l] = sigma2;
      draws.tau2[l] = post.delta2 * sigma2;
      draws.cg_iters[l] = sol.iters;
      draws.cg_residuals[l] = sol.rel_residual;
    } catch (const std::exception& e) {
      failures[l] = e.what();
    }
  }
  for (int l = 0; l < num_draws; ++l)
    if (!failures[l].empty())
      throw std::runtime_error("sample_latent: draw " + std::to_string(l) + " failed: " +
                               failures[l]);
  return draws;
}

// Marginal NIG posterior of (beta, sigma^2) under the conjugate response
// model, where the spatial structure lives in the outcome covariance
// sigma^2 K, K = M + delta^2 I. Only p x p dense algebra.
struct ResponsePosterior {
  Eigen::VectorXd mu;    // mu*
  Eigen::MatrixXd v;     // V*
  double a_star = 0.0, b_star = 0.0;
  double phi = 0.0, delta2 = 0.0;
};

namespace detail {

// D^{-1/2} (I - A) applied to each column: the whitening action of the
// response factor.
inline Eigen::MatrixXd whiten(const NNGPFactor& f, const Eigen::Ref<const Eigen::MatrixXd>& m) {
  const int n = f.n();
  Eigen::MatrixXd out(n, m.cols());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const double s = 1.0 / std::sqrt(f.d[i]);
    for (int c = 0; c < m.cols(); ++c) {
      double r = m(i, c);
      for (std::int64_t k = f.row_ptr[i]; k < f.row_ptr[i + 1]; ++k)
        r -= f.vals[k] * m(f.cols[k], c);
      out(i, c) = r * s;
    }
  }
  return out;
}

}  // namespace detail

inline ResponsePosterior fit_response(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                      const Eigen::Ref<const Eigen::VectorXd>& y,
                                      const NNGPFactor& factor, const BetaPrior& prior) {
  if (factor.target != FactorTarget::Response)
    throw std::invalid_argument("fit_response: factor must target the response model");
  const int n = factor.n();
  const int p = static_cast<int>(x.cols());
  if (y.size() != n || x.rows() != n)
    throw std::invalid_argument("fit_response: dimension mismatch");
  if (prior.flat() && p >= n)
    throw std::invalid_argument("fit_response: flat prior requires p < n");
  if (!(prior.a_sigma > 0.0) || !(prior.b_sigma > 0.0))
    throw std::invalid_argument("fit_response: NIG hyperparameters must be positive");

  const Eigen::MatrixXd xw = detail::whiten(factor, x);
  const Eigen::VectorXd yw = detail::whiten(factor, y);

  ResponsePosterior post;
  post.phi = factor.phi;
  post.delta2 = factor.delta2;
  post.a_star = prior.a_sigma + 0.5 * n;

  Eigen::MatrixXd vinv = xw.transpose() * xw;
  Eigen::VectorXd rhs = xw.transpose() * yw;
  double prior_quad = 0.0;
  if (prior.proper) {
    Eigen::LLT<Eigen::MatrixXd> llt(prior.proper->v);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("fit_response: V_beta not SPD");
    const Eigen::MatrixXd vbinv = llt.solve(Eigen::MatrixXd::Identity(p, p));
    vinv += vbinv;
    rhs += vbinv * prior.proper->mu;
    prior_quad = prior.proper->mu.dot(vbinv * prior.proper->mu);
  }
  if (p > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(vinv);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("fit_response: posterior precision not SPD");
    post.v = llt.solve(Eigen::MatrixXd::Identity(p, p));
    post.mu = llt.solve(rhs);
  } else {
    post.v.resize(0, 0);
    post.mu.resize(0);
  }
  const double mu_quad = p > 0 ? post.mu.dot(vinv * post.mu) : 0.0;
  post.b_star = prior.b_sigma + 0.5 * (prior_quad + yw.squaredNorm() - mu_quad);
  return post;
}

}  // namespace cnngp
