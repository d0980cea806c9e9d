#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cnngp/geometry.hpp"

namespace cnngp {

enum class KernelFamily { Exponential };

inline KernelFamily kernel_family_from_string(const std::string& s) {
  if (s == "exponential") return KernelFamily::Exponential;
  throw std::invalid_argument("unknown kernel family: " + s);
}

inline const char* to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::Exponential:
      return "exponential";
  }
  return "?";
}

// Correlation kernel on the scale M with C = sigma^2 M, so factors built
// from it carry no variance component.
struct KernelSpec {
  KernelFamily family = KernelFamily::Exponential;
  double phi = 1.0;  // spatial decay, 1/distance

  KernelSpec() = default;
  KernelSpec(KernelFamily fam, double decay) : family(fam), phi(decay) {
    if (!(phi > 0.0)) throw std::invalid_argument("KernelSpec: phi must be positive");
  }
  explicit KernelSpec(double decay) : KernelSpec(KernelFamily::Exponential, decay) {}
};

inline double corr(const KernelSpec& spec, double dist) {
  if (dist < 0.0) throw std::invalid_argument("corr: negative distance");
  switch (spec.family) {
    case KernelFamily::Exponential:
      return std::exp(-spec.phi * dist);
  }
  return 0.0;
}

// Variance components: partial sill sigma^2 and noise-to-sill ratio
// delta^2 = tau^2 / sigma^2.
struct VarianceSpec {
  double sigma2;
  double delta2;

  VarianceSpec(double s2, double d2) : sigma2(s2), delta2(d2) {
    if (!(sigma2 > 0.0)) throw std::invalid_argument("VarianceSpec: sigma2 must be positive");
    if (!(delta2 > 0.0)) throw std::invalid_argument("VarianceSpec: delta2 must be positive");
  }

  double tau2() const { return delta2 * sigma2; }
};

// Candidate grid for (phi, delta^2), stored ascending. Bounds are kept so a
// refinement stage can clamp to the original search box.
struct HyperGrid {
  std::vector<double> phis;
  std::vector<double> delta2s;
  double phi_lo = 0, phi_hi = 0;
  double delta2_lo = 0, delta2_hi = 0;
};

namespace detail {

inline std::vector<double> log_spaced(double lo, double hi, int levels) {
  if (levels < 1) throw std::invalid_argument("grid levels must be >= 1");
  std::vector<double> out;
  out.reserve(levels);
  if (levels == 1) {
    out.push_back(std::sqrt(lo * hi));  // geometric mean of the bounds
    return out;
  }
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i < levels; ++i)
    out.push_back(std::exp(llo + (lhi - llo) * static_cast<double>(i) / (levels - 1)));
  return out;
}

}  // namespace detail

// Coarse search box: phi in [3/maxdist, 300/maxdist] so correlation at the
// domain diameter spans [exp(-300), 0.05], delta^2 in [0.001, 1000]. Points
// are log-spaced on both axes.
inline HyperGrid default_grid(const LocationSet& locs, int levels_phi, int levels_delta) {
  if (locs.size() < 2) throw std::invalid_argument("default_grid: need at least 2 locations");
  const double maxdist = max_distance(locs);
  if (!(maxdist > 0.0))
    throw std::invalid_argument("default_grid: all locations coincide (maxdist = 0)");
  HyperGrid g;
  g.phi_lo = 3.0 / maxdist;
  g.phi_hi = 300.0 / maxdist;
  g.delta2_lo = 1e-3;
  g.delta2_hi = 1e3;
  g.phis = detail::log_spaced(g.phi_lo, g.phi_hi, levels_phi);
  g.delta2s = detail::log_spaced(g.delta2_lo, g.delta2_hi, levels_delta);
  return g;
}

inline HyperGrid make_grid(double phi_lo, double phi_hi, int levels_phi, double delta2_lo,
                           double delta2_hi, int levels_delta) {
  if (!(phi_lo > 0 && phi_hi >= phi_lo && delta2_lo > 0 && delta2_hi >= delta2_lo))
    throw std::invalid_argument("make_grid: bounds must be positive and ordered");
  HyperGrid g;
  g.phi_lo = phi_lo;
  g.phi_hi = phi_hi;
  g.delta2_lo = delta2_lo;
  g.delta2_hi = delta2_hi;
  g.phis = detail::log_spaced(phi_lo, phi_hi, levels_phi);
  g.delta2s = detail::log_spaced(delta2_lo, delta2_hi, levels_delta);
  return g;
}

namespace detail {

// Log-scale window of width shrink * original, centered on the selected
// value but shifted (not cut) to stay inside the original bounds.
inline void shrunk_window(double lo, double hi, double best, double shrink, double& out_lo,
                          double& out_hi) {
  const double llo = std::log(lo), lhi = std::log(hi);
  const double half = shrink * (lhi - llo) / 2.0;
  double c = std::log(best);
  if (c - half < llo) c = llo + half;
  if (c + half > lhi) c = lhi - half;
  out_lo = std::exp(c - half);
  out_hi = std::exp(c + half);
}

}  // namespace detail

// Shrinks the search box around the current best cell and re-grids it.
inline HyperGrid refine_grid(const HyperGrid& grid, double best_phi, double best_delta2,
                             double shrink, int levels) {
  if (!(shrink > 0.0 && shrink <= 1.0))
    throw std::invalid_argument("refine_grid: shrink must be in (0, 1]");
  HyperGrid g;
  detail::shrunk_window(grid.phi_lo, grid.phi_hi, best_phi, shrink, g.phi_lo, g.phi_hi);
  detail::shrunk_window(grid.delta2_lo, grid.delta2_hi, best_delta2, shrink, g.delta2_lo,
                        g.delta2_hi);
  g.phis = detail::log_spaced(g.phi_lo, g.phi_hi, levels);
  g.delta2s = detail::log_spaced(g.delta2_lo, g.delta2_hi, levels);
  return g;
}

}  // namespace cnngp
