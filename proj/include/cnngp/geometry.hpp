#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "cnngp/kdtree.hpp"

namespace cnngp {

enum class CoordKind { Raw, Projected };

enum class OrderingStrategy {
  CoordAscending,   // ascending first coordinate, ties by second
  CoordYAscending,  // ascending second coordinate, ties by first
  None,             // keep input order
};

// Ordered planar coordinates with provenance. `order` is the permutation the
// last ordering step applied (order[k] = input position now stored at k) and
// `id_map` traces each row back to the original raw record.
struct LocationSet {
  Eigen::MatrixX2d coords;
  std::vector<int> order;
  std::vector<int> id_map;
  CoordKind kind = CoordKind::Raw;

  int size() const { return static_cast<int>(coords.rows()); }
};

inline LocationSet make_location_set(Eigen::MatrixX2d coords, CoordKind kind = CoordKind::Raw) {
  LocationSet ls;
  ls.coords = std::move(coords);
  ls.order.resize(ls.coords.rows());
  ls.id_map.resize(ls.coords.rows());
  std::iota(ls.order.begin(), ls.order.end(), 0);
  std::iota(ls.id_map.begin(), ls.id_map.end(), 0);
  ls.kind = kind;
  return ls;
}

// Equal-area sinusoidal projection of lon/lat degrees into 1000-km planar
// units: x = R lambda cos(phi), y = R phi with angles in radians.
inline LocationSet project_sinusoidal(const Eigen::Ref<const Eigen::MatrixX2d>& lonlat,
                                      double radius_km = 6371.0) {
  const int n = static_cast<int>(lonlat.rows());
  Eigen::MatrixX2d out(n, 2);
  const double r = radius_km / 1000.0;
  const double to_rad = M_PI / 180.0;
  for (int i = 0; i < n; ++i) {
    const double lon = lonlat(i, 0), lat = lonlat(i, 1);
    if (!(lon >= -180.0 && lon <= 180.0))
      throw std::invalid_argument("project_sinusoidal: longitude out of [-180, 180] at row " +
                                  std::to_string(i));
    if (!(lat >= -90.0 && lat <= 90.0))
      throw std::invalid_argument("project_sinusoidal: latitude out of [-90, 90] at row " +
                                  std::to_string(i));
    const double lam = lon * to_rad, phi = lat * to_rad;
    out(i, 0) = r * lam * std::cos(phi);
    out(i, 1) = r * phi;
  }
  return make_location_set(std::move(out), CoordKind::Projected);
}

// Permutes rows per the strategy and records the applied permutation.
inline LocationSet order_locations(const LocationSet& locs,
                                   OrderingStrategy strategy = OrderingStrategy::CoordAscending) {
  const int n = locs.size();
  if (n < 1) throw std::invalid_argument("order_locations: empty location set");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  switch (strategy) {
    case OrderingStrategy::CoordAscending:
      std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) {
        if (locs.coords(a, 0) != locs.coords(b, 0)) return locs.coords(a, 0) < locs.coords(b, 0);
        return locs.coords(a, 1) < locs.coords(b, 1);
      });
      break;
    case OrderingStrategy::CoordYAscending:
      std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) {
        if (locs.coords(a, 1) != locs.coords(b, 1)) return locs.coords(a, 1) < locs.coords(b, 1);
        return locs.coords(a, 0) < locs.coords(b, 0);
      });
      break;
    case OrderingStrategy::None:
      break;
  }
  LocationSet out;
  out.coords.resize(n, 2);
  out.order = perm;
  out.id_map.resize(n);
  out.kind = locs.kind;
  for (int k = 0; k < n; ++k) {
    out.coords.row(k) = locs.coords.row(perm[k]);
    out.id_map[k] = locs.id_map[perm[k]];
  }
  return out;
}

// Restricts a location set to the given positions (in the given order),
// keeping provenance through id_map.
inline LocationSet subset_locations(const LocationSet& locs, const std::vector<int>& positions) {
  LocationSet out;
  out.coords.resize(positions.size(), 2);
  out.order.resize(positions.size());
  out.id_map.resize(positions.size());
  out.kind = locs.kind;
  for (std::size_t k = 0; k < positions.size(); ++k) {
    out.coords.row(k) = locs.coords.row(positions[k]);
    out.order[k] = positions[k];
    out.id_map[k] = locs.id_map[positions[k]];
  }
  return out;
}

enum class GraphKind { Training, Prediction };

// Per-location parent sets. Training graphs condition each location on its
// nearest predecessors; prediction graphs attach each new site to its m
// nearest observed locations. Parents are sorted by ascending distance with
// ties broken by ascending index.
struct NeighborGraph {
  int m = 0;
  GraphKind kind = GraphKind::Training;
  std::vector<std::vector<int>> parents;
  std::vector<std::vector<double>> parent_dist;

  int size() const { return static_cast<int>(parents.size()); }
};

namespace detail {

inline void knn_into(const Eigen::MatrixX2d& pts, const KdTree& tree, double qx, double qy, int k,
                     int limit, std::vector<int>& idx, std::vector<double>& dist) {
  // Brute force below a small predecessor count; the filtered tree query is
  // the fast path once enough of the tree is admissible.
  std::vector<Neighbor> found;
  const int pool = limit >= 0 ? limit : static_cast<int>(pts.rows());
  if (pool <= 256 || pool <= k) {
    found.reserve(pool);
    for (int j = 0; j < pool; ++j) {
      const double dx = pts(j, 0) - qx, dy = pts(j, 1) - qy;
      found.push_back({dx * dx + dy * dy, j});
    }
    const int keep = std::min(k, pool);
    std::partial_sort(found.begin(), found.begin() + keep, found.end(), neighbor_less);
    found.resize(keep);
  } else {
    found = tree.knn(qx, qy, k, limit);
  }
  idx.resize(found.size());
  dist.resize(found.size());
  for (std::size_t j = 0; j < found.size(); ++j) {
    idx[j] = found[j].index;
    dist[j] = std::sqrt(found[j].d2);
  }
}

}  // namespace detail

// Training DAG: Pa[0] empty, Pa[i] = the min(i, m) nearest points among
// positions 0..i-1.
inline NeighborGraph build_training_neighbors(const LocationSet& locs, int m) {
  const int n = locs.size();
  if (m < 1) throw std::invalid_argument("build_training_neighbors: m must be >= 1");
  if (n < 2) throw std::invalid_argument("build_training_neighbors: need at least 2 locations");
  NeighborGraph g;
  g.m = m;
  g.kind = GraphKind::Training;
  g.parents.resize(n);
  g.parent_dist.resize(n);
  KdTree tree(locs.coords);
#pragma omp parallel for schedule(dynamic, 64)
  for (int i = 1; i < n; ++i) {
    detail::knn_into(locs.coords, tree, locs.coords(i, 0), locs.coords(i, 1), std::min(m, i), i,
                     g.parents[i], g.parent_dist[i]);
  }
  return g;
}

// Prediction graph: every site gets exactly m parents among the training set.
inline NeighborGraph build_prediction_neighbors(const LocationSet& train, const LocationSet& pred,
                                                int m) {
  const int n = train.size();
  const int np = pred.size();
  if (n < 1) throw std::invalid_argument("build_prediction_neighbors: empty training set");
  if (m < 1 || m > n)
    throw std::invalid_argument("build_prediction_neighbors: m must be in [1, n_train]");
  NeighborGraph g;
  g.m = m;
  g.kind = GraphKind::Prediction;
  g.parents.resize(np);
  g.parent_dist.resize(np);
  KdTree tree(train.coords);
#pragma omp parallel for schedule(dynamic, 64)
  for (int i = 0; i < np; ++i) {
    detail::knn_into(train.coords, tree, pred.coords(i, 0), pred.coords(i, 1), m, -1, g.parents[i],
                     g.parent_dist[i]);
  }
  return g;
}

// Largest pairwise distance; exact up to n = 10^4, bounding-box diagonal
// upper bound above that.
inline double max_distance(const LocationSet& locs) {
  const int n = locs.size();
  if (n < 1) return 0.0;
  if (n <= 10000) {
    double best = 0.0;
#pragma omp parallel for schedule(static) reduction(max : best)
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const double dx = locs.coords(i, 0) - locs.coords(j, 0);
        const double dy = locs.coords(i, 1) - locs.coords(j, 1);
        const double d2 = dx * dx + dy * dy;
        if (d2 > best) best = d2;
      }
    }
    return std::sqrt(best);
  }
  const Eigen::Vector2d lo = locs.coords.colwise().minCoeff();
  const Eigen::Vector2d hi = locs.coords.colwise().maxCoeff();
  return (hi - lo).norm();
}

}  // namespace cnngp
