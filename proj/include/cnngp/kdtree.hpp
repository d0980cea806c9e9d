#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

namespace cnngp {

// Neighbor candidate ordered by (squared distance, index). The index
// tie-break makes every query result platform-independent.
struct Neighbor {
  double d2;
  int index;
};

inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return a.d2 < b.d2 || (a.d2 == b.d2 && a.index < b.index);
}

// Static 2-d KD-tree with exact k-nearest-neighbor queries. Queries carry no
// shared state, so they can run fully in parallel on one tree. A query can
// restrict candidates to indices below a limit, which is how training graphs
// search only among predecessors in the location ordering.
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(const Eigen::Ref<const Eigen::MatrixX2d>& pts) : pts_(pts) {
    const int n = static_cast<int>(pts_.rows());
    perm_.resize(n);
    std::iota(perm_.begin(), perm_.end(), 0);
    nodes_.reserve(n / 4 + 8);
    if (n > 0) root_ = build(0, n, 0);
  }

  int size() const { return static_cast<int>(pts_.rows()); }

  // k nearest neighbors of q among points with index < index_limit
  // (index_limit < 0 means no restriction). Result sorted ascending by
  // (distance, index). Exactly matches a filtered brute-force scan.
  std::vector<Neighbor> knn(double qx, double qy, int k, int index_limit = -1) const {
    Query query;
    query.qx = qx;
    query.qy = qy;
    query.k = k;
    query.limit = index_limit;
    query.heap.reserve(k > 0 ? k : 0);
    if (root_ >= 0 && k > 0) search(root_, query);
    std::vector<Neighbor> out = std::move(query.heap);
    std::sort(out.begin(), out.end(), neighbor_less);
    return out;
  }

 private:
  struct Node {
    double split;
    int axis;
    int left = -1, right = -1;
    int begin, end;  // leaf payload range in perm_
    bool leaf;
  };

  struct Query {
    std::vector<Neighbor> heap;  // max-heap under neighbor_less
    double qx, qy;
    int k, limit;
  };

  static constexpr int kLeafSize = 12;

  int build(int begin, int end, int depth) {
    Node nd;
    nd.begin = begin;
    nd.end = end;
    if (end - begin <= kLeafSize) {
      nd.leaf = true;
      nodes_.push_back(nd);
      return static_cast<int>(nodes_.size()) - 1;
    }
    nd.leaf = false;
    nd.axis = depth % 2;
    const int mid = begin + (end - begin) / 2;
    std::nth_element(perm_.begin() + begin, perm_.begin() + mid, perm_.begin() + end,
                     [&](int a, int b) { return pts_(a, nd.axis) < pts_(b, nd.axis); });
    nd.split = pts_(perm_[mid], nd.axis);
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(nd);
    const int l = build(begin, mid, depth + 1);
    const int r = build(mid, end, depth + 1);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void consider(int idx, Query& q) const {
    if (q.limit >= 0 && idx >= q.limit) return;
    const double dx = pts_(idx, 0) - q.qx;
    const double dy = pts_(idx, 1) - q.qy;
    Neighbor cand{dx * dx + dy * dy, idx};
    if (static_cast<int>(q.heap.size()) < q.k) {
      q.heap.push_back(cand);
      std::push_heap(q.heap.begin(), q.heap.end(), neighbor_less);
    } else if (neighbor_less(cand, q.heap.front())) {
      std::pop_heap(q.heap.begin(), q.heap.end(), neighbor_less);
      q.heap.back() = cand;
      std::push_heap(q.heap.begin(), q.heap.end(), neighbor_less);
    }
  }

  void search(int id, Query& q) const {
    const Node& nd = nodes_[id];
    if (nd.leaf) {
      for (int i = nd.begin; i < nd.end; ++i) consider(perm_[i], q);
      return;
    }
    const double qc = nd.axis == 0 ? q.qx : q.qy;
    const double diff = qc - nd.split;
    const int near = diff < 0 ? nd.left : nd.right;
    const int far = diff < 0 ? nd.right : nd.left;
    search(near, q);
    // An equal-distance point with a smaller index can still displace the
    // current worst, so prune only on a strictly larger plane distance.
    if (static_cast<int>(q.heap.size()) < q.k || diff * diff <= q.heap.front().d2) search(far, q);
  }

  Eigen::MatrixX2d pts_;
  std::vector<int> perm_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace cnngp
