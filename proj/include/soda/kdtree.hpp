#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace soda {

struct Neighbor {
  double dist2;
  std::size_t index;

  // Neighbors are ranked by distance, then by reference order.
  bool operator<(const Neighbor& o) const {
    return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
  }
  bool operator==(const Neighbor&) const = default;
};

// Squared Euclidean distance, accumulated in coordinate order.
double squared_distance(std::span<const double> a, std::span<const double> b);

// Exact k-nearest-neighbour search over a fixed point set.
//
// Results are identical to a brute-force scan with the same (dist2, index)
// ordering: the box lower bound is accumulated in the same coordinate order
// as the distance, so it never exceeds a point's computed distance, and
// nodes are pruned only when the bound is strictly worse than the current
// k-th neighbour.
class KdTree {
 public:
  KdTree() = default;
  // `points` is row-major, n x dim.
  KdTree(std::vector<double> points, std::size_t dim, std::size_t leaf_size = 64);

  std::size_t size() const { return dim_ ? points_.size() / dim_ : 0; }
  std::size_t dim() const { return dim_; }
  std::span<const double> point(std::size_t i) const { return {points_.data() + i * dim_, dim_}; }

  // Up to k neighbours sorted ascending; `excluded` is skipped if given.
  std::vector<Neighbor> knn(std::span<const double> query, std::size_t k,
                            std::optional<std::size_t> excluded = std::nullopt) const;

  // knn() for every row of `queries` (row-major, m x dim). Spatially close
  // queries are searched together and share pruning, with identical results.
  // `excluded`, if non-empty, holds one entry per query.
  std::vector<std::vector<Neighbor>> knn_batch(std::span<const double> queries, std::size_t k,
                                               std::span<const std::optional<std::size_t>> excluded = {}) const;

 private:
  struct Node {
    std::size_t begin = 0, end = 0;  // range in order_
    int left = -1, right = -1;
  };

  // Upper bound on leaf_size; only sets of identical points make larger leaves.
  static constexpr std::size_t kMaxLeaf = 512;

  int build(std::size_t begin, std::size_t end);
  // Squared distances from `query` to every point of a leaf, in leaf order.
  void leaf_distances(const Node& node, const double* query, double* out) const;
  template <class Heap>
  void search(int node, std::span<const double> query, std::size_t k,
              std::optional<std::size_t> excluded, Heap& heap) const;
  double box_bound(int node, std::span<const double> query) const;
  double box_box_bound(int node, const double* lo, const double* hi) const;
  struct Block;
  void search_block(int node, Block& block) const;

  std::size_t dim_ = 0;
  std::size_t leaf_size_ = 24;
  std::vector<double> points_;    // original order
  std::vector<std::size_t> order_;
  std::vector<double> packed_;    // feature-major (dim x n), points in leaf order
  std::vector<Node> nodes_;
  std::vector<double> lo_, hi_;   // per-node bounding boxes
};

// Reference implementation used to cross-check the tree.
std::vector<Neighbor> brute_force_knn(std::span<const double> points, std::size_t dim,
                                      std::span<const double> query, std::size_t k,
                                      std::optional<std::size_t> excluded = std::nullopt);

}  // namespace soda
