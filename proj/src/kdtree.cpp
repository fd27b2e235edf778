#include "soda/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>

namespace soda {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t f = 0; f < a.size(); ++f) {
    double d = a[f] - b[f];
    sum += d * d;
  }
  return sum;
}

KdTree::KdTree(std::vector<double> points, std::size_t dim, std::size_t leaf_size)
    : dim_(dim), leaf_size_(std::clamp<std::size_t>(leaf_size, 1, kMaxLeaf)), points_(std::move(points)) {
  std::size_t n = size();
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0);
  if (n > 0) build(0, n);
  packed_.resize(points_.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < dim_; ++f) packed_[f * n + i] = points_[order_[i] * dim_ + f];
  }
}

void KdTree::leaf_distances(const Node& node, const double* query, double* out) const {
  const std::size_t n = size();
  const std::size_t len = node.end - node.begin;
  std::fill_n(out, len, 0.0);
  for (std::size_t f = 0; f < dim_; ++f) {
    const double* col = packed_.data() + f * n + node.begin;
    const double q = query[f];
    for (std::size_t l = 0; l < len; ++l) {
      double d = q - col[l];
      out[l] += d * d;
    }
  }
}

int KdTree::build(std::size_t begin, std::size_t end) {
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end, -1, -1});
  lo_.resize(lo_.size() + dim_, std::numeric_limits<double>::infinity());
  hi_.resize(hi_.size() + dim_, -std::numeric_limits<double>::infinity());
  double* lo = lo_.data() + id * dim_;
  double* hi = hi_.data() + id * dim_;
  for (std::size_t i = begin; i < end; ++i) {
    const double* p = points_.data() + order_[i] * dim_;
    for (std::size_t f = 0; f < dim_; ++f) {
      lo[f] = std::min(lo[f], p[f]);
      hi[f] = std::max(hi[f], p[f]);
    }
  }
  if (end - begin <= leaf_size_) return id;

  std::size_t axis = 0;
  double spread = -1.0;
  for (std::size_t f = 0; f < dim_; ++f) {
    if (hi[f] - lo[f] > spread) {
      spread = hi[f] - lo[f];
      axis = f;
    }
  }
  if (spread <= 0.0) return id;  // all points identical

  std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::size_t a, std::size_t b) {
                     double va = points_[a * dim_ + axis], vb = points_[b * dim_ + axis];
                     return va < vb || (va == vb && a < b);
                   });
  int left = build(begin, mid);
  int right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

double KdTree::box_bound(int node, std::span<const double> query) const {
  const double* lo = lo_.data() + node * dim_;
  const double* hi = hi_.data() + node * dim_;
  double sum = 0.0;
  for (std::size_t f = 0; f < dim_; ++f) {
    double gap = 0.0;
    if (query[f] < lo[f]) {
      gap = lo[f] - query[f];
    } else if (query[f] > hi[f]) {
      gap = query[f] - hi[f];
    }
    sum += gap * gap;
  }
  return sum;
}

template <class Heap>
void KdTree::search(int node_id, std::span<const double> query, std::size_t k,
                    std::optional<std::size_t> excluded, Heap& heap) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    double stack[kMaxLeaf];
    std::vector<double> spill;
    double* dist = stack;
    if (node.end - node.begin > kMaxLeaf) dist = (spill.resize(node.end - node.begin), spill.data());
    leaf_distances(node, query.data(), dist);
    for (std::size_t i = node.begin; i < node.end; ++i) {
      std::size_t idx = order_[i];
      if (excluded && *excluded == idx) continue;
      Neighbor cand{dist[i - node.begin], idx};
      if (heap.size() < k) {
        heap.push(cand);
      } else if (cand < heap.top()) {
        heap.pop();
        heap.push(cand);
      }
    }
    return;
  }
  double bl = box_bound(node.left, query);
  double br = box_bound(node.right, query);
  int first = node.left, second = node.right;
  double bfirst = bl, bsecond = br;
  if (br < bl) {
    std::swap(first, second);
    std::swap(bfirst, bsecond);
  }
  if (heap.size() < k || !(bfirst > heap.top().dist2)) search(first, query, k, excluded, heap);
  if (heap.size() < k || !(bsecond > heap.top().dist2)) search(second, query, k, excluded, heap);
}

std::vector<Neighbor> KdTree::knn(std::span<const double> query, std::size_t k,
                                  std::optional<std::size_t> excluded) const {
  std::priority_queue<Neighbor> heap;
  if (k > 0 && !nodes_.empty()) search(0, query, k, excluded, heap);
  std::vector<Neighbor> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top();
    heap.pop();
  }
  return out;
}

double KdTree::box_box_bound(int node, const double* qlo, const double* qhi) const {
  const double* lo = lo_.data() + node * dim_;
  const double* hi = hi_.data() + node * dim_;
  double sum = 0.0;
  for (std::size_t f = 0; f < dim_; ++f) {
    double gap = 0.0;
    if (qhi[f] < lo[f]) {
      gap = lo[f] - qhi[f];
    } else if (qlo[f] > hi[f]) {
      gap = qlo[f] - hi[f];
    }
    sum += gap * gap;
  }
  return sum;
}

struct KdTree::Block {
  std::size_t k = 0;
  const double* lo = nullptr;
  const double* hi = nullptr;
  std::vector<const double*> queries;
  std::vector<std::optional<std::size_t>> excluded;
  std::vector<std::vector<Neighbor>> heaps;  // max-heaps under Neighbor::operator<
  std::vector<double> worst;
  double max_worst = std::numeric_limits<double>::infinity();
};

void KdTree::search_block(int node_id, Block& block) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    for (std::size_t j = 0; j < block.queries.size(); ++j) {
      std::span<const double> q(block.queries[j], dim_);
      if (box_bound(node_id, q) > block.worst[j]) continue;
      auto& heap = block.heaps[j];
      const auto& excluded = block.excluded[j];
      double stack[kMaxLeaf];
      std::vector<double> spill;
      double* dist = stack;
      if (node.end - node.begin > kMaxLeaf) dist = (spill.resize(node.end - node.begin), spill.data());
      leaf_distances(node, q.data(), dist);
      for (std::size_t i = node.begin; i < node.end; ++i) {
        std::size_t idx = order_[i];
        if (excluded && *excluded == idx) continue;
        if (heap.size() >= block.k && dist[i - node.begin] > block.worst[j]) continue;
        Neighbor cand{dist[i - node.begin], idx};
        if (heap.size() < block.k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end());
        } else if (cand < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      if (heap.size() >= block.k) block.worst[j] = heap.front().dist2;
    }
    block.max_worst = *std::max_element(block.worst.begin(), block.worst.end());
    return;
  }
  double bl = box_box_bound(node.left, block.lo, block.hi);
  double br = box_box_bound(node.right, block.lo, block.hi);
  int first = node.left, second = node.right;
  double bfirst = bl, bsecond = br;
  if (br < bl) {
    std::swap(first, second);
    std::swap(bfirst, bsecond);
  }
  if (!(bfirst > block.max_worst)) search_block(first, block);
  if (!(bsecond > block.max_worst)) search_block(second, block);
}

std::vector<std::vector<Neighbor>> KdTree::knn_batch(std::span<const double> queries, std::size_t k,
                                                     std::span<const std::optional<std::size_t>> excluded) const {
  const std::size_t m = dim_ ? queries.size() / dim_ : 0;
  if (!excluded.empty() && excluded.size() != m) {
    throw std::invalid_argument("knn_batch: one exclusion entry per query is required");
  }
  std::vector<std::vector<Neighbor>> out(m);
  if (m == 0 || k == 0 || nodes_.empty()) return out;

  // Group queries by the leaves of a tree built over the queries themselves.
  KdTree grouping(std::vector<double>(queries.begin(), queries.end()), dim_, 32);
  for (std::size_t leaf = 0; leaf < grouping.nodes_.size(); ++leaf) {
    const Node& g = grouping.nodes_[leaf];
    if (g.left >= 0) continue;
    Block block;
    block.k = k;
    block.lo = grouping.lo_.data() + leaf * dim_;
    block.hi = grouping.hi_.data() + leaf * dim_;
    for (std::size_t i = g.begin; i < g.end; ++i) {
      std::size_t qi = grouping.order_[i];
      block.queries.push_back(queries.data() + qi * dim_);
      block.excluded.push_back(excluded.empty() ? std::nullopt : excluded[qi]);
    }
    block.heaps.resize(block.queries.size());
    for (auto& h : block.heaps) h.reserve(k);
    block.worst.assign(block.queries.size(), std::numeric_limits<double>::infinity());
    search_block(0, block);
    for (std::size_t j = 0; j < block.queries.size(); ++j) {
      auto& heap = block.heaps[j];
      std::sort_heap(heap.begin(), heap.end());
      out[grouping.order_[g.begin + j]] = std::move(heap);
    }
  }
  return out;
}

std::vector<Neighbor> brute_force_knn(std::span<const double> points, std::size_t dim,
                                      std::span<const double> query, std::size_t k,
                                      std::optional<std::size_t> excluded) {
  std::vector<Neighbor> all;
  std::size_t n = dim ? points.size() / dim : 0;
  all.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (excluded && *excluded == i) continue;
    all.push_back({squared_distance(query, points.subspan(i * dim, dim)), i});
  }
  std::size_t m = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + m, all.end());
  all.resize(m);
  return all;
}

}  // namespace soda
