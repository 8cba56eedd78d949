#include "knn_index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cltmle/error.hpp"

namespace cltmle {

KnnIndex::KnnIndex(const Eigen::MatrixXd& x, int leaf_size)
    : dim_(static_cast<int>(x.cols())), n_(x.rows()) {
  if (n_ == 0) throw ArgumentError("knn: empty training set");
  center_.assign(static_cast<std::size_t>(dim_), 0.0);
  inv_scale_.assign(static_cast<std::size_t>(dim_), 1.0);
  for (int j = 0; j < dim_; ++j) {
    const double mean = x.col(j).mean();
    const double var = (x.col(j).array() - mean).square().mean();
    center_[static_cast<std::size_t>(j)] = mean;
    if (var > 1e-24) inv_scale_[static_cast<std::size_t>(j)] = 1.0 / std::sqrt(var);
  }
  points_.resize(static_cast<std::size_t>(n_) * static_cast<std::size_t>(dim_));
  for (Eigen::Index i = 0; i < n_; ++i) {
    for (int j = 0; j < dim_; ++j) {
      points_[static_cast<std::size_t>(i) * static_cast<std::size_t>(dim_) +
              static_cast<std::size_t>(j)] =
          (x(i, j) - center_[static_cast<std::size_t>(j)]) * inv_scale_[static_cast<std::size_t>(j)];
    }
  }
  order_.resize(static_cast<std::size_t>(n_));
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(static_cast<std::size_t>(2 * n_ / std::max(1, leaf_size) + 2));
  build(0, static_cast<int>(n_), std::max(1, leaf_size));
}

int KnnIndex::build(int begin, int end, int leaf_size) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size || dim_ == 0) return id;

  auto coord = [this](int row, int d) {
    return points_[static_cast<std::size_t>(row) * static_cast<std::size_t>(dim_) +
                   static_cast<std::size_t>(d)];
  };
  int best_dim = -1;
  double best_spread = 0.0, best_lo = 0.0, best_hi = 0.0;
  for (int d = 0; d < dim_; ++d) {
    double lo = coord(order_[static_cast<std::size_t>(begin)], d), hi = lo;
    for (int i = begin + 1; i < end; ++i) {
      const double v = coord(order_[static_cast<std::size_t>(i)], d);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo > best_spread) {
      best_spread = hi - lo;
      best_dim = d;
      best_lo = lo;
      best_hi = hi;
    }
  }
  if (best_dim < 0) return id;  // all points identical

  auto first = order_.begin() + begin;
  auto last = order_.begin() + end;
  auto mid = first + (end - begin) / 2;
  std::nth_element(first, mid, last,
                   [&](int a, int b) { return coord(a, best_dim) < coord(b, best_dim); });
  double split = coord(*mid, best_dim);
  auto below = [&](double s) {
    return std::partition(first, last, [&](int r) { return coord(r, best_dim) < s; });
  };
  auto cut = below(split);
  if (cut == first || cut == last) {
    split = 0.5 * (best_lo + best_hi);
    cut = below(split);
    if (cut == first || cut == last) {
      split = best_hi;
      cut = below(split);
    }
  }
  const int cut_pos = static_cast<int>(cut - order_.begin());
  double left_max = -HUGE_VAL, right_min = HUGE_VAL;
  for (int i = begin; i < cut_pos; ++i) left_max = std::max(left_max, coord(order_[static_cast<std::size_t>(i)], best_dim));
  for (int i = cut_pos; i < end; ++i) right_min = std::min(right_min, coord(order_[static_cast<std::size_t>(i)], best_dim));
  const int left = build(begin, cut_pos, leaf_size);
  const int right = build(cut_pos, end, leaf_size);
  auto& node = nodes_[static_cast<std::size_t>(id)];
  node.split_dim = best_dim;
  node.split = split;
  node.left_max = left_max;
  node.right_min = right_min;
  node.left = left;
  node.right = right;
  return id;
}

// rd is a lower bound on the squared distance from q to any point under the
// node, accumulated from per-dimension gaps in `off`.
void KnnIndex::search(int node_id, const double* q, int k, double rd, std::vector<double>& off,
                      std::vector<std::pair<double, int>>& heap) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  if (node.split_dim < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int row = order_[static_cast<std::size_t>(i)];
      const double* p = &points_[static_cast<std::size_t>(row) * static_cast<std::size_t>(dim_)];
      double d2 = 0.0;
      for (int j = 0; j < dim_; ++j) {
        const double diff = p[j] - q[j];
        d2 += diff * diff;
      }
      std::pair<double, int> cand{d2, row};
      if (static_cast<int>(heap.size()) < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end());
      } else if (cand < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    return;
  }
  const int d = node.split_dim;
  const bool go_left = q[d] < node.split;
  const int near = go_left ? node.left : node.right;
  const int far = go_left ? node.right : node.left;
  search(near, q, k, rd, off, heap);
  const double gap = go_left ? std::max(0.0, node.right_min - q[d]) : std::max(0.0, q[d] - node.left_max);
  const double old = off[static_cast<std::size_t>(d)];
  const double far_rd = rd - old * old + std::max(gap, old) * std::max(gap, old);
  if (static_cast<int>(heap.size()) < k || far_rd <= heap.front().first) {
    off[static_cast<std::size_t>(d)] = std::max(gap, old);
    search(far, q, k, far_rd, off, heap);
    off[static_cast<std::size_t>(d)] = old;
  }
}

void KnnIndex::query(const double* q, int k, std::vector<std::pair<double, int>>& out) const {
  if (k < 1) throw ArgumentError("knn: k must be positive");
  std::vector<double> qs(static_cast<std::size_t>(dim_));
  for (int j = 0; j < dim_; ++j) {
    qs[static_cast<std::size_t>(j)] =
        (q[j] - center_[static_cast<std::size_t>(j)]) * inv_scale_[static_cast<std::size_t>(j)];
  }
  out.clear();
  out.reserve(static_cast<std::size_t>(k) + 1);
  std::vector<double> off(static_cast<std::size_t>(dim_), 0.0);
  search(0, qs.data(), std::min<int>(k, static_cast<int>(n_)), 0.0, off, out);
  std::sort_heap(out.begin(), out.end());
}

}  // namespace cltmle
