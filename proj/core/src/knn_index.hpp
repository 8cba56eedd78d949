#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace cltmle {

// k-d tree over standardized features. Neighbours are ordered by
// (distance, training row) so results do not depend on tree layout.
class KnnIndex {
 public:
  explicit KnnIndex(const Eigen::MatrixXd& x, int leaf_size = 16);

  int dim() const noexcept { return dim_; }
  Eigen::Index size() const noexcept { return n_; }

  // Training rows of the k nearest neighbours of raw (unstandardized) query `q`.
  void query(const double* q, int k, std::vector<std::pair<double, int>>& out) const;

 private:
  struct Node {
    int begin, end;     // range in order_
    int split_dim = -1;  // -1 for leaves
    double split = 0.0;
    double left_max = 0.0, right_min = 0.0;  // actual extent of the children on split_dim
    int left = -1, right = -1;
  };

  int build(int begin, int end, int leaf_size);
  void search(int node, const double* q, int k, double rd, std::vector<double>& off,
              std::vector<std::pair<double, int>>& heap) const;

  int dim_ = 0;
  Eigen::Index n_ = 0;
  std::vector<double> center_, inv_scale_;
  std::vector<double> points_;  // row-major standardized, in original row order
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace cltmle
