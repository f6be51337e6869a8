#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace ttfm {

using Shape = std::vector<std::size_t>;

/// Product of all mode dimensions (1 for the empty shape).
std::size_t shape_size(const Shape& shape);

/**
 * Dense K-way array stored in colexicographic order: the first index varies
 * fastest, so entry (i_1, ..., i_K) lives at
 * i_1 + d_1 * (i_2 + d_2 * (i_3 + ...)).
 *
 * Mode indices in this API are 0-based. An order-0 tensor (empty shape, one
 * entry) is the result of contracting every mode and is the only exception to
 * the K >= 1 rule.
 */
class DenseTensor {
 public:
  DenseTensor() = default;
  explicit DenseTensor(Shape shape);
  DenseTensor(Shape shape, std::vector<double> data);

  /// 2-D helper taking rows in reading order; stored colexicographically.
  static DenseTensor from_rows(const std::vector<std::vector<double>>& rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t order() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t mode) const { return shape_.at(mode); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  double operator[](std::size_t flat) const { return data_[flat]; }
  double& operator[](std::size_t flat) { return data_[flat]; }

  double at(std::span<const std::size_t> index) const;
  double& at(std::span<const std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);

  Eigen::Map<const Eigen::VectorXd> vec() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  Eigen::Map<Eigen::VectorXd> vec() {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

 private:
  std::size_t flat_index(std::span<const std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

/// Contract mode `mode` with `v`; the result drops that mode.
DenseTensor mode_product(const DenseTensor& x, std::size_t mode, const Eigen::VectorXd& v);

/// Contract every mode k with vectors[k]: X x_1 v_1' x_2 ... x_K v_K'.
double contract_all(const DenseTensor& x, std::span<const Eigen::VectorXd> vectors);

/// Mode-k matricization, d_k x (d / d_k). Columns enumerate the remaining
/// multi-indices colexicographically in their original mode order.
Eigen::MatrixXd unfold(const DenseTensor& x, std::size_t mode);

/// Inverse of unfold for a tensor of the given shape.
DenseTensor fold(const Eigen::MatrixXd& m, std::size_t mode, const Shape& shape);

/// acc += weight * (vectors[0] o vectors[1] o ... o vectors[K-1]).
void rank1_accumulate(DenseTensor& acc, double weight, std::span<const Eigen::VectorXd> vectors);

/// Kronecker-ordered outer product as a flat vector matching the colexicographic layout.
Eigen::VectorXd outer_vec(std::span<const Eigen::VectorXd> vectors);

double frobenius_sq(const DenseTensor& x);

/// Time-ordered sequence of equally shaped tensors.
class TensorSeries {
 public:
  TensorSeries() = default;
  explicit TensorSeries(Shape shape) : shape_(std::move(shape)) {}
  explicit TensorSeries(std::vector<DenseTensor> items);

  void push_back(DenseTensor x);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t length() const noexcept { return items_.size(); }
  std::size_t entries() const { return shape_size(shape_); }
  bool empty() const noexcept { return items_.empty(); }

  const DenseTensor& operator[](std::size_t t) const { return items_[t]; }
  DenseTensor& operator[](std::size_t t) { return items_[t]; }

  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  /// Observations [begin, end) as a new series.
  TensorSeries slice(std::size_t begin, std::size_t end) const;

  /// d x T matrix whose column t is vec(X_t).
  Eigen::MatrixXd as_matrix() const;

  friend bool operator==(const TensorSeries&, const TensorSeries&) = default;

 private:
  Shape shape_;
  std::vector<DenseTensor> items_;
};

}  // namespace ttfm
