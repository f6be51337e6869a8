#include "ttfm/tensor.hpp"

#include <functional>
#include <numeric>
#include <string>

#include "ttfm/error.hpp"

namespace ttfm {

namespace {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// Sizes of the blocks before and after `mode` in the colexicographic layout.
struct ModeSplit {
  std::size_t left = 1;
  std::size_t dim = 1;
  std::size_t right = 1;
};

ModeSplit split_at(const Shape& shape, std::size_t mode) {
  ModeSplit s;
  for (std::size_t k = 0; k < mode; ++k) s.left *= shape[k];
  s.dim = shape[mode];
  for (std::size_t k = mode + 1; k < shape.size(); ++k) s.right *= shape[k];
  return s;
}

void check_mode(const DenseTensor& x, std::size_t mode) {
  if (mode >= x.order())
    throw ShapeError("mode " + std::to_string(mode) + " out of range for tensor of order " +
                     std::to_string(x.order()));
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

DenseTensor::DenseTensor(Shape shape) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
  data_.assign(shape_size(shape_), 0.0);
}

DenseTensor::DenseTensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
  if (data.size() != shape_size(shape_))
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape_));
  data_ = std::move(data);
}

DenseTensor DenseTensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty() || rows.front().empty()) throw ShapeError("empty matrix");
  const std::size_t nr = rows.size(), nc = rows.front().size();
  DenseTensor m({nr, nc});
  for (std::size_t i = 0; i < nr; ++i) {
    if (rows[i].size() != nc) throw ShapeError("ragged rows");
    for (std::size_t j = 0; j < nc; ++j) m.data_[i + nr * j] = rows[i][j];
  }
  return m;
}

std::size_t DenseTensor::flat_index(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index arity does not match tensor order");
  std::size_t flat = 0, stride = 1;
  for (std::size_t k = 0; k < shape_.size(); ++k) {
    if (index[k] >= shape_[k]) throw ShapeError("index out of range");
    flat += index[k] * stride;
    stride *= shape_[k];
  }
  return flat;
}

double DenseTensor::at(std::span<const std::size_t> index) const { return data_[flat_index(index)]; }
double& DenseTensor::at(std::span<const std::size_t> index) { return data_[flat_index(index)]; }
double DenseTensor::at(std::initializer_list<std::size_t> index) const {
  return at(std::span<const std::size_t>(index.begin(), index.size()));
}
double& DenseTensor::at(std::initializer_list<std::size_t> index) {
  return at(std::span<const std::size_t>(index.begin(), index.size()));
}

DenseTensor mode_product(const DenseTensor& x, std::size_t mode, const Eigen::VectorXd& v) {
  check_mode(x, mode);
  if (static_cast<std::size_t>(v.size()) != x.dim(mode))
    throw ShapeError("vector length " + std::to_string(v.size()) + " does not match mode " +
                     std::to_string(mode) + " dimension " + std::to_string(x.dim(mode)));
  const auto s = split_at(x.shape(), mode);
  Shape out_shape;
  for (std::size_t k = 0; k < x.order(); ++k)
    if (k != mode) out_shape.push_back(x.dim(k));
  DenseTensor out(out_shape);
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t b = 0; b < s.right; ++b)
    for (std::size_t i = 0; i < s.dim; ++i) {
      const double w = v[static_cast<Eigen::Index>(i)];
      const double* col = src.data() + s.left * (i + s.dim * b);
      double* o = dst.data() + s.left * b;
      for (std::size_t a = 0; a < s.left; ++a) o[a] += w * col[a];
    }
  return out;
}

double contract_all(const DenseTensor& x, std::span<const Eigen::VectorXd> vectors) {
  if (vectors.size() != x.order()) throw ShapeError("need one vector per mode");
  for (std::size_t k = 0; k < x.order(); ++k)
    if (static_cast<std::size_t>(vectors[k].size()) != x.dim(k))
      throw ShapeError("vector length does not match mode " + std::to_string(k));
  return x.vec().dot(outer_vec(vectors));
}

Eigen::MatrixXd unfold(const DenseTensor& x, std::size_t mode) {
  check_mode(x, mode);
  const auto s = split_at(x.shape(), mode);
  Eigen::MatrixXd m(s.dim, s.left * s.right);
  auto src = x.data();
  for (std::size_t b = 0; b < s.right; ++b)
    for (std::size_t i = 0; i < s.dim; ++i)
      for (std::size_t a = 0; a < s.left; ++a)
        m(i, a + s.left * b) = src[a + s.left * (i + s.dim * b)];
  return m;
}

DenseTensor fold(const Eigen::MatrixXd& m, std::size_t mode, const Shape& shape) {
  DenseTensor x(shape);
  check_mode(x, mode);
  const auto s = split_at(shape, mode);
  if (static_cast<std::size_t>(m.rows()) != s.dim ||
      static_cast<std::size_t>(m.cols()) != s.left * s.right)
    throw ShapeError("matrix size does not match the requested unfolding");
  auto dst = x.data();
  for (std::size_t b = 0; b < s.right; ++b)
    for (std::size_t i = 0; i < s.dim; ++i)
      for (std::size_t a = 0; a < s.left; ++a)
        dst[a + s.left * (i + s.dim * b)] = m(i, a + s.left * b);
  return x;
}

Eigen::VectorXd outer_vec(std::span<const Eigen::VectorXd> vectors) {
  Eigen::VectorXd out = Eigen::VectorXd::Ones(1);
  // Later modes vary slowest, so each new factor multiplies the accumulated block.
  for (const auto& v : vectors) {
    Eigen::VectorXd next(out.size() * v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) next.segment(i * out.size(), out.size()) = v[i] * out;
    out = std::move(next);
  }
  return out;
}

void rank1_accumulate(DenseTensor& acc, double weight, std::span<const Eigen::VectorXd> vectors) {
  if (vectors.size() != acc.order())
    throw ShapeError("rank-1 term needs " + std::to_string(acc.order()) + " vectors, got " +
                     std::to_string(vectors.size()));
  for (std::size_t k = 0; k < acc.order(); ++k)
    if (static_cast<std::size_t>(vectors[k].size()) != acc.dim(k))
      throw ShapeError("vector " + std::to_string(k) + " has length " +
                       std::to_string(vectors[k].size()) + ", expected " +
                       std::to_string(acc.dim(k)));
  if (weight == 0.0) return;
  acc.vec() += weight * outer_vec(vectors);
}

double frobenius_sq(const DenseTensor& x) { return x.vec().squaredNorm(); }

TensorSeries::TensorSeries(std::vector<DenseTensor> items) {
  for (auto& x : items) push_back(std::move(x));
}

void TensorSeries::push_back(DenseTensor x) {
  if (items_.empty() && shape_.empty()) shape_ = x.shape();
  if (x.shape() != shape_)
    throw ShapeError("series element shape " + shape_str(x.shape()) + " differs from " +
                     shape_str(shape_));
  items_.push_back(std::move(x));
}

TensorSeries TensorSeries::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > items_.size()) throw ShapeError("slice out of range");
  TensorSeries out(shape_);
  for (std::size_t t = begin; t < end; ++t) out.items_.push_back(items_[t]);
  return out;
}

Eigen::MatrixXd TensorSeries::as_matrix() const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(entries()), static_cast<Eigen::Index>(items_.size()));
  for (std::size_t t = 0; t < items_.size(); ++t) m.col(static_cast<Eigen::Index>(t)) = items_[t].vec();
  return m;
}

}  // namespace ttfm
