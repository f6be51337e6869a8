#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ttfm/tensor.hpp"

namespace ttfm {

enum class FitStatus { Converged, MaxIterReached };

/**
 * CP-form factor model X_t = sum_j lambda_j f_jt (u_j1 o ... o u_jK) + E_t.
 *
 * loadings[j][k] is the unit-norm mode-k loading of factor j. Each vector has
 * its first largest-magnitude entry positive; the factor absorbs the sign.
 * strengths are nonincreasing.
 */
struct CPModel {
  Shape shape;
  std::size_t rank = 0;
  std::size_t lag = 1;
  std::vector<std::vector<Eigen::VectorXd>> loadings;
  std::vector<double> strengths;

  FitStatus status = FitStatus::Converged;
  int iterations = 0;
  double final_discrepancy = 0.0;

  std::size_t order() const { return shape.size(); }
  /// d x r matrix with column j = vec(u_j1 o ... o u_jK).
  Eigen::MatrixXd component_matrix() const;
  /// d_k x r matrix of mode-k loadings.
  Eigen::MatrixXd mode_matrix(std::size_t k) const;
};

/// r strength-absorbed factor series of common length T plus named covariates.
struct FactorPanel {
  std::vector<std::vector<double>> factors;
  std::map<std::string, std::vector<double>> exogenous;

  std::size_t rank() const { return factors.size(); }
  std::size_t length() const { return factors.empty() ? 0 : factors.front().size(); }
  std::vector<double> at(std::size_t t) const;
};

/// Lag-h uncentered sample cross-moment, shape (d_1..d_K, d_1..d_K).
struct AutoMomentTensor {
  std::size_t lag = 1;
  DenseTensor tensor;

  /// d x d view: entry (a, b) averages x_{t-h}[a] * x_t[b].
  Eigen::Map<const Eigen::MatrixXd> matrix() const;
};

struct CPOptions {
  double tol = 1e-8;
  int max_iter = 200;
  int restarts = 8;
  std::uint64_t seed = 0;
};

AutoMomentTensor auto_moment(const TensorSeries& series, std::size_t h);

CPModel fit_cp(const TensorSeries& series, std::size_t r, std::size_t h = 1,
               const CPOptions& opts = {});

/// Oblique projection weights: column j of the returned d x r matrix is
/// vec(v_j1 o ... o v_jK) with v_jk the j-th column of U_k (U_k'U_k)^{-1}.
Eigen::MatrixXd extraction_weights(const CPModel& model);

FactorPanel extract_factors(const TensorSeries& series, const CPModel& model);
std::vector<double> extract_one(const DenseTensor& x, const CPModel& model);

/// Eigen-ratio rank estimate in [1, r_max].
std::size_t select_rank(const TensorSeries& series, std::size_t h, std::size_t r_max);

DenseTensor reconstruct(const CPModel& model, const FactorPanel& factors, std::size_t t);
DenseTensor reconstruct(const CPModel& model, std::span<const double> factor_values);

/// sin of the angle between two unit vectors, evaluated as ||a - (a'b) b||.
double sin_angle(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Flip v so its first largest-magnitude entry is positive. Returns the sign applied.
double fix_sign(Eigen::VectorXd& v);

}  // namespace ttfm
