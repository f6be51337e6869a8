#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <span>
#include <ostream>
#include <string>
#include <vector>

#include "ttfm/cp_factor.hpp"
#include "ttfm/pipeline.hpp"
#include "ttfm/tar.hpp"

namespace ttfm {

/// Two-regime factor recursion: lower coefficients apply when q_t < threshold.
struct FactorDGP {
  std::vector<double> lower;
  std::vector<double> upper;
  double threshold = 0.0;
  std::size_t delay = 1;

  std::size_t order() const { return std::max(lower.size(), upper.size()); }
};

/// The three factor recursions of the reference matrix design.
std::vector<FactorDGP> reference_factors();

struct SimConfig {
  Shape dims{5, 7};
  std::size_t T = 200;
  std::size_t extra = 200;
  double snr = 1.0;  // lambda / sigma; +inf gives noiseless data
  double lambda = 1.0;
  std::size_t burn_in = 500;
  std::uint64_t seed = 1;
  std::vector<FactorDGP> factors = reference_factors();
  // Exogenous mode: regimes follow z_{t-delay} of an AR(1) z instead of f_{t-delay}.
  bool exogenous = false;
  double z_coef = 0.5;

  double sigma() const { return lambda / snr; }
  void validate() const;
};

struct SimTruth {
  std::vector<std::vector<Eigen::VectorXd>> loadings;  // [j][k]
  std::vector<std::vector<double>> factors;            // lambda-scaled, length T + extra
  std::vector<double> z;                               // empty unless exogenous
  TensorSeries signal;
  TensorSeries observed;

  /// CPModel holding the true loadings (strength lambda).
  CPModel as_model(double lambda) const;
};

/// Draw one replicate; (cell, replicate) select an independent RNG stream.
SimTruth generate(const SimConfig& cfg, std::uint64_t cell = 0, std::uint64_t replicate = 0);

struct AlignmentResult {
  std::vector<std::size_t> perm;               // perm[j] = estimated component matched to truth j
  std::vector<std::vector<double>> mode_signs;  // [j][k]
  std::vector<double> factor_sign;             // product of mode signs
  std::vector<double> mse;                     // sum_k ||s u-hat - u||^2 / d_k, truth order
};

/// Exhaustive permutation with per-vector sign choice minimizing the summed loading MSE.
AlignmentResult align(const CPModel& est, const std::vector<std::vector<Eigen::VectorXd>>& truth);

/// Reorder and re-sign a fitted model and its factors into truth order.
CPModel apply_alignment(const CPModel& est, const AlignmentResult& a);
FactorPanel apply_alignment(const FactorPanel& est, const AlignmentResult& a);

/**
 * Share of t >= fit.start where the fitted lower regime (q_hat <= s_hat)
 * agrees with the true lower regime (true_q < true_threshold).
 */
double regime_classification_proportion(const TARFit& fit, std::span<const double> q_hat,
                                        std::span<const double> true_q, double true_threshold = 0.0);

struct StudyConfig {
  std::vector<Shape> dims{{5, 7}, {10, 14}, {20, 25}};
  std::vector<double> snrs{0.5, 1.0, 2.0};
  std::vector<std::size_t> Ts{200, 500, 1000};
  std::size_t replicates = 100;
  std::size_t extra = 200;
  std::size_t burn_in = 500;
  std::uint64_t seed = 1;
  CPOptions cp;
  unsigned threads = 0;  // 0: hardware concurrency
};

struct StudyRow {
  std::string dims;
  double snr = 0.0;
  std::size_t T = 0;
  std::size_t replicate = 0;
  std::string metric;
  std::size_t factor = 0;  // 1-based; 0 when not factor specific
  double value = 0.0;
};

/// One row per (cell, replicate, metric, factor). Failed replicates emit NaN values.
std::vector<StudyRow> run_study(const StudyConfig& cfg);

void write_study_csv(std::ostream& os, const std::vector<StudyRow>& rows);

/// Per-replicate parameter errors for the exogenous-threshold two-stage fit.
struct RateSample {
  std::size_t T = 0;
  std::size_t replicate = 0;
  std::vector<double> threshold_error;  // |s-hat - s| per factor
  std::vector<double> coef_error;       // ||phi-hat - phi||_2 per factor, both regimes stacked
  std::vector<double> phi11;            // first lower-regime coefficient per factor
  std::vector<double> phi11_se;         // its standard error
  bool ok = false;
};

struct RateConfig {
  Shape dims{10, 14};
  double snr = 8.0;
  std::vector<std::size_t> Ts{200, 1000};
  std::size_t replicates = 100;
  std::uint64_t seed = 7;
  CPOptions cp;
  unsigned threads = 0;
};

std::vector<RateSample> run_rate_study(const RateConfig& cfg);

std::string dims_label(const Shape& s);

/// Run fn(i) for i in [0, n) on a small pool; results must go to per-index slots.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace ttfm
