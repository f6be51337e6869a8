#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ttfm {

enum class ThresholdSource { SelfExciting, Exogenous };
enum class Criterion { AIC, BIC };

/**
 * Search space for one factor's threshold autoregression. `delays` holds tau
 * for self-exciting thresholds and d for an exogenous series z, in which case
 * the regime at time t is set by z_{t-d}. A nonempty regime_orders (one entry
 * per regime) overrides `orders`.
 */
struct TARSpec {
  std::size_t regimes = 2;
  std::vector<std::size_t> orders{1};
  std::vector<std::size_t> delays{1};
  ThresholdSource source = ThresholdSource::SelfExciting;
  std::string exog_name;
  std::vector<std::size_t> regime_orders;
  double trim = 0.1;
  Criterion criterion = Criterion::AIC;

  void validate() const;
};

struct RegimeFit {
  Eigen::VectorXd coefficients;  // phi_1..phi_p for lags 1..p
  double ssr = 0.0;
  std::size_t count = 0;
  double variance = 0.0;  // ssr / count
};

/**
 * Fitted TAR. Regime l covers threshold values in (s_{l-1}, s_l] with
 * s_0 = -inf and s_L = +inf. labels[i] is the regime of time start + i.
 */
struct TARFit {
  ThresholdSource source = ThresholdSource::SelfExciting;
  std::string exog_name;
  std::size_t order = 1;
  std::vector<std::size_t> regime_orders;
  std::size_t delay = 1;
  bool delay_searched = false;
  std::vector<double> thresholds;
  std::vector<RegimeFit> regimes;
  std::size_t start = 0;
  std::size_t n_eff = 0;
  double ssr = 0.0;
  double sigma2 = 0.0;
  double aic = 0.0;
  double bic = 0.0;
  std::size_t n_params = 0;
  std::vector<int> labels;

  std::size_t num_regimes() const { return regimes.size(); }
  std::size_t regime_of(double q) const;
  double criterion(Criterion c) const { return c == Criterion::AIC ? aic : bic; }
};

/// Threshold values aligned with y: q[t] = y[t - delay] (NaN when t < delay).
std::vector<double> self_threshold_values(std::span<const double> y, std::size_t delay);
/// q[t] = z[t - d] (NaN when unavailable).
std::vector<double> exog_threshold_values(std::span<const double> z, std::size_t d);

/**
 * Per-regime OLS of y_t on (y_{t-1}, ..., y_{t-p_l}). labels is aligned with
 * y; entries < 0 are excluded. Throws RankDeficient for singular designs.
 */
std::vector<RegimeFit> ls_given_partition(std::span<const double> y,
                                          std::span<const std::size_t> orders,
                                          std::span<const int> labels);
std::vector<RegimeFit> ls_given_partition(std::span<const double> y, std::size_t p,
                                          std::span<const int> labels);

/**
 * Least-squares threshold search over observed values of q for t >= start.
 * L = 1 is plain AR, L = 2 an exact scan with running moments, L = 3 an exact
 * nested scan. Thresholds are reported as left endpoints.
 */
TARFit threshold_search(std::span<const double> y, std::span<const double> q,
                        std::span<const std::size_t> regime_orders, std::size_t start,
                        double trim = 0.1);
TARFit threshold_search(std::span<const double> y, std::span<const double> q, std::size_t p,
                        std::size_t regimes, std::size_t start, double trim = 0.1);

/// Fill n_eff, ssr, sigma2, information criteria and parameter count.
void finalize_criteria(TARFit& fit);

/**
 * Grid over (delay, order). Every candidate shares one effective sample so the
 * criteria are comparable. Ties go to the smaller order, then the smaller delay.
 */
TARFit select_delay_order(std::span<const double> y, const TARSpec& spec,
                          std::span<const double> exog = {});

/// sigma_l^2 (X_l'X_l)^{-1} per regime: the covariance of phi-hat_l.
std::vector<Eigen::MatrixXd> asymptotic_covariance(const TARFit& fit, std::span<const double> y);

/// Threshold values the fit consumes: self lags of y, or delayed z.
std::vector<double> threshold_values_for(const TARFit& fit, std::span<const double> y,
                                         std::span<const double> exog);

/**
 * Re-estimate coefficients on new data keeping order, delay and start.
 * Thresholds stay frozen unless research_thresholds is set.
 */
TARFit refit_tar(const TARFit& fit, std::span<const double> y, std::span<const double> exog,
                 bool research_thresholds = false, double trim = 0.1);

/// phi^{(l)}' (f_t, ..., f_{t-p+1}) with recent.back() = f_t and l chosen by threshold_value.
double tar_forecast(const TARFit& fit, std::span<const double> recent, double threshold_value);

}  // namespace ttfm
