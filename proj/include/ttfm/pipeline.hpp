#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ttfm/cp_factor.hpp"
#include "ttfm/tar.hpp"

namespace ttfm {

using SeriesMap = std::map<std::string, std::vector<double>>;

/// Stage one CP model plus one TAR per factor.
struct TTFMModel {
  CPModel cp;
  std::vector<TARFit> tars;
  std::vector<TARSpec> specs;
  std::size_t train_length = 0;
};

enum class RefitPolicy { Frozen, RefitParams };

struct RollingOptions {
  RefitPolicy policy = RefitPolicy::Frozen;
  bool research_thresholds = false;  // only with RefitParams
  double trim = 0.1;
};

/// One-step forecast made at origin t (0-based) for time t + 1.
struct ForecastRecord {
  std::size_t t = 0;
  std::vector<double> factor_forecasts;
  DenseTensor forecast;
  DenseTensor error;  // forecast - observation
  double sq_err_obs = 0.0;
  std::optional<double> sq_err_signal;
};

struct ForecastSummary {
  std::size_t steps = 0;
  std::size_t entries = 0;
  double mse_obs = 0.0;            // mean of ||X-hat - X||_F^2
  double mse_obs_per_entry = 0.0;  // mse_obs / d
  std::optional<double> mse_signal;
  std::vector<double> per_step_obs;
  std::vector<double> per_step_signal;
  std::map<std::string, double> subset_per_entry;  // subset name -> mean squared error per entry
};

/// Named set of flat entry indices.
struct EntrySubset {
  std::string name;
  std::vector<std::size_t> entries;
};

/**
 * Fit stage one on `series`, then each factor's TAR. `specs` holds one spec
 * per factor or a single spec shared by all. Exogenous threshold series are
 * looked up by name and truncated to the series length.
 */
TTFMModel fit_ttfm(const TensorSeries& series, std::size_t r, const std::vector<TARSpec>& specs,
                   const SeriesMap& exog = {}, std::size_t h = 1, const CPOptions& cp_opts = {});

/// Fit stage two only, on already extracted factors.
std::vector<TARFit> fit_factor_tars(const FactorPanel& panel, const std::vector<TARSpec>& specs,
                                    const SeriesMap& exog = {});

/**
 * Rolling one-step forecasts from known factor paths. factors[j] covers the
 * whole series; TAR fits are refit on data through each origin under
 * RefitParams. `signal` is optional.
 */
std::vector<ForecastRecord> rolling_forecast_from_factors(
    const CPModel& loadings, const std::vector<TARFit>& tars, const FactorPanel& factors,
    const TensorSeries& series, std::size_t t_start, std::size_t t_end,
    const RollingOptions& opts = {}, const TensorSeries* signal = nullptr);

/// Extract factors with the frozen loadings and forecast origins t_start..t_end (0-based).
std::vector<ForecastRecord> rolling_forecast(const TTFMModel& model, const TensorSeries& series,
                                             std::size_t t_start, std::size_t t_end,
                                             const RollingOptions& opts = {},
                                             const SeriesMap& exog = {},
                                             const TensorSeries* signal = nullptr);

ForecastSummary evaluate_forecasts(const std::vector<ForecastRecord>& records,
                                   const std::vector<EntrySubset>& subsets = {});

/// Flat indices of entries whose mode-`mode` index is in `indices` (0-based).
EntrySubset mode_subset(const Shape& shape, std::string name, std::size_t mode,
                        const std::vector<std::size_t>& indices);

}  // namespace ttfm
