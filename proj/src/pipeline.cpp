#include "ttfm/pipeline.hpp"

#include <cmath>
#include <limits>

#include "ttfm/error.hpp"

namespace ttfm {

namespace {

const TARSpec& spec_for(const std::vector<TARSpec>& specs, std::size_t j) {
  return specs.size() == 1 ? specs.front() : specs.at(j);
}

std::span<const double> exog_for(const FactorPanel& panel, const TARFit& fit) {
  if (fit.source != ThresholdSource::Exogenous) return {};
  auto it = panel.exogenous.find(fit.exog_name);
  if (it == panel.exogenous.end())
    throw ConfigError("exogenous threshold series '" + fit.exog_name + "' not supplied");
  return it->second;
}

void attach_exog(FactorPanel& panel, const SeriesMap& exog, const std::vector<std::string>& names) {
  for (const auto& name : names) {
    auto it = exog.find(name);
    if (it == exog.end()) throw ConfigError("exogenous threshold series '" + name + "' not supplied");
    if (it->second.size() < panel.length())
      throw ShapeError("exogenous series '" + name + "' is shorter than the tensor series");
    panel.exogenous[name].assign(it->second.begin(),
                                 it->second.begin() + static_cast<std::ptrdiff_t>(panel.length()));
  }
}

}  // namespace

std::vector<TARFit> fit_factor_tars(const FactorPanel& panel, const std::vector<TARSpec>& specs,
                                    const SeriesMap& exog) {
  if (specs.empty() || (specs.size() != 1 && specs.size() != panel.rank()))
    throw ConfigError("need one TAR spec per factor or a single shared spec");
  FactorPanel p = panel;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < panel.rank(); ++j) {
    const auto& s = spec_for(specs, j);
    if (s.source == ThresholdSource::Exogenous && !p.exogenous.count(s.exog_name))
      names.push_back(s.exog_name);
  }
  attach_exog(p, exog, names);
  std::vector<TARFit> out;
  for (std::size_t j = 0; j < panel.rank(); ++j) {
    const auto& s = spec_for(specs, j);
    std::span<const double> z;
    if (s.source == ThresholdSource::Exogenous) z = p.exogenous.at(s.exog_name);
    out.push_back(select_delay_order(p.factors[j], s, z));
  }
  return out;
}

TTFMModel fit_ttfm(const TensorSeries& series, std::size_t r, const std::vector<TARSpec>& specs,
                   const SeriesMap& exog, std::size_t h, const CPOptions& cp_opts) {
  TTFMModel m;
  m.cp = fit_cp(series, r, h, cp_opts);
  m.tars = fit_factor_tars(extract_factors(series, m.cp), specs, exog);
  for (std::size_t j = 0; j < r; ++j) m.specs.push_back(spec_for(specs, j));
  m.train_length = series.length();
  return m;
}

std::vector<ForecastRecord> rolling_forecast_from_factors(
    const CPModel& loadings, const std::vector<TARFit>& tars, const FactorPanel& factors,
    const TensorSeries& series, std::size_t t_start, std::size_t t_end, const RollingOptions& opts,
    const TensorSeries* signal) {
  if (tars.size() != loadings.rank || factors.rank() != loadings.rank)
    throw ShapeError("factor count does not match the loadings");
  if (t_start > t_end) throw DomainError("forecast window is empty");
  if (t_end + 1 >= series.length() || t_end + 1 >= factors.length())
    throw InsufficientData("forecast origin " + std::to_string(t_end) + " has no next observation");
  if (signal && signal->length() < series.length()) throw ShapeError("signal series is too short");

  std::vector<ForecastRecord> out;
  for (std::size_t t = t_start; t <= t_end; ++t) {
    ForecastRecord rec;
    rec.t = t;
    for (std::size_t j = 0; j < tars.size(); ++j) {
      const std::span<const double> path(factors.factors[j].data(), t + 1);
      const auto z_full = exog_for(factors, tars[j]);
      const TARFit* fit = &tars[j];
      TARFit refit;
      if (opts.policy == RefitPolicy::RefitParams) {
        const auto z = z_full.empty() ? z_full : z_full.first(t + 1);
        refit = refit_tar(tars[j], path, z, opts.research_thresholds, opts.trim);
        fit = &refit;
      }
      double q = std::numeric_limits<double>::quiet_NaN();
      if (t + 1 >= fit->delay) {
        const std::size_t src = t + 1 - fit->delay;
        q = fit->source == ThresholdSource::SelfExciting ? factors.factors[j][src] : z_full[src];
      }
      rec.factor_forecasts.push_back(tar_forecast(*fit, path, q));
    }
    rec.forecast = reconstruct(loadings, rec.factor_forecasts);
    rec.error = rec.forecast;
    rec.error.vec() -= series[t + 1].vec();
    rec.sq_err_obs = frobenius_sq(rec.error);
    if (signal) rec.sq_err_signal = (rec.forecast.vec() - (*signal)[t + 1].vec()).squaredNorm();
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<ForecastRecord> rolling_forecast(const TTFMModel& model, const TensorSeries& series,
                                             std::size_t t_start, std::size_t t_end,
                                             const RollingOptions& opts, const SeriesMap& exog,
                                             const TensorSeries* signal) {
  FactorPanel panel = extract_factors(series, model.cp);
  std::vector<std::string> names;
  for (const auto& f : model.tars)
    if (f.source == ThresholdSource::Exogenous) names.push_back(f.exog_name);
  attach_exog(panel, exog, names);
  return rolling_forecast_from_factors(model.cp, model.tars, panel, series, t_start, t_end, opts,
                                       signal);
}

ForecastSummary evaluate_forecasts(const std::vector<ForecastRecord>& records,
                                   const std::vector<EntrySubset>& subsets) {
  if (records.empty()) throw DomainError("no forecast records to evaluate");
  ForecastSummary s;
  s.steps = records.size();
  s.entries = records.front().error.size();
  const double n = static_cast<double>(s.steps);
  bool all_signal = true;
  double sig = 0.0;
  for (const auto& r : records) {
    if (r.error.size() != s.entries) throw ShapeError("records disagree on tensor size");
    s.mse_obs += r.sq_err_obs;
    s.per_step_obs.push_back(r.sq_err_obs);
    if (r.sq_err_signal) {
      sig += *r.sq_err_signal;
      s.per_step_signal.push_back(*r.sq_err_signal);
    } else {
      all_signal = false;
    }
  }
  s.mse_obs /= n;
  s.mse_obs_per_entry = s.mse_obs / static_cast<double>(s.entries);
  if (all_signal) s.mse_signal = sig / n;
  else s.per_step_signal.clear();

  for (const auto& sub : subsets) {
    if (sub.entries.empty()) throw DomainError("subset '" + sub.name + "' is empty");
    double acc = 0.0;
    for (const auto& r : records)
      for (auto e : sub.entries) {
        if (e >= s.entries) throw ShapeError("subset '" + sub.name + "' indexes past the tensor");
        acc += r.error[e] * r.error[e];
      }
    s.subset_per_entry[sub.name] = acc / (n * static_cast<double>(sub.entries.size()));
  }
  return s;
}

EntrySubset mode_subset(const Shape& shape, std::string name, std::size_t mode,
                        const std::vector<std::size_t>& indices) {
  if (mode >= shape.size()) throw ShapeError("subset mode out of range");
  std::vector<bool> keep(shape[mode], false);
  for (auto i : indices) {
    if (i >= shape[mode]) throw ShapeError("subset index out of range for mode " + std::to_string(mode + 1));
    keep[i] = true;
  }
  std::size_t left = 1;
  for (std::size_t k = 0; k < mode; ++k) left *= shape[k];
  EntrySubset s{std::move(name), {}};
  const std::size_t total = shape_size(shape);
  for (std::size_t e = 0; e < total; ++e)
    if (keep[(e / left) % shape[mode]]) s.entries.push_back(e);
  return s;
}

}  // namespace ttfm
