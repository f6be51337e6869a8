#include "ttfm/tar.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <tuple>

#include "ttfm/error.hpp"

namespace ttfm {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Vec lag_vector(std::span<const double> y, std::size_t t, std::size_t p) {
  Vec x(static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < p; ++i) x[static_cast<Eigen::Index>(i)] = y[t - 1 - i];
  return x;
}

// Sufficient statistics of a regime regression on the first P lags.
struct Moments {
  Mat a;
  Vec b;
  double yy = 0.0;
  std::size_t n = 0;

  explicit Moments(std::size_t p) : a(Mat::Zero(p, p)), b(Vec::Zero(p)) {}

  void add(const Vec& x, double y) {
    a.noalias() += x * x.transpose();
    b += y * x;
    yy += y * y;
    ++n;
  }
};

// SSR of the regression on the leading p lags, or NaN when the design is singular.
double moment_ssr(const Moments& m, std::size_t p) {
  if (m.n < p + 1) return kNaN;
  const auto pp = static_cast<Eigen::Index>(p);
  Eigen::LDLT<Mat> ldlt(m.a.topLeftCorner(pp, pp));
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-12) return kNaN;
  const Vec bp = m.b.head(pp);
  const Vec phi = ldlt.solve(bp);
  return std::max(0.0, m.yy - bp.dot(phi));
}

std::size_t trim_floor(std::size_t pmax, double trim, std::size_t n) {
  return std::max<std::size_t>(pmax + 2, static_cast<std::size_t>(std::ceil(trim * static_cast<double>(n))));
}

std::vector<int> labels_from(const TARFit& fit, std::span<const double> q, std::size_t n) {
  std::vector<int> full(n, -1);
  for (std::size_t t = fit.start; t < n; ++t) full[t] = static_cast<int>(fit.regime_of(q[t]));
  return full;
}

void set_partition(TARFit& fit, std::span<const double> y, std::span<const int> full) {
  fit.regimes = ls_given_partition(y, fit.regime_orders, full);
  fit.labels.assign(full.begin() + static_cast<std::ptrdiff_t>(fit.start), full.end());
}

}  // namespace

void TARSpec::validate() const {
  std::vector<std::string> bad;
  if (regimes < 1 || regimes > 3) bad.push_back("regimes must be 1, 2 or 3");
  if (orders.empty() && regime_orders.empty()) bad.push_back("order set is empty");
  for (auto p : orders)
    if (p < 1) bad.push_back("orders must be at least 1");
  if (delays.empty()) bad.push_back("delay set is empty");
  for (auto d : delays)
    if (d < 1) bad.push_back("delays must be at least 1");
  if (!regime_orders.empty()) {
    if (regime_orders.size() != regimes) bad.push_back("regime_orders needs one entry per regime");
    for (auto p : regime_orders)
      if (p < 1) bad.push_back("regime orders must be at least 1");
  }
  if (!(trim > 0.0 && trim < 0.5)) bad.push_back("trim must lie in (0, 0.5)");
  if (bad.empty()) return;
  std::string msg;
  for (const auto& b : bad) msg += (msg.empty() ? "" : "; ") + b;
  throw DomainError(msg);
}

std::size_t TARFit::regime_of(double q) const {
  for (std::size_t l = 0; l < thresholds.size(); ++l)
    if (q <= thresholds[l]) return l;
  return thresholds.size();
}

std::vector<double> self_threshold_values(std::span<const double> y, std::size_t delay) {
  std::vector<double> q(y.size(), kNaN);
  for (std::size_t t = delay; t < y.size(); ++t) q[t] = y[t - delay];
  return q;
}

std::vector<double> exog_threshold_values(std::span<const double> z, std::size_t d) {
  std::vector<double> q(z.size(), kNaN);
  for (std::size_t t = d; t < z.size(); ++t) q[t] = z[t - d];
  return q;
}

std::vector<RegimeFit> ls_given_partition(std::span<const double> y,
                                          std::span<const std::size_t> orders,
                                          std::span<const int> labels) {
  if (labels.size() != y.size()) throw ShapeError("labels must align with the series");
  const std::size_t nreg = orders.size();
  std::vector<std::vector<std::size_t>> members(nreg);
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (labels[t] < 0) continue;
    const auto l = static_cast<std::size_t>(labels[t]);
    if (l >= nreg) throw ShapeError("label " + std::to_string(l) + " has no order");
    if (t < orders[l]) throw InsufficientData("time " + std::to_string(t) + " lacks lags");
    members[l].push_back(t);
  }
  std::vector<RegimeFit> out(nreg);
  for (std::size_t l = 0; l < nreg; ++l) {
    const std::size_t p = orders[l], n = members[l].size();
    if (n < p + 1)
      throw RankDeficient("regime " + std::to_string(l + 1) + " has " + std::to_string(n) +
                          " observations for order " + std::to_string(p));
    Mat x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    Vec yy(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      x.row(static_cast<Eigen::Index>(i)) = lag_vector(y, members[l][i], p).transpose();
      yy[static_cast<Eigen::Index>(i)] = y[members[l][i]];
    }
    Eigen::ColPivHouseholderQR<Mat> qr(x);
    if (qr.rank() < static_cast<Eigen::Index>(p))
      throw RankDeficient("regime " + std::to_string(l + 1) + " design is singular");
    RegimeFit& rf = out[l];
    rf.coefficients = qr.solve(yy);
    rf.ssr = (yy - x * rf.coefficients).squaredNorm();
    rf.count = n;
    rf.variance = rf.ssr / static_cast<double>(n);
  }
  return out;
}

std::vector<RegimeFit> ls_given_partition(std::span<const double> y, std::size_t p,
                                          std::span<const int> labels) {
  int top = -1;
  for (int l : labels) top = std::max(top, l);
  std::vector<std::size_t> orders(static_cast<std::size_t>(top + 1), p);
  return ls_given_partition(y, orders, labels);
}

void finalize_criteria(TARFit& fit) {
  fit.n_eff = 0;
  fit.ssr = 0.0;
  std::size_t k = fit.regimes.size() - 1 + (fit.delay_searched ? 1 : 0);
  for (const auto& r : fit.regimes) {
    fit.n_eff += r.count;
    fit.ssr += r.ssr;
  }
  for (auto p : fit.regime_orders) k += p;
  const double n = static_cast<double>(fit.n_eff);
  fit.sigma2 = fit.ssr / n;
  fit.n_params = k;
  const double ll = n * std::log(std::max(fit.sigma2, DBL_MIN));
  fit.aic = ll + 2.0 * static_cast<double>(k);
  fit.bic = ll + std::log(n) * static_cast<double>(k);
}

TARFit threshold_search(std::span<const double> y, std::span<const double> q,
                        std::span<const std::size_t> regime_orders, std::size_t start, double trim) {
  const std::size_t nreg = regime_orders.size();
  if (nreg < 1 || nreg > 3) throw DomainError("threshold search supports 1 to 3 regimes");
  if (q.size() != y.size()) throw ShapeError("threshold series must align with the series");
  const std::size_t pmax = *std::max_element(regime_orders.begin(), regime_orders.end());
  if (start < pmax) throw DomainError("start precedes the available lags");
  if (start >= y.size()) throw InsufficientData("no observations after the start index");
  for (std::size_t t = start; t < y.size(); ++t)
    if (!std::isfinite(q[t])) throw InsufficientData("threshold value missing at time " + std::to_string(t));

  TARFit fit;
  fit.order = pmax;
  fit.regime_orders.assign(regime_orders.begin(), regime_orders.end());
  fit.start = start;
  const std::size_t n = y.size() - start;

  if (nreg > 1) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return q[a] < q[b]; });
    const std::size_t floor = trim_floor(pmax, trim, n);
    if (nreg * floor > n)
      throw Infeasible("trimming floor " + std::to_string(floor) + " leaves no room for " +
                       std::to_string(nreg) + " regimes in " + std::to_string(n) + " observations");

    std::vector<Vec> xs(n);
    for (std::size_t i = 0; i < n; ++i) xs[i] = lag_vector(y, idx[i], pmax);
    auto boundary = [&](std::size_t i) { return q[idx[i]] < q[idx[i + 1]]; };

    // ssr_lo[i]: sorted items 0..i in the first regime; ssr_hi[i]: items i..n-1 in the last.
    std::vector<double> ssr_lo(n, kNaN), ssr_hi(n, kNaN);
    {
      Moments m(pmax);
      for (std::size_t i = 0; i < n; ++i) {
        m.add(xs[i], y[idx[i]]);
        if (i + 1 >= floor) ssr_lo[i] = moment_ssr(m, regime_orders.front());
      }
      Moments h(pmax);
      for (std::size_t i = n; i-- > 0;) {
        h.add(xs[i], y[idx[i]]);
        if (n - i >= floor) ssr_hi[i] = moment_ssr(h, regime_orders.back());
      }
    }

    double best = std::numeric_limits<double>::infinity();
    std::size_t cut1 = n, cut2 = n;
    if (nreg == 2) {
      for (std::size_t i = floor - 1; i + floor < n; ++i) {
        if (!boundary(i)) continue;
        const double s = ssr_lo[i] + ssr_hi[i + 1];
        if (s < best) {
          best = s;
          cut1 = i;
        }
      }
    } else {
      for (std::size_t i = floor - 1; i + 2 * floor < n; ++i) {
        if (!boundary(i) || std::isnan(ssr_lo[i])) continue;
        Moments mid(pmax);
        for (std::size_t j = i + 1; j + floor < n; ++j) {
          mid.add(xs[j], y[idx[j]]);
          if (j - i < floor || !boundary(j)) continue;
          const double s = ssr_lo[i] + moment_ssr(mid, regime_orders[1]) + ssr_hi[j + 1];
          if (s < best) {
            best = s;
            cut1 = i;
            cut2 = j;
          }
        }
      }
    }
    if (cut1 == n) throw Infeasible("no admissible threshold under the trimming constraint");
    fit.thresholds.push_back(q[idx[cut1]]);
    if (nreg == 3) fit.thresholds.push_back(q[idx[cut2]]);
  }

  set_partition(fit, y, labels_from(fit, q, y.size()));
  finalize_criteria(fit);
  return fit;
}

TARFit threshold_search(std::span<const double> y, std::span<const double> q, std::size_t p,
                        std::size_t regimes, std::size_t start, double trim) {
  std::vector<std::size_t> orders(regimes, p);
  return threshold_search(y, q, orders, start, trim);
}

std::vector<double> threshold_values_for(const TARFit& fit, std::span<const double> y,
                                         std::span<const double> exog) {
  if (fit.source == ThresholdSource::SelfExciting) return self_threshold_values(y, fit.delay);
  if (exog.size() != y.size())
    throw ShapeError("exogenous threshold series '" + fit.exog_name + "' has length " +
                     std::to_string(exog.size()) + ", expected " + std::to_string(y.size()));
  return exog_threshold_values(exog, fit.delay);
}

TARFit select_delay_order(std::span<const double> y, const TARSpec& spec,
                          std::span<const double> exog) {
  spec.validate();
  std::vector<std::vector<std::size_t>> order_sets;
  if (!spec.regime_orders.empty())
    order_sets.push_back(spec.regime_orders);
  else
    for (auto p : spec.orders) order_sets.emplace_back(spec.regimes, p);

  TARFit proto;
  proto.source = spec.source;
  proto.exog_name = spec.exog_name;

  std::vector<std::vector<double>> qs;
  std::size_t start = 0;
  for (const auto& os : order_sets) start = std::max(start, *std::max_element(os.begin(), os.end()));
  for (auto d : spec.delays) {
    proto.delay = d;
    qs.push_back(threshold_values_for(proto, y, exog));
    std::size_t first = 0;
    while (first < qs.back().size() && !std::isfinite(qs.back()[first])) ++first;
    start = std::max(start, first);
  }

  std::optional<TARFit> best;
  std::string last_error;
  for (std::size_t di = 0; di < spec.delays.size(); ++di) {
    for (const auto& os : order_sets) {
      TARFit fit;
      try {
        fit = threshold_search(y, qs[di], os, start, spec.trim);
      } catch (const Infeasible& e) {
        last_error = e.what();
        continue;
      } catch (const RankDeficient& e) {
        last_error = e.what();
        continue;
      }
      fit.source = spec.source;
      fit.exog_name = spec.exog_name;
      fit.delay = spec.delays[di];
      fit.delay_searched = spec.delays.size() > 1;
      finalize_criteria(fit);
      auto key = [&](const TARFit& f) {
        return std::make_tuple(f.criterion(spec.criterion), f.order, f.delay);
      };
      if (!best || key(fit) < key(*best)) best = std::move(fit);
    }
  }
  if (!best) throw Infeasible("no candidate (delay, order) admits a fit: " + last_error);
  return *best;
}

std::vector<Eigen::MatrixXd> asymptotic_covariance(const TARFit& fit, std::span<const double> y) {
  if (fit.start + fit.labels.size() != y.size()) throw ShapeError("series does not match the fit");
  std::vector<Mat> out;
  for (std::size_t l = 0; l < fit.regimes.size(); ++l) {
    const std::size_t p = fit.regime_orders[l];
    Mat a = Mat::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < fit.labels.size(); ++i) {
      if (fit.labels[i] != static_cast<int>(l)) continue;
      const Vec x = lag_vector(y, fit.start + i, p);
      a.noalias() += x * x.transpose();
    }
    Eigen::LLT<Mat> llt(a);
    if (llt.info() != Eigen::Success)
      throw RankDeficient("regime " + std::to_string(l + 1) + " moment matrix is singular");
    out.push_back(fit.regimes[l].variance *
                  llt.solve(Mat::Identity(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p))));
  }
  return out;
}

TARFit refit_tar(const TARFit& fit, std::span<const double> y, std::span<const double> exog,
                 bool research_thresholds, double trim) {
  const auto q = threshold_values_for(fit, y, exog);
  TARFit out;
  if (research_thresholds && fit.num_regimes() > 1) {
    out = threshold_search(y, q, fit.regime_orders, fit.start, trim);
  } else {
    out = fit;
    if (fit.start >= y.size()) throw InsufficientData("no observations after the start index");
    set_partition(out, y, labels_from(out, q, y.size()));
  }
  out.source = fit.source;
  out.exog_name = fit.exog_name;
  out.delay = fit.delay;
  out.delay_searched = fit.delay_searched;
  finalize_criteria(out);
  return out;
}

double tar_forecast(const TARFit& fit, std::span<const double> recent, double threshold_value) {
  if (fit.regimes.empty()) throw DomainError("fit has no regimes");
  if (fit.num_regimes() > 1 && !std::isfinite(threshold_value))
    throw InsufficientData("threshold value unavailable for the forecast");
  const RegimeFit& r = fit.regimes[fit.regime_of(threshold_value)];
  const auto p = static_cast<std::size_t>(r.coefficients.size());
  if (recent.size() < p)
    throw InsufficientData("forecast needs " + std::to_string(p) + " lags, got " +
                           std::to_string(recent.size()));
  double f = 0.0;
  for (std::size_t i = 0; i < p; ++i) f += r.coefficients[static_cast<Eigen::Index>(i)] * recent[recent.size() - 1 - i];
  return f;
}

}  // namespace ttfm
