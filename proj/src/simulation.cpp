#include "ttfm/simulation.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "ttfm/error.hpp"
#include "ttfm/format.hpp"

namespace ttfm {

namespace {

using Vec = Eigen::VectorXd;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> pad(const std::vector<double>& c, std::size_t p) {
  std::vector<double> out(c);
  out.resize(p, 0.0);
  return out;
}

TARSpec reference_spec(const FactorDGP& dgp, bool exogenous) {
  TARSpec s;
  s.regimes = 2;
  s.regime_orders = {dgp.order(), dgp.order()};
  s.delays = {dgp.delay};
  if (exogenous) {
    s.source = ThresholdSource::Exogenous;
    s.exog_name = "z";
  }
  return s;
}

double mean_of(const std::vector<ForecastRecord>& recs, bool signal) {
  double acc = 0.0;
  for (const auto& r : recs) acc += signal ? r.sq_err_signal.value_or(kNaN) : r.sq_err_obs;
  return acc / static_cast<double>(recs.size());
}

}  // namespace

std::vector<FactorDGP> reference_factors() {
  return {
      {{0.5, 0.2}, {0.7, -0.6}, 0.0, 1},
      {{0.8, 0.1}, {-0.4, -0.6}, 0.0, 1},
      {{0.7}, {-0.8}, 0.0, 1},
  };
}

void SimConfig::validate() const {
  std::vector<std::string> bad;
  if (!(snr > 0)) bad.push_back("snr must be positive");
  if (!(lambda > 0)) bad.push_back("lambda must be positive");
  if (dims.empty()) bad.push_back("dims must be nonempty");
  for (auto d : dims)
    if (d < 2) bad.push_back("every dimension must be at least 2");
  if (T <= 20) bad.push_back("T must exceed 20");
  if (factors.empty()) bad.push_back("at least one factor recursion is required");
  for (const auto& f : factors)
    if (f.delay < 1 || f.order() < 1) bad.push_back("factor recursions need order and delay >= 1");
  if (!dims.empty() && factors.size() > *std::min_element(dims.begin(), dims.end()))
    bad.push_back("more factors than the smallest dimension");
  if (bad.empty()) return;
  std::string msg;
  for (const auto& b : bad) msg += (msg.empty() ? "" : "; ") + b;
  throw ConfigError(msg);
}

CPModel SimTruth::as_model(double lambda) const {
  CPModel m;
  m.shape = signal.shape();
  m.rank = loadings.size();
  m.loadings = loadings;
  m.strengths.assign(m.rank, lambda);
  return m;
}

SimTruth generate(const SimConfig& cfg, std::uint64_t cell, std::uint64_t replicate) {
  cfg.validate();
  std::seed_seq seq{cfg.seed, cell, replicate};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> nd;

  const std::size_t r = cfg.factors.size(), kk = cfg.dims.size();
  const std::size_t keep = cfg.T + cfg.extra, total = cfg.burn_in + keep;
  SimTruth truth;

  truth.loadings.assign(r, std::vector<Vec>(kk));
  for (std::size_t j = 0; j < r; ++j)
    for (std::size_t k = 0; k < kk; ++k) {
      Vec u(static_cast<Eigen::Index>(cfg.dims[k]));
      for (auto& x : u) x = nd(rng);
      truth.loadings[j][k] = u.normalized();
    }

  std::vector<double> z;
  if (cfg.exogenous) {
    z.assign(total, 0.0);
    for (std::size_t t = 1; t < total; ++t) z[t] = cfg.z_coef * z[t - 1] + nd(rng);
    truth.z.assign(z.end() - static_cast<std::ptrdiff_t>(keep), z.end());
  }

  for (const auto& dgp : cfg.factors) {
    const std::size_t p = dgp.order();
    const auto lo = pad(dgp.lower, p), hi = pad(dgp.upper, p);
    const std::size_t lead = std::max(p, dgp.delay);
    std::vector<double> f(total, 0.0);
    for (std::size_t t = lead; t < total; ++t) {
      const double q = cfg.exogenous ? z[t - dgp.delay] : f[t - dgp.delay];
      const auto& c = q < dgp.threshold ? lo : hi;
      double v = nd(rng);
      for (std::size_t i = 0; i < p; ++i) v += c[i] * f[t - 1 - i];
      f[t] = v;
    }
    std::vector<double> kept(f.end() - static_cast<std::ptrdiff_t>(keep), f.end());
    for (auto& x : kept) x *= cfg.lambda;
    truth.factors.push_back(std::move(kept));
  }

  const double sigma = cfg.sigma();
  truth.signal = TensorSeries(cfg.dims);
  truth.observed = TensorSeries(cfg.dims);
  for (std::size_t t = 0; t < keep; ++t) {
    DenseTensor m(cfg.dims);
    for (std::size_t j = 0; j < r; ++j) rank1_accumulate(m, truth.factors[j][t], truth.loadings[j]);
    DenseTensor x = m;
    if (sigma > 0)
      for (auto& v : x.data()) v += sigma * nd(rng);
    truth.signal.push_back(std::move(m));
    truth.observed.push_back(std::move(x));
  }
  return truth;
}

AlignmentResult align(const CPModel& est, const std::vector<std::vector<Eigen::VectorXd>>& truth) {
  const std::size_t r = truth.size();
  if (est.rank != r) throw ShapeError("estimated and true ranks differ");
  const std::size_t kk = est.order();
  // cost[j][i]: truth j against estimate i with the best sign per mode
  std::vector<std::vector<double>> cost(r, std::vector<double>(r));
  std::vector<std::vector<std::vector<double>>> sign(r, std::vector<std::vector<double>>(r));
  for (std::size_t j = 0; j < r; ++j)
    for (std::size_t i = 0; i < r; ++i) {
      double c = 0.0;
      for (std::size_t k = 0; k < kk; ++k) {
        const auto& u = truth[j][k];
        const auto& uh = est.loadings[i][k];
        if (u.size() != uh.size()) throw ShapeError("loading dimensions differ");
        const double plus = (uh - u).squaredNorm(), minus = (uh + u).squaredNorm();
        const double s = minus < plus ? -1.0 : 1.0;
        sign[j][i].push_back(s);
        c += std::min(plus, minus) / static_cast<double>(u.size());
      }
      cost[j][i] = c;
    }

  std::vector<std::size_t> perm(r), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_total = std::numeric_limits<double>::infinity();
  do {
    double tot = 0.0;
    for (std::size_t j = 0; j < r; ++j) tot += cost[j][perm[j]];
    if (tot < best_total) {
      best_total = tot;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  AlignmentResult a;
  a.perm = best;
  for (std::size_t j = 0; j < r; ++j) {
    a.mode_signs.push_back(sign[j][best[j]]);
    double fs = 1.0;
    for (double s : a.mode_signs.back()) fs *= s;
    a.factor_sign.push_back(fs);
    a.mse.push_back(cost[j][best[j]]);
  }
  return a;
}

CPModel apply_alignment(const CPModel& est, const AlignmentResult& a) {
  CPModel m = est;
  for (std::size_t j = 0; j < a.perm.size(); ++j) {
    m.loadings[j] = est.loadings[a.perm[j]];
    for (std::size_t k = 0; k < m.order(); ++k) m.loadings[j][k] *= a.mode_signs[j][k];
    m.strengths[j] = est.strengths[a.perm[j]];
  }
  return m;
}

FactorPanel apply_alignment(const FactorPanel& est, const AlignmentResult& a) {
  FactorPanel p = est;
  for (std::size_t j = 0; j < a.perm.size(); ++j) {
    p.factors[j] = est.factors[a.perm[j]];
    for (auto& v : p.factors[j]) v *= a.factor_sign[j];
  }
  return p;
}

double regime_classification_proportion(const TARFit& fit, std::span<const double> q_hat,
                                        std::span<const double> true_q, double true_threshold) {
  if (q_hat.size() != true_q.size()) throw ShapeError("threshold series lengths differ");
  if (fit.thresholds.empty()) throw DomainError("fit has a single regime");
  std::size_t hit = 0, n = 0;
  for (std::size_t t = fit.start; t < q_hat.size(); ++t) {
    if (!std::isfinite(q_hat[t]) || !std::isfinite(true_q[t])) continue;
    ++n;
    if ((q_hat[t] <= fit.thresholds.front()) == (true_q[t] < true_threshold)) ++hit;
  }
  if (n == 0) throw InsufficientData("no comparable time points");
  return static_cast<double>(hit) / static_cast<double>(n);
}

std::string dims_label(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  unsigned nt = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  nt = static_cast<unsigned>(std::min<std::size_t>(nt, n));
  if (nt <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex mu;
  for (unsigned w = 0; w < nt; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lk(mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

std::vector<StudyRow> run_study(const StudyConfig& cfg) {
  struct Cell {
    Shape dims;
    double snr;
    std::size_t T;
  };
  std::vector<Cell> cells;
  for (const auto& d : cfg.dims)
    for (double s : cfg.snrs)
      for (auto T : cfg.Ts) cells.push_back({d, s, T});

  const auto dgps = reference_factors();
  const std::size_t r = dgps.size();
  const std::size_t n_jobs = cells.size() * cfg.replicates;
  std::vector<std::vector<StudyRow>> slots(n_jobs);

  parallel_for(n_jobs, cfg.threads, [&](std::size_t job) {
    const std::size_t c = job / cfg.replicates, rep = job % cfg.replicates;
    const Cell& cell = cells[c];
    std::vector<std::pair<std::string, std::size_t>> keys;
    for (std::size_t j = 1; j <= r; ++j) keys.emplace_back("log_mse_loading", j);
    for (std::size_t j = 1; j <= r; ++j) keys.emplace_back("class_prop_est", j);
    for (std::size_t j = 1; j <= r; ++j) keys.emplace_back("class_prop_real", j);
    for (const char* m : {"pred_mse_obs_est", "pred_mse_obs_real", "pred_mse_sig_est", "pred_mse_sig_real"})
      keys.emplace_back(m, 0);
    std::vector<double> vals(keys.size(), kNaN);

    try {
      SimConfig sc;
      sc.dims = cell.dims;
      sc.T = cell.T;
      sc.extra = cfg.extra;
      sc.snr = cell.snr;
      sc.burn_in = cfg.burn_in;
      sc.seed = cfg.seed;
      const SimTruth truth = generate(sc, c, rep);
      const TensorSeries train = truth.observed.slice(0, cell.T);

      const CPModel est = fit_cp(train, r, 1, cfg.cp);
      const AlignmentResult al = align(est, truth.loadings);
      const CPModel aligned = apply_alignment(est, al);
      FactorPanel est_panel = extract_factors(truth.observed, aligned);
      FactorPanel real_panel;
      real_panel.factors = truth.factors;

      std::vector<TARFit> est_fits, real_fits;
      std::vector<double> v_est(r), v_real(r);
      for (std::size_t j = 0; j < r; ++j) {
        vals[j] = std::log(al.mse[j]);
        const TARSpec spec = reference_spec(dgps[j], false);
        const std::span<const double> fe(est_panel.factors[j].data(), cell.T);
        const std::span<const double> ft(truth.factors[j].data(), cell.T);
        est_fits.push_back(select_delay_order(fe, spec));
        real_fits.push_back(select_delay_order(ft, spec));
        const auto q_true = self_threshold_values(ft, dgps[j].delay);
        vals[r + j] = regime_classification_proportion(est_fits[j], self_threshold_values(fe, dgps[j].delay), q_true);
        vals[2 * r + j] = regime_classification_proportion(real_fits[j], q_true, q_true);
      }

      const std::size_t t0 = cell.T - 1, t1 = cell.T + cfg.extra - 2;
      const auto rec_est = rolling_forecast_from_factors(aligned, est_fits, est_panel, truth.observed,
                                                         t0, t1, {}, &truth.signal);
      const auto rec_real = rolling_forecast_from_factors(truth.as_model(sc.lambda), real_fits, real_panel,
                                                          truth.observed, t0, t1, {}, &truth.signal);
      vals[3 * r] = mean_of(rec_est, false);
      vals[3 * r + 1] = mean_of(rec_real, false);
      vals[3 * r + 2] = mean_of(rec_est, true);
      vals[3 * r + 3] = mean_of(rec_real, true);
    } catch (const Error&) {
      std::fill(vals.begin(), vals.end(), kNaN);
    }

    auto& out = slots[job];
    for (std::size_t i = 0; i < keys.size(); ++i)
      out.push_back({dims_label(cell.dims), cell.snr, cell.T, rep, keys[i].first, keys[i].second, vals[i]});
  });

  std::vector<StudyRow> rows;
  for (auto& s : slots) rows.insert(rows.end(), s.begin(), s.end());
  return rows;
}

void write_study_csv(std::ostream& os, const std::vector<StudyRow>& rows) {
  os << "dims,snr,T,replicate,metric,factor,value\n";
  for (const auto& r : rows)
    os << r.dims << ',' << fmt_double(r.snr) << ',' << r.T << ',' << r.replicate + 1 << ','
       << r.metric << ',' << r.factor << ',' << fmt_double(r.value) << '\n';
}

std::vector<RateSample> run_rate_study(const RateConfig& cfg) {
  const auto dgps = reference_factors();
  const std::size_t r = dgps.size();
  const std::size_t n_jobs = cfg.Ts.size() * cfg.replicates;
  std::vector<RateSample> out(n_jobs);

  parallel_for(n_jobs, cfg.threads, [&](std::size_t job) {
    const std::size_t c = job / cfg.replicates, rep = job % cfg.replicates;
    RateSample& s = out[job];
    s.T = cfg.Ts[c];
    s.replicate = rep;
    try {
      SimConfig sc;
      sc.dims = cfg.dims;
      sc.T = s.T;
      sc.extra = 0;
      sc.snr = cfg.snr;
      sc.seed = cfg.seed;
      sc.exogenous = true;
      const SimTruth truth = generate(sc, c, rep);
      const CPModel est = fit_cp(truth.observed, r, 1, cfg.cp);
      const AlignmentResult al = align(est, truth.loadings);
      const FactorPanel panel = extract_factors(truth.observed, apply_alignment(est, al));
      for (std::size_t j = 0; j < r; ++j) {
        const auto& y = panel.factors[j];
        const TARFit fit = select_delay_order(y, reference_spec(dgps[j], true), truth.z);
        const std::size_t p = dgps[j].order();
        Vec truth_phi(2 * p), est_phi(2 * p);
        const auto lo = pad(dgps[j].lower, p), hi = pad(dgps[j].upper, p);
        for (std::size_t i = 0; i < p; ++i) {
          truth_phi[i] = lo[i];
          truth_phi[p + i] = hi[i];
        }
        est_phi << fit.regimes[0].coefficients, fit.regimes[1].coefficients;
        s.threshold_error.push_back(std::abs(fit.thresholds.front() - dgps[j].threshold));
        s.coef_error.push_back((est_phi - truth_phi).norm());
        s.phi11.push_back(fit.regimes[0].coefficients[0]);
        s.phi11_se.push_back(std::sqrt(asymptotic_covariance(fit, y)[0](0, 0)));
      }
      s.ok = true;
    } catch (const Error&) {
      s.ok = false;
    }
  });
  return out;
}

}  // namespace ttfm
