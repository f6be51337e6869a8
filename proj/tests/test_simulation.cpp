#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "ttfm/error.hpp"
#include "ttfm/simulation.hpp"

using namespace ttfm;

namespace {

SimConfig small(double snr = 1.0) {
  SimConfig c;
  c.dims = {5, 7};
  c.T = 100;
  c.extra = 20;
  c.snr = snr;
  return c;
}

CPModel model_of(const std::vector<std::vector<Eigen::VectorXd>>& loadings) {
  CPModel m;
  m.rank = loadings.size();
  for (const auto& v : loadings[0]) m.shape.push_back(static_cast<std::size_t>(v.size()));
  m.loadings = loadings;
  m.strengths.assign(m.rank, 1.0);
  return m;
}

}  // namespace

TEST_CASE("config validation") {
  SimConfig c = small();
  c.snr = -1;
  c.dims = {1, 7};
  c.T = 5;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string m = e.what();
    CHECK(m.find("snr") != std::string::npos);
    CHECK(m.find("dimension") != std::string::npos);
    CHECK(m.find("T ") != std::string::npos);
  }
}

TEST_CASE("noiseless draws equal the signal and the signal is the stored rank one sum") {
  auto c = small(std::numeric_limits<double>::infinity());
  const auto t = generate(c, 0, 0);
  CHECK(t.observed == t.signal);
  CHECK(t.observed.length() == c.T + c.extra);
  for (std::size_t s = 0; s < t.signal.length(); ++s) {
    DenseTensor m(c.dims);
    for (std::size_t j = 0; j < 3; ++j) rank1_accumulate(m, t.factors[j][s], t.loadings[j]);
    CHECK(m == t.signal[s]);
  }
  for (const auto& comp : t.loadings)
    for (const auto& v : comp) CHECK(std::abs(v.norm() - 1.0) < 1e-14);
}

TEST_CASE("noise level follows lambda / snr") {
  auto c = small(0.5);
  c.T = 400;
  const auto t = generate(c, 0, 0);
  double ss = 0.0;
  std::size_t n = 0;
  for (std::size_t s = 0; s < t.observed.length(); ++s)
    for (std::size_t i = 0; i < t.observed[s].size(); ++i, ++n) ss += std::pow(t.observed[s][i] - t.signal[s][i], 2);
  CHECK(std::sqrt(ss / double(n)) == doctest::Approx(2.0).epsilon(0.03));
}

TEST_CASE("factor-3 path obeys its recurrence with unit innovations") {
  SimConfig c = small();
  c.T = 5000;
  c.extra = 0;
  const auto t = generate(c, 0, 0);
  const auto& f = t.factors[2];
  std::vector<double> a;
  for (std::size_t s = 1; s < f.size(); ++s) a.push_back(f[s] - (f[s - 1] < 0 ? 0.7 : -0.8) * f[s - 1]);
  const double m = std::accumulate(a.begin(), a.end(), 0.0) / double(a.size());
  double v = 0.0;
  for (double x : a) v += (x - m) * (x - m);
  v /= double(a.size() - 1);
  CHECK(v == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("exogenous mode drives regimes from z") {
  SimConfig c = small();
  c.exogenous = true;
  c.T = 3000;
  c.extra = 0;
  const auto t = generate(c, 0, 0);
  REQUIRE(t.z.size() == t.factors[2].size());
  const auto& f = t.factors[2];
  std::vector<double> a;
  for (std::size_t s = 1; s < f.size(); ++s) a.push_back(f[s] - (t.z[s - 1] < 0 ? 0.7 : -0.8) * f[s - 1]);
  double v = 0.0;
  for (double x : a) v += x * x;
  CHECK(v / double(a.size()) == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("generation is deterministic per seed with independent replicate streams") {
  const auto c = small();
  const auto a = generate(c, 1, 2), b = generate(c, 1, 2);
  CHECK(a.observed == b.observed);
  CHECK(a.factors == b.factors);
  const auto d = generate(c, 1, 3), e = generate(c, 2, 2);
  CHECK_FALSE(a.observed == d.observed);
  CHECK_FALSE(a.observed == e.observed);
  auto c2 = c;
  c2.seed = 99;
  CHECK_FALSE(generate(c2, 1, 2).observed == a.observed);
}

TEST_CASE("alignment exact cases") {
  const auto t = generate(small(), 0, 0);
  const auto id = align(model_of(t.loadings), t.loadings);
  CHECK(id.perm == std::vector<std::size_t>{0, 1, 2});
  for (double m : id.mse) CHECK(m == 0.0);

  auto swapped = t.loadings;
  std::swap(swapped[0], swapped[1]);
  swapped[2][0] = -swapped[2][0];
  const auto al = align(model_of(swapped), t.loadings);
  CHECK(al.perm == std::vector<std::size_t>{1, 0, 2});
  CHECK(al.factor_sign[2] == -1.0);
  CHECK(al.factor_sign[0] == 1.0);
  for (double m : al.mse) CHECK(m == 0.0);

  FactorPanel p;
  p.factors = {{1.0}, {2.0}, {3.0}};
  const auto q = apply_alignment(p, al);
  CHECK(q.factors[0][0] == 2.0);
  CHECK(q.factors[1][0] == 1.0);
  CHECK(q.factors[2][0] == -3.0);
  const auto m = apply_alignment(model_of(swapped), al);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 2; ++k) CHECK(m.loadings[j][k] == t.loadings[j][k]);
}

TEST_CASE("alignment under small perturbations follows the first-order expansion") {
  const auto t = generate(small(), 0, 1);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  const double eps = 1e-4;
  auto pert = t.loadings;
  for (auto& comp : pert)
    for (auto& u : comp) {
      Eigen::VectorXd w(u.size());
      for (auto& x : w) x = g(rng);
      w -= w.dot(u) * u;
      u = (u + eps * w.normalized()).normalized();
    }
  const auto al = align(model_of(pert), t.loadings);
  const double total = std::accumulate(al.mse.begin(), al.mse.end(), 0.0);
  CHECK(total == doctest::Approx(eps * eps * (1.0 / 5 + 1.0 / 7) * 3).epsilon(1e-3));
}

TEST_CASE("property: alignment optimum equals exhaustive enumeration") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  for (std::size_t r = 1; r <= 4; ++r) {
    for (int trial = 0; trial < 5; ++trial) {
      auto rnd = [&](std::size_t n) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(n));
        for (auto& x : v) x = g(rng);
        return Eigen::VectorXd(v.normalized());
      };
      std::vector<std::vector<Eigen::VectorXd>> a(r), b(r);
      for (std::size_t j = 0; j < r; ++j) {
        a[j] = {rnd(4), rnd(5)};
        b[j] = {rnd(4), rnd(5)};
      }
      // Reference: every permutation and every sign per vector.
      std::vector<std::size_t> perm(r);
      std::iota(perm.begin(), perm.end(), 0);
      double best = std::numeric_limits<double>::infinity();
      do {
        double tot = 0.0;
        for (std::size_t j = 0; j < r; ++j)
          for (std::size_t k = 0; k < 2; ++k) {
            double c = std::numeric_limits<double>::infinity();
            for (double s : {1.0, -1.0}) c = std::min(c, (s * b[perm[j]][k] - a[j][k]).squaredNorm() / double(a[j][k].size()));
            tot += c;
          }
        best = std::min(best, tot);
      } while (std::next_permutation(perm.begin(), perm.end()));
      const auto al = align(model_of(b), a);
      CHECK(std::accumulate(al.mse.begin(), al.mse.end(), 0.0) == doctest::Approx(best).epsilon(1e-14));
      CHECK(std::set<std::size_t>(al.perm.begin(), al.perm.end()).size() == r);
    }
  }
}

TEST_CASE("regime classification proportion") {
  const auto t = generate(small(), 0, 2);
  const auto& f = t.factors[2];
  TARFit fit;
  fit.start = 1;
  fit.thresholds = {0.0};
  const auto q = self_threshold_values(f, 1);
  CHECK(regime_classification_proportion(fit, q, q) == 1.0);

  std::vector<double> neg(q);
  for (auto& v : neg) v = -v;
  std::size_t hit = 0, n = 0;
  for (std::size_t s = 1; s < q.size(); ++s, ++n) hit += ((neg[s] <= 0.0) == (q[s] < 0.0));
  CHECK(regime_classification_proportion(fit, neg, q) == doctest::Approx(double(hit) / double(n)));
  fit.thresholds.clear();
  CHECK_THROWS_AS(regime_classification_proportion(fit, q, q), DomainError);
}

TEST_CASE("study smoke: one replicate of the smallest cell") {
  StudyConfig sc;
  sc.dims = {{5, 7}};
  sc.snrs = {1.0};
  sc.Ts = {200};
  sc.replicates = 1;
  sc.threads = 1;
  const auto rows = run_study(sc);
  std::set<std::string> metrics;
  for (const auto& r : rows) {
    metrics.insert(r.metric);
    CHECK(std::isfinite(r.value));
    CHECK(r.dims == "5x7");
  }
  CHECK(rows.size() == 13);
  CHECK(metrics == std::set<std::string>{"log_mse_loading", "class_prop_est", "class_prop_real", "pred_mse_obs_est",
                                         "pred_mse_obs_real", "pred_mse_sig_est", "pred_mse_sig_real"});
  std::ostringstream os;
  write_study_csv(os, rows);
  CHECK(os.str().rfind("dims,snr,T,replicate,metric,factor,value\n5x7,1,200,1,log_mse_loading,1,", 0) == 0);

  sc.threads = 3;
  sc.replicates = 3;
  const auto par = run_study(sc);
  sc.threads = 1;
  const auto seq = run_study(sc);
  std::ostringstream a, b;
  write_study_csv(a, par);
  write_study_csv(b, seq);
  CHECK(a.str() == b.str());
}

TEST_CASE("parallel_for propagates exceptions") {
  CHECK_THROWS_AS(parallel_for(10, 2, [](std::size_t i) {
                    if (i == 7) throw DomainError("boom");
                  }),
                  DomainError);
}
