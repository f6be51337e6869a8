#include "ttfm/cp_factor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ttfm/error.hpp"

namespace ttfm {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Loadings = std::vector<std::vector<Vec>>;  // [j][k]

Vec leading_left_singular(const Mat& h) {
  Eigen::JacobiSVD<Mat> svd(h, Eigen::ComputeThinU);
  return svd.matrixU().col(0);
}

// Contract g along every mode except k. Higher modes go first so lower
// indices stay valid.
Vec contract_except(const DenseTensor& g, const std::vector<Vec>& vecs, std::size_t k) {
  DenseTensor cur = g;
  for (std::size_t l = g.order(); l-- > 0;)
    if (l != k) cur = mode_product(cur, l, vecs[l]);
  return cur.vec();
}

Mat pinv_dual(const Mat& u) {
  // U (U'U)^+ via the SVD of U
  Eigen::JacobiSVD<Mat> svd(u, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const double cut = 1e-12 * (s.size() ? s(0) : 0.0);
  Vec sinv = s.unaryExpr([cut](double x) { return x > cut ? 1.0 / x : 0.0; });
  return svd.matrixU() * sinv.asDiagonal() * svd.matrixV().transpose();
}

double gram_rcond(const Mat& u) {
  Eigen::JacobiSVD<Mat> svd(u);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0.0;
  const double r = s(s.size() - 1) / s(0);
  return r * r;
}

Mat mode_matrix_of_impl(const Loadings& u, std::size_t k) {
  Mat m(u[0][k].size(), u.size());
  for (std::size_t j = 0; j < u.size(); ++j) m.col(j) = u[j][k];
  return m;
}

struct IsoResult {
  Loadings u;
  int iterations = 0;
  double discrepancy = 0.0;
  bool converged = false;
};

// Simultaneous refinement against the rank-r spectral projector. Each sweep
// recomputes the oblique duals from the previous iterate (Jacobi style) and
// updates every (j, k) from them.
IsoResult iso(const std::vector<DenseTensor>& g, Loadings u, const CPOptions& opts) {
  const std::size_t r = u.size(), kk = u.front().size();
  IsoResult res;
  for (int it = 1; it <= opts.max_iter; ++it) {
    std::vector<Mat> duals(kk);
    for (std::size_t k = 0; k < kk; ++k) {
      Mat uk(u[0][k].size(), r);
      for (std::size_t j = 0; j < r; ++j) uk.col(j) = u[j][k];
      duals[k] = pinv_dual(uk);
    }
    Loadings next = u;
    double disc = 0.0;
    for (std::size_t j = 0; j < r; ++j) {
      std::vector<Vec> b(kk);
      for (std::size_t k = 0; k < kk; ++k) b[k] = duals[k].col(j);
      for (std::size_t k = 0; k < kk; ++k) {
        Mat h(u[j][k].size(), g.size());
        for (std::size_t m = 0; m < g.size(); ++m) h.col(m) = contract_except(g[m], b, k);
        if (h.norm() == 0.0) continue;
        Vec v = leading_left_singular(h);
        if (v.dot(u[j][k]) < 0) v = -v;
        disc = std::max(disc, sin_angle(v, u[j][k]));
        next[j][k] = std::move(v);
      }
    }
    u = std::move(next);
    res.iterations = it;
    res.discrepancy = disc;
    if (disc < opts.tol) {
      res.converged = true;
      break;
    }
  }
  res.u = std::move(u);
  return res;
}

// Refinement on the full auto-moment tensor s (order 2K). For factor j and
// mode k both copies are contracted with the duals on every other mode,
// leaving a d_k x d_k matrix whose leading singular direction updates u_jk.
IsoResult iso_moment(const DenseTensor& s, Loadings u, const CPOptions& opts) {
  const std::size_t r = u.size(), kk = u.front().size();
  IsoResult res;
  for (int it = 1; it <= opts.max_iter; ++it) {
    std::vector<Mat> duals(kk);
    for (std::size_t k = 0; k < kk; ++k) duals[k] = pinv_dual(mode_matrix_of_impl(u, k));
    Loadings next = u;
    double disc = 0.0;
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t k = 0; k < kk; ++k) {
        DenseTensor cur = s;
        for (std::size_t l = 2 * kk; l-- > 0;)
          if (l != k && l != kk + k) cur = mode_product(cur, l, duals[l % kk].col(static_cast<Eigen::Index>(j)));
        const auto d = static_cast<Eigen::Index>(u[j][k].size());
        const Eigen::Map<const Mat> m(cur.data().data(), d, d);
        Mat h(d, 2 * d);
        h << m, m.transpose();
        if (h.norm() == 0.0) continue;
        Vec v = leading_left_singular(h);
        if (v.dot(u[j][k]) < 0) v = -v;
        disc = std::max(disc, sin_angle(v, u[j][k]));
        next[j][k] = std::move(v);
      }
    u = std::move(next);
    res.iterations = it;
    res.discrepancy = disc;
    if (disc < opts.tol) {
      res.converged = true;
      break;
    }
  }
  res.u = std::move(u);
  return res;
}

Loadings init_from(const std::vector<DenseTensor>& g, const Mat& rot) {
  const std::size_t r = g.size(), kk = g.front().order();
  Loadings u(r, std::vector<Vec>(kk));
  for (std::size_t j = 0; j < r; ++j) {
    DenseTensor mix(g.front().shape());
    for (std::size_t m = 0; m < r; ++m) mix.vec() += rot(m, j) * g[m].vec();
    for (std::size_t k = 0; k < kk; ++k) u[j][k] = leading_left_singular(unfold(mix, k));
  }
  return u;
}

Mat random_rotation(std::size_t r, std::uint64_t seed, std::uint64_t restart) {
  std::seed_seq seq{seed, restart};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> nd;
  Mat a(r, r);
  for (Eigen::Index c = 0; c < a.cols(); ++c)
    for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, c) = nd(rng);
  Eigen::HouseholderQR<Mat> qr(a);
  return qr.householderQ() * Mat::Identity(r, r);
}

Mat mode_matrix_of(const Loadings& u, std::size_t k) { return mode_matrix_of_impl(u, k); }

}  // namespace

Eigen::MatrixXd CPModel::component_matrix() const {
  Mat a(static_cast<Eigen::Index>(shape_size(shape)), static_cast<Eigen::Index>(rank));
  for (std::size_t j = 0; j < rank; ++j) a.col(j) = outer_vec(loadings[j]);
  return a;
}

Eigen::MatrixXd CPModel::mode_matrix(std::size_t k) const { return mode_matrix_of(loadings, k); }

std::vector<double> FactorPanel::at(std::size_t t) const {
  if (t >= length()) throw ShapeError("time index out of range");
  std::vector<double> out(rank());
  for (std::size_t j = 0; j < rank(); ++j) out[j] = factors[j][t];
  return out;
}

Eigen::Map<const Eigen::MatrixXd> AutoMomentTensor::matrix() const {
  const auto d = static_cast<Eigen::Index>(std::sqrt(static_cast<double>(tensor.size())) + 0.5);
  return {tensor.data().data(), d, d};
}

double sin_angle(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - a.dot(b) * b).norm();
}

double fix_sign(Eigen::VectorXd& v) {
  Eigen::Index imax = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[imax])) imax = i;
  if (v.size() && v[imax] < 0) {
    v = -v;
    return -1.0;
  }
  return 1.0;
}

AutoMomentTensor auto_moment(const TensorSeries& series, std::size_t h) {
  if (h == 0) throw DomainError("auto-moment lag must be at least 1");
  const std::size_t n = series.length();
  if (n <= h)
    throw InsufficientData("lag " + std::to_string(h) + " needs more than " + std::to_string(h) +
                           " observations, got " + std::to_string(n));
  const Mat x = series.as_matrix();
  const auto m = static_cast<Eigen::Index>(n - h);
  Mat s = x.leftCols(m) * x.rightCols(m).transpose() / static_cast<double>(m);
  Shape doubled = series.shape();
  doubled.insert(doubled.end(), series.shape().begin(), series.shape().end());
  return {h, DenseTensor(std::move(doubled), std::vector<double>(s.data(), s.data() + s.size()))};
}

CPModel fit_cp(const TensorSeries& series, std::size_t r, std::size_t h, const CPOptions& opts) {
  if (series.empty()) throw InsufficientData("empty series");
  const Shape& shape = series.shape();
  if (r == 0) throw DomainError("rank must be at least 1");
  if (r > *std::min_element(shape.begin(), shape.end()))
    throw DomainError("rank " + std::to_string(r) + " exceeds the smallest mode dimension");

  const AutoMomentTensor am = auto_moment(series, h);
  const auto s = am.matrix();
  if (s.cwiseAbs().maxCoeff() == 0.0) throw EstimationError("auto-moment is identically zero");

  // composite spectral subspace: leading eigenvectors of SS' + S'S
  Mat sym = s * s.transpose() + s.transpose() * s;
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  const auto d = sym.rows();
  Mat p = es.eigenvectors().rightCols(static_cast<Eigen::Index>(r)).rowwise().reverse();

  std::vector<DenseTensor> g;
  for (std::size_t m = 0; m < r; ++m) {
    Vec col = p.col(m);
    g.emplace_back(shape, std::vector<double>(col.data(), col.data() + d));
  }

  std::vector<std::pair<double, IsoResult>> cands;
  const int n_cand = 1 + std::max(0, opts.restarts);
  auto collinear = [&](const Loadings& u) {
    for (std::size_t k = 0; k < shape.size(); ++k)
      if (!(gram_rcond(mode_matrix_of(u, k)) > 1e-8)) return true;
    return false;
  };
  for (int c = 0; c < n_cand; ++c) {
    Mat rot = c == 0 ? Mat::Identity(r, r) : random_rotation(r, opts.seed, c);
    IsoResult cand = iso(g, init_from(g, rot), opts);
    if (collinear(cand.u)) continue;
    double score = 0.0;
    for (std::size_t j = 0; j < r; ++j) score += (p.transpose() * outer_vec(cand.u[j])).squaredNorm();
    if (!std::isfinite(score)) continue;
    cands.emplace_back(score, std::move(cand));
  }
  if (cands.empty()) throw EstimationError("every start collapsed to collinear loadings");
  std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) { return a.first > b.first + 1e-12; });

  // The projector is noise dominated when d is large relative to the signal;
  // finish on the full moment tensor, falling back if that run collapses.
  IsoResult best = cands.front().second;
  if (shape.size() >= 2)
    for (const auto& [score, cand] : cands) {
      IsoResult refined = iso_moment(am.tensor, cand.u, opts);
      if (!collinear(refined.u)) {
        best = std::move(refined);
        break;
      }
    }

  CPModel model;
  model.shape = shape;
  model.rank = r;
  model.lag = h;
  model.status = best.converged ? FitStatus::Converged : FitStatus::MaxIterReached;
  model.iterations = best.iterations;
  model.final_discrepancy = best.discrepancy;
  model.loadings = std::move(best.u);
  for (auto& comp : model.loadings)
    for (auto& v : comp) {
      v.normalize();
      fix_sign(v);
    }

  // strengths: RMS of the strength-absorbed extracted factors
  const FactorPanel panel = extract_factors(series, model);
  std::vector<double> lam(r);
  for (std::size_t j = 0; j < r; ++j) {
    double ss = 0.0;
    for (double f : panel.factors[j]) ss += f * f;
    lam[j] = std::sqrt(ss / static_cast<double>(panel.length()));
  }
  std::vector<std::size_t> idx(r);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return lam[a] > lam[b]; });
  Loadings sorted;
  for (auto i : idx) {
    sorted.push_back(model.loadings[i]);
    model.strengths.push_back(lam[i]);
  }
  model.loadings = std::move(sorted);
  return model;
}

Eigen::MatrixXd extraction_weights(const CPModel& model) {
  const std::size_t r = model.rank, kk = model.order();
  std::vector<Mat> v(kk);
  for (std::size_t k = 0; k < kk; ++k) {
    Mat u = model.mode_matrix(k);
    Mat gram = u.transpose() * u;
    Eigen::JacobiSVD<Mat> svd(gram);
    const auto& sv = svd.singularValues();
    if (sv(0) == 0.0 || sv(sv.size() - 1) / sv(0) < 1e-10)
      throw RankDeficient("mode " + std::to_string(k + 1) +
                          " loading Gram matrix is singular (collinear loadings)");
    v[k] = u * gram.inverse();
  }
  Mat w(static_cast<Eigen::Index>(shape_size(model.shape)), static_cast<Eigen::Index>(r));
  for (std::size_t j = 0; j < r; ++j) {
    std::vector<Vec> cols(kk);
    for (std::size_t k = 0; k < kk; ++k) cols[k] = v[k].col(j);
    w.col(j) = outer_vec(cols);
  }
  return w;
}

FactorPanel extract_factors(const TensorSeries& series, const CPModel& model) {
  if (series.shape() != model.shape) throw ShapeError("series shape does not match the model");
  const Mat w = extraction_weights(model);
  const Mat f = w.transpose() * series.as_matrix();
  FactorPanel panel;
  panel.factors.resize(model.rank);
  for (std::size_t j = 0; j < model.rank; ++j)
    panel.factors[j].assign(f.row(j).begin(), f.row(j).end());
  return panel;
}

std::vector<double> extract_one(const DenseTensor& x, const CPModel& model) {
  if (x.shape() != model.shape) throw ShapeError("tensor shape does not match the model");
  const Vec f = extraction_weights(model).transpose() * x.vec();
  return {f.data(), f.data() + f.size()};
}

std::size_t select_rank(const TensorSeries& series, std::size_t h, std::size_t r_max) {
  if (r_max == 0) throw DomainError("r_max must be at least 1");
  const AutoMomentTensor am = auto_moment(series, h);
  if (r_max == 1) return 1;
  Eigen::BDCSVD<Mat> svd(am.matrix());
  Vec rho = svd.singularValues();
  if (rho.size() == 0 || rho(0) == 0.0) return 1;
  const double floor = 1e-12 * rho(0);
  rho = rho.cwiseMax(floor);
  const auto last = std::min<Eigen::Index>(static_cast<Eigen::Index>(r_max) - 1, rho.size() - 1);
  std::size_t best = 1;
  double best_ratio = -1.0;
  for (Eigen::Index i = 0; i < last; ++i) {
    const double ratio = rho(i) / rho(i + 1);
    if (ratio > best_ratio) {
      best_ratio = ratio;
      best = static_cast<std::size_t>(i) + 1;
    }
  }
  return best;
}

DenseTensor reconstruct(const CPModel& model, std::span<const double> factor_values) {
  if (factor_values.size() != model.rank) throw ShapeError("need one value per factor");
  DenseTensor out(model.shape);
  for (std::size_t j = 0; j < model.rank; ++j)
    rank1_accumulate(out, factor_values[j], model.loadings[j]);
  return out;
}

DenseTensor reconstruct(const CPModel& model, const FactorPanel& factors, std::size_t t) {
  if (factors.rank() != model.rank) throw ShapeError("panel rank does not match the model");
  return reconstruct(model, factors.at(t));
}

}  // namespace ttfm
