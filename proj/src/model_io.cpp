#include "ttfm/model_io.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ttfm/error.hpp"
#include "ttfm/format.hpp"

namespace ttfm {

using nlohmann::json;

namespace {

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.begin(), v.end()); }

Eigen::VectorXd json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string source_name(ThresholdSource s) { return s == ThresholdSource::SelfExciting ? "self" : "exog"; }

ThresholdSource parse_source(const std::string& s) {
  if (s == "self") return ThresholdSource::SelfExciting;
  if (s == "exog") return ThresholdSource::Exogenous;
  throw IoError("unknown threshold source '" + s + "'");
}

json tar_json(const TARFit& f) {
  json regimes = json::array();
  for (const auto& r : f.regimes)
    regimes.push_back({{"coefficients", vec_json(r.coefficients)},
                       {"ssr", r.ssr},
                       {"count", r.count},
                       {"variance", r.variance}});
  return {{"source", source_name(f.source)},
          {"exog_name", f.exog_name},
          {"order", f.order},
          {"regime_orders", f.regime_orders},
          {"delay", f.delay},
          {"delay_searched", f.delay_searched},
          {"thresholds", f.thresholds},
          {"regimes", regimes},
          {"start", f.start},
          {"n_eff", f.n_eff},
          {"ssr", f.ssr},
          {"sigma2", f.sigma2},
          {"aic", f.aic},
          {"bic", f.bic},
          {"n_params", f.n_params},
          {"labels", f.labels}};
}

TARFit json_tar(const json& j) {
  TARFit f;
  f.source = parse_source(j.at("source").get<std::string>());
  f.exog_name = j.at("exog_name").get<std::string>();
  f.order = j.at("order").get<std::size_t>();
  f.regime_orders = j.at("regime_orders").get<std::vector<std::size_t>>();
  f.delay = j.at("delay").get<std::size_t>();
  f.delay_searched = j.at("delay_searched").get<bool>();
  f.thresholds = j.at("thresholds").get<std::vector<double>>();
  for (const auto& r : j.at("regimes")) {
    RegimeFit rf;
    rf.coefficients = json_vec(r.at("coefficients"));
    rf.ssr = r.at("ssr").get<double>();
    rf.count = r.at("count").get<std::size_t>();
    rf.variance = r.at("variance").get<double>();
    f.regimes.push_back(std::move(rf));
  }
  f.start = j.at("start").get<std::size_t>();
  f.n_eff = j.at("n_eff").get<std::size_t>();
  f.ssr = j.at("ssr").get<double>();
  f.sigma2 = j.at("sigma2").get<double>();
  f.aic = j.at("aic").get<double>();
  f.bic = j.at("bic").get<double>();
  f.n_params = j.at("n_params").get<std::size_t>();
  f.labels = j.at("labels").get<std::vector<int>>();
  return f;
}

json spec_json(const TARSpec& s) {
  return {{"regimes", s.regimes},
          {"orders", s.orders},
          {"delays", s.delays},
          {"source", source_name(s.source)},
          {"exog_name", s.exog_name},
          {"regime_orders", s.regime_orders},
          {"trim", s.trim},
          {"criterion", s.criterion == Criterion::AIC ? "aic" : "bic"}};
}

TARSpec json_spec(const json& j) {
  TARSpec s;
  s.regimes = j.at("regimes").get<std::size_t>();
  s.orders = j.at("orders").get<std::vector<std::size_t>>();
  s.delays = j.at("delays").get<std::vector<std::size_t>>();
  s.source = parse_source(j.at("source").get<std::string>());
  s.exog_name = j.at("exog_name").get<std::string>();
  s.regime_orders = j.at("regime_orders").get<std::vector<std::size_t>>();
  s.trim = j.at("trim").get<double>();
  s.criterion = j.at("criterion").get<std::string>() == "bic" ? Criterion::BIC : Criterion::AIC;
  return s;
}

bool same_fit(const TARFit& a, const TARFit& b) {
  if (a.regimes.size() != b.regimes.size()) return false;
  for (std::size_t l = 0; l < a.regimes.size(); ++l) {
    const auto &x = a.regimes[l], &y = b.regimes[l];
    if (x.coefficients != y.coefficients || x.ssr != y.ssr || x.count != y.count || x.variance != y.variance)
      return false;
  }
  return a.source == b.source && a.exog_name == b.exog_name && a.order == b.order &&
         a.regime_orders == b.regime_orders && a.delay == b.delay && a.delay_searched == b.delay_searched &&
         a.thresholds == b.thresholds && a.start == b.start && a.n_eff == b.n_eff && a.ssr == b.ssr &&
         a.sigma2 == b.sigma2 && a.aic == b.aic && a.bic == b.bic && a.n_params == b.n_params &&
         a.labels == b.labels;
}

bool same_spec(const TARSpec& a, const TARSpec& b) {
  return a.regimes == b.regimes && a.orders == b.orders && a.delays == b.delays && a.source == b.source &&
         a.exog_name == b.exog_name && a.regime_orders == b.regime_orders && a.trim == b.trim &&
         a.criterion == b.criterion;
}

double parse_double(const std::string& s, const std::string& what) {
  double x = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw IoError("bad number '" + s + "' in " + what);
  return x;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_model(std::ostream& os, const TTFMModel& m) {
  json loadings = json::array();
  for (const auto& comp : m.cp.loadings) {
    json modes = json::array();
    for (const auto& v : comp) modes.push_back(vec_json(v));
    loadings.push_back(modes);
  }
  json tars = json::array(), specs = json::array();
  for (const auto& f : m.tars) tars.push_back(tar_json(f));
  for (const auto& s : m.specs) specs.push_back(spec_json(s));
  json doc = {{"format_version", kModelFormatVersion},
              {"shape", m.cp.shape},
              {"rank", m.cp.rank},
              {"lag", m.cp.lag},
              {"train_length", m.train_length},
              {"cp_status", m.cp.status == FitStatus::Converged ? "converged" : "max_iter_reached"},
              {"cp_iterations", m.cp.iterations},
              {"cp_final_discrepancy", m.cp.final_discrepancy},
              {"loadings", loadings},
              {"strengths", m.cp.strengths},
              {"tar", tars},
              {"specs", specs}};
  os << doc.dump(2) << '\n';
}

TTFMModel read_model(std::istream& is) {
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::exception& e) {
    throw IoError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format_version").get<int>() != kModelFormatVersion)
      throw IoError("unsupported model format_version " + doc.at("format_version").dump());
    TTFMModel m;
    m.cp.shape = doc.at("shape").get<Shape>();
    m.cp.rank = doc.at("rank").get<std::size_t>();
    m.cp.lag = doc.at("lag").get<std::size_t>();
    m.train_length = doc.at("train_length").get<std::size_t>();
    m.cp.status = doc.at("cp_status").get<std::string>() == "converged" ? FitStatus::Converged
                                                                        : FitStatus::MaxIterReached;
    m.cp.iterations = doc.at("cp_iterations").get<int>();
    m.cp.final_discrepancy = doc.at("cp_final_discrepancy").get<double>();
    for (const auto& comp : doc.at("loadings")) {
      std::vector<Eigen::VectorXd> modes;
      for (const auto& v : comp) modes.push_back(json_vec(v));
      m.cp.loadings.push_back(std::move(modes));
    }
    m.cp.strengths = doc.at("strengths").get<std::vector<double>>();
    for (const auto& f : doc.at("tar")) m.tars.push_back(json_tar(f));
    for (const auto& s : doc.at("specs")) m.specs.push_back(json_spec(s));
    if (m.cp.loadings.size() != m.cp.rank || m.tars.size() != m.cp.rank)
      throw IoError("model file rank does not match its loadings or TAR fits");
    for (const auto& comp : m.cp.loadings) {
      if (comp.size() != m.cp.shape.size()) throw IoError("loading count does not match the shape");
      for (std::size_t k = 0; k < comp.size(); ++k)
        if (static_cast<std::size_t>(comp[k].size()) != m.cp.shape[k])
          throw IoError("loading length does not match the shape");
    }
    return m;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed model file: ") + e.what());
  }
}

void save_model(const std::string& path, const TTFMModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  write_model(os, model);
}

TTFMModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open model file " + path);
  return read_model(is);
}

bool identical(const TTFMModel& a, const TTFMModel& b) {
  if (a.cp.shape != b.cp.shape || a.cp.rank != b.cp.rank || a.cp.lag != b.cp.lag ||
      a.train_length != b.train_length || a.cp.strengths != b.cp.strengths ||
      a.cp.status != b.cp.status || a.cp.iterations != b.cp.iterations ||
      a.cp.final_discrepancy != b.cp.final_discrepancy || a.cp.loadings.size() != b.cp.loadings.size() ||
      a.tars.size() != b.tars.size() || a.specs.size() != b.specs.size())
    return false;
  for (std::size_t j = 0; j < a.cp.loadings.size(); ++j)
    if (a.cp.loadings[j] != b.cp.loadings[j]) return false;
  for (std::size_t j = 0; j < a.tars.size(); ++j)
    if (!same_fit(a.tars[j], b.tars[j])) return false;
  for (std::size_t j = 0; j < a.specs.size(); ++j)
    if (!same_spec(a.specs[j], b.specs[j])) return false;
  return true;
}

void write_factors_csv(std::ostream& os, const FactorPanel& panel, const std::vector<std::string>& times) {
  os << "t,time";
  for (std::size_t j = 0; j < panel.rank(); ++j) os << ",factor_" << j + 1;
  os << '\n';
  for (std::size_t t = 0; t < panel.length(); ++t) {
    os << t + 1 << ',' << (t < times.size() ? times[t] : "");
    for (std::size_t j = 0; j < panel.rank(); ++j) os << ',' << fmt_double(panel.factors[j][t]);
    os << '\n';
  }
}

void write_forecast_csv(std::ostream& os, const std::vector<ForecastRecord>& records) {
  const std::size_t r = records.empty() ? 0 : records.front().factor_forecasts.size();
  os << "t";
  for (std::size_t j = 0; j < r; ++j) os << ",factor_" << j + 1;
  os << ",sq_err_obs,sq_err_signal\n";
  for (const auto& rec : records) {
    os << rec.t + 1;
    for (double f : rec.factor_forecasts) os << ',' << fmt_double(f);
    os << ',' << fmt_double(rec.sq_err_obs) << ',';
    if (rec.sq_err_signal) os << fmt_double(*rec.sq_err_signal);
    os << '\n';
  }
}

void write_forecast_entries_csv(std::ostream& os, const std::vector<ForecastRecord>& records) {
  if (records.empty()) {
    os << "t,forecast,error\n";
    return;
  }
  const Shape& shape = records.front().forecast.shape();
  os << "t";
  for (std::size_t k = 0; k < shape.size(); ++k) os << ",i" << k + 1;
  os << ",forecast,error\n";
  std::vector<std::size_t> idx(shape.size());
  for (const auto& rec : records) {
    std::fill(idx.begin(), idx.end(), 0);
    for (std::size_t e = 0; e < rec.forecast.size(); ++e) {
      os << rec.t + 1;
      for (auto i : idx) os << ',' << i + 1;
      os << ',' << fmt_double(rec.forecast[e]) << ',' << fmt_double(rec.error[e]) << '\n';
      for (std::size_t k = 0; k < idx.size(); ++k) {
        if (++idx[k] < shape[k]) break;
        idx[k] = 0;
      }
    }
  }
}

std::vector<ForecastRecord> read_forecast_records(std::istream& summary, std::istream& entries) {
  std::string line;
  if (!std::getline(summary, line)) throw IoError("forecast file is empty");
  const auto head = split_csv(line);
  if (head.size() < 4 || head.front() != "t" || head[head.size() - 2] != "sq_err_obs")
    throw IoError("forecast file has an unexpected header");
  const std::size_t r = head.size() - 3;
  std::vector<ForecastRecord> recs;
  std::map<std::size_t, std::size_t> by_t;
  while (std::getline(summary, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != head.size()) throw IoError("forecast row has " + std::to_string(f.size()) + " fields");
    ForecastRecord rec;
    rec.t = static_cast<std::size_t>(parse_double(f[0], "forecast file")) - 1;
    for (std::size_t j = 0; j < r; ++j) rec.factor_forecasts.push_back(parse_double(f[1 + j], "forecast file"));
    rec.sq_err_obs = parse_double(f[r + 1], "forecast file");
    if (!f[r + 2].empty()) rec.sq_err_signal = parse_double(f[r + 2], "forecast file");
    by_t[rec.t] = recs.size();
    recs.push_back(std::move(rec));
  }

  if (!std::getline(entries, line)) throw IoError("forecast entries file is empty");
  const auto eh = split_csv(line);
  if (eh.size() < 4 || eh.front() != "t" || eh[eh.size() - 2] != "forecast")
    throw IoError("forecast entries file has an unexpected header");
  const std::size_t kk = eh.size() - 3;
  struct Cell {
    std::vector<std::size_t> idx;
    double forecast, error;
  };
  std::map<std::size_t, std::vector<Cell>> cells;
  Shape shape(kk, 0);
  while (std::getline(entries, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != eh.size()) throw IoError("entries row has " + std::to_string(f.size()) + " fields");
    Cell c;
    const auto t = static_cast<std::size_t>(parse_double(f[0], "entries file")) - 1;
    for (std::size_t k = 0; k < kk; ++k) {
      c.idx.push_back(static_cast<std::size_t>(parse_double(f[1 + k], "entries file")) - 1);
      shape[k] = std::max(shape[k], c.idx.back() + 1);
    }
    c.forecast = parse_double(f[kk + 1], "entries file");
    c.error = parse_double(f[kk + 2], "entries file");
    cells[t].push_back(std::move(c));
  }
  for (auto& [t, list] : cells) {
    auto it = by_t.find(t);
    if (it == by_t.end()) throw IoError("entries file has origin " + std::to_string(t + 1) + " missing from the forecast file");
    ForecastRecord& rec = recs[it->second];
    rec.forecast = DenseTensor(shape);
    rec.error = DenseTensor(shape);
    for (const auto& c : list) {
      rec.forecast.at(c.idx) = c.forecast;
      rec.error.at(c.idx) = c.error;
    }
  }
  for (const auto& rec : recs)
    if (rec.forecast.size() == 0) throw IoError("origin " + std::to_string(rec.t + 1) + " has no entries");
  return recs;
}

void write_evaluation_json(std::ostream& os, const ForecastSummary& s) {
  json doc = {{"steps", s.steps},
              {"entries", s.entries},
              {"mse_obs", s.mse_obs},
              {"mse_obs_per_entry", s.mse_obs_per_entry},
              {"mse_signal", s.mse_signal ? json(*s.mse_signal) : json(nullptr)},
              {"subset_mse_per_entry", s.subset_per_entry},
              {"per_step_obs", s.per_step_obs}};
  if (!s.per_step_signal.empty()) doc["per_step_signal"] = s.per_step_signal;
  os << doc.dump(2) << '\n';
}

}  // namespace ttfm
