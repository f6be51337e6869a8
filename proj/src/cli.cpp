#include "ttfm/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ttfm/error.hpp"
#include "ttfm/model_io.hpp"
#include "ttfm/panel.hpp"
#include "ttfm/pipeline.hpp"
#include "ttfm/simulation.hpp"

namespace ttfm {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ConfigError carrying every violated key.
class ConfigIssues : public ConfigError {
 public:
  explicit ConfigIssues(std::vector<std::string> issues)
      : ConfigError(join(issues)), issues_(std::move(issues)) {}
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s = std::to_string(v.size()) + " configuration error(s): ";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "; " : "") + v[i];
    return s;
  }
  std::vector<std::string> issues_;
};

using Issues = std::vector<std::string>;

struct SubsetDef {
  std::string name;
  std::size_t mode = 1;  // 1-based
  std::vector<json> items;  // 1-based index or label
};

struct SimSection {
  std::vector<Shape> dims{{5, 7}, {10, 14}, {20, 25}};
  std::vector<double> snrs{0.5, 1.0, 2.0};
  std::vector<std::size_t> Ts{200, 500, 1000};
  std::size_t replicates = 100;
  std::size_t extra = 200;
  std::size_t burn_in = 500;
  unsigned threads = 0;
};

struct RunConfig {
  std::string data;
  std::map<std::string, Transform> transforms;
  Transform default_transform = Transform::None;
  bool standardize = true;
  std::size_t rank = 0;  // 0: eigen-ratio selection
  std::size_t r_max = 8;
  std::size_t lag = 1;
  std::size_t regimes = 2;
  std::vector<std::size_t> delay_set{1};
  std::vector<std::size_t> order_set{1};
  std::vector<std::size_t> regime_orders;
  ThresholdSource source = ThresholdSource::SelfExciting;
  std::string exog_name;
  std::map<std::string, ThresholdExpr> exog;
  std::optional<std::size_t> exog_delay;
  std::optional<std::size_t> train_end;
  RefitPolicy refit = RefitPolicy::Frozen;
  bool research = false;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string model;
  std::string emit_panel;
  CPOptions cp;
  double trim = 0.1;
  Criterion criterion = Criterion::AIC;
  std::vector<SubsetDef> subsets;
  SimSection sim;
};

const std::set<std::string> kKeys = {
    "data", "transforms", "default_transform", "standardize", "rank", "r_max", "lag", "regimes",
    "delay_set", "order_set", "regime_orders", "threshold", "exog", "exog_delay", "train_end",
    "refit", "research_thresholds", "seed", "out", "model", "emit_panel", "cp", "trim",
    "criterion", "subsets", "simulate"};

// Scalar flag text -> JSON integer, number or string.
json scalar(const std::string& s) {
  long long i = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), i);
  if (r.ec == std::errc() && r.ptr == s.data() + s.size()) return i;
  double d = 0.0;
  auto rd = std::from_chars(s.data(), s.data() + s.size(), d);
  if (rd.ec == std::errc() && rd.ptr == s.data() + s.size()) return d;
  return s;
}

json list(const std::string& s) {
  json a = json::array();
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) a.push_back(scalar(item));
  return a;
}

bool get_count(const json& j, const std::string& key, std::size_t& dst, Issues& is, std::size_t min = 0) {
  if (!j.contains(key)) return false;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(min)) {
    is.push_back(key + ": expected an integer >= " + std::to_string(min) + ", got " + v.dump());
    return false;
  }
  dst = v.get<std::size_t>();
  return true;
}

void get_counts(const json& j, const std::string& key, std::vector<std::size_t>& dst, Issues& is,
                std::size_t min = 1) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  std::vector<std::size_t> out;
  bool ok = v.is_array() && !v.empty();
  if (ok)
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<long long>() < static_cast<long long>(min)) {
        ok = false;
        break;
      }
      out.push_back(e.get<std::size_t>());
    }
  if (!ok) {
    is.push_back(key + ": expected a nonempty list of integers >= " + std::to_string(min) + ", got " + v.dump());
    return;
  }
  dst = std::move(out);
}

template <class T>
void get_as(const json& j, const std::string& key, T& dst, Issues& is, const char* expected) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    is.push_back(key + ": expected " + expected + ", got " + j.at(key).dump());
  }
}

void get_transform(const json& v, const std::string& key, Transform& dst, Issues& is) {
  try {
    dst = parse_transform(v.get<std::string>());
  } catch (const std::exception&) {
    is.push_back(key + ": unknown transform " + v.dump() + " (none, diff, dln, d2ln, gp)");
  }
}

RunConfig parse_config(const json& j, Issues& is) {
  RunConfig c;
  if (!j.is_object()) {
    is.push_back("configuration must be a JSON object");
    return c;
  }
  for (const auto& [k, v] : j.items())
    if (!kKeys.count(k)) is.push_back("unknown key '" + k + "'");

  get_as(j, "data", c.data, is, "a path");
  if (j.contains("transforms")) {
    if (!j["transforms"].is_object()) {
      is.push_back("transforms: expected an object mapping column label to transform");
    } else {
      for (const auto& [col, v] : j["transforms"].items()) get_transform(v, "transforms." + col, c.transforms[col], is);
    }
  }
  if (j.contains("default_transform")) get_transform(j["default_transform"], "default_transform", c.default_transform, is);
  get_as(j, "standardize", c.standardize, is, "true or false");

  if (j.contains("rank")) {
    const auto& v = j["rank"];
    if (v.is_string() && v.get<std::string>() == "auto") c.rank = 0;
    else if (!get_count(j, "rank", c.rank, is, 1)) {
      if (!v.is_number_integer()) is.push_back("rank: expected a positive integer or \"auto\", got " + v.dump());
    }
  }
  get_count(j, "r_max", c.r_max, is, 1);
  get_count(j, "lag", c.lag, is, 1);
  get_count(j, "regimes", c.regimes, is, 1);
  if (j.contains("regimes") && j["regimes"].is_number_integer() && c.regimes > 3)
    is.push_back("regimes: must be 1, 2 or 3");
  get_counts(j, "delay_set", c.delay_set, is);
  get_counts(j, "order_set", c.order_set, is);
  get_counts(j, "regime_orders", c.regime_orders, is);

  if (j.contains("exog")) {
    if (!j["exog"].is_object()) {
      is.push_back("exog: expected an object {NAME: {row, col, transform}}");
    } else {
      for (const auto& [name, v] : j["exog"].items()) {
        ThresholdExpr e;
        const std::string p = "exog." + name;
        if (!v.is_object() || !v.contains("row") || !v.contains("col") || !v["row"].is_string() ||
            !v["col"].is_string()) {
          is.push_back(p + ": needs string fields row and col");
          continue;
        }
        e.row = v["row"].get<std::string>();
        e.col = v["col"].get<std::string>();
        if (v.contains("transform")) get_transform(v["transform"], p + ".transform", e.transform, is);
        c.exog[name] = e;
      }
    }
  }
  if (j.contains("threshold")) {
    const auto& v = j["threshold"];
    const std::string s = v.is_string() ? v.get<std::string>() : "";
    if (s == "self") {
      c.source = ThresholdSource::SelfExciting;
    } else if (s.rfind("exog:", 0) == 0 && s.size() > 5) {
      c.source = ThresholdSource::Exogenous;
      c.exog_name = s.substr(5);
      if (!c.exog.count(c.exog_name)) is.push_back("threshold: exogenous series '" + c.exog_name + "' is not defined under exog");
    } else {
      is.push_back("threshold: expected \"self\" or \"exog:NAME\", got " + v.dump());
    }
  }
  std::size_t tmp = 0;
  if (get_count(j, "exog_delay", tmp, is, 1)) c.exog_delay = tmp;
  if (get_count(j, "train_end", tmp, is, 2)) c.train_end = tmp;
  if (j.contains("refit")) {
    const auto& v = j["refit"];
    if (v == "frozen") c.refit = RefitPolicy::Frozen;
    else if (v == "params") c.refit = RefitPolicy::RefitParams;
    else is.push_back("refit: expected \"frozen\" or \"params\", got " + v.dump());
  }
  get_as(j, "research_thresholds", c.research, is, "true or false");
  if (c.research && c.refit != RefitPolicy::RefitParams)
    is.push_back("research_thresholds: requires refit \"params\"");
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer() || j["seed"].get<long long>() < 0) is.push_back("seed: expected a nonnegative integer");
    else c.seed = j["seed"].get<std::uint64_t>();
  }
  get_as(j, "out", c.out, is, "a directory path");
  get_as(j, "model", c.model, is, "a path");
  get_as(j, "emit_panel", c.emit_panel, is, "a path");

  if (j.contains("cp")) {
    const auto& cp = j["cp"];
    if (!cp.is_object()) {
      is.push_back("cp: expected an object");
    } else {
      for (const auto& [k, v] : cp.items())
        if (k != "tol" && k != "max_iter" && k != "restarts") is.push_back("unknown key 'cp." + k + "'");
      if (cp.contains("tol")) {
        if (!cp["tol"].is_number() || !(cp["tol"].get<double>() > 0.0)) is.push_back("cp.tol: expected a positive number");
        else c.cp.tol = cp["tol"].get<double>();
      }
      std::size_t n = 0;
      if (get_count(cp, "max_iter", n, is, 1)) c.cp.max_iter = static_cast<int>(n);
      if (get_count(cp, "restarts", n, is, 0)) c.cp.restarts = static_cast<int>(n);
    }
  }
  if (j.contains("trim")) {
    if (!j["trim"].is_number() || !(j["trim"].get<double>() > 0.0 && j["trim"].get<double>() < 0.5))
      is.push_back("trim: expected a number in (0, 0.5)");
    else c.trim = j["trim"].get<double>();
  }
  if (j.contains("criterion")) {
    const auto& v = j["criterion"];
    if (v == "aic") c.criterion = Criterion::AIC;
    else if (v == "bic") c.criterion = Criterion::BIC;
    else is.push_back("criterion: expected \"aic\" or \"bic\", got " + v.dump());
  }
  if (j.contains("subsets")) {
    if (!j["subsets"].is_array()) {
      is.push_back("subsets: expected a list of {name, mode, indices}");
    } else {
      for (const auto& s : j["subsets"]) {
        SubsetDef d;
        if (!s.is_object() || !s.contains("name") || !s["name"].is_string() || !s.contains("indices") ||
            !s["indices"].is_array() || !s.contains("mode") || !s["mode"].is_number_integer() ||
            s["mode"].get<long long>() < 1) {
          is.push_back("subsets: entry " + s.dump() + " needs name, mode (>= 1) and indices");
          continue;
        }
        d.name = s["name"].get<std::string>();
        d.mode = s["mode"].get<std::size_t>();
        for (const auto& e : s["indices"]) d.items.push_back(e);
        c.subsets.push_back(std::move(d));
      }
    }
  }
  if (j.contains("simulate")) {
    const auto& s = j["simulate"];
    if (!s.is_object()) {
      is.push_back("simulate: expected an object");
    } else {
      for (const auto& [k, v] : s.items())
        if (k != "dims" && k != "snrs" && k != "Ts" && k != "replicates" && k != "extra" && k != "burn_in" &&
            k != "threads")
          is.push_back("unknown key 'simulate." + k + "'");
      if (s.contains("dims")) {
        std::vector<Shape> dims;
        bool ok = s["dims"].is_array() && !s["dims"].empty();
        if (ok)
          for (const auto& d : s["dims"]) {
            Issues local;
            std::vector<std::size_t> shp;
            get_counts(json{{"d", d}}, "d", shp, local, 1);
            if (!local.empty() || shp.size() < 2) ok = false;
            else dims.push_back(shp);
          }
        if (!ok) is.push_back("simulate.dims: expected a list of shapes with at least two positive sizes");
        else c.sim.dims = dims;
      }
      if (s.contains("snrs")) {
        bool ok = s["snrs"].is_array() && !s["snrs"].empty();
        std::vector<double> v;
        if (ok)
          for (const auto& e : s["snrs"]) {
            if (!e.is_number() || !(e.get<double>() > 0.0)) ok = false;
            else v.push_back(e.get<double>());
          }
        if (!ok) is.push_back("simulate.snrs: expected a nonempty list of positive numbers");
        else c.sim.snrs = v;
      }
      Issues sub;
      get_counts(s, "Ts", c.sim.Ts, sub, 10);
      get_count(s, "replicates", c.sim.replicates, sub, 1);
      get_count(s, "extra", c.sim.extra, sub, 2);
      get_count(s, "burn_in", c.sim.burn_in, sub, 0);
      std::size_t th = 0;
      if (get_count(s, "threads", th, sub, 0)) c.sim.threads = static_cast<unsigned>(th);
      for (auto& e : sub) is.push_back("simulate." + e);
    }
  }
  return c;
}

TARSpec make_spec(const RunConfig& c) {
  TARSpec s;
  s.regimes = c.regimes;
  s.orders = c.order_set;
  s.delays = c.delay_set;
  if (c.source == ThresholdSource::Exogenous && c.exog_delay) s.delays = {*c.exog_delay};
  s.source = c.source;
  s.exog_name = c.exog_name;
  s.regime_orders = c.regime_orders;
  s.trim = c.trim;
  s.criterion = c.criterion;
  return s;
}

IngestSchema make_schema(const RunConfig& c) {
  IngestSchema s;
  s.transforms = c.transforms;
  s.default_transform = c.default_transform;
  s.standardize = c.standardize;
  return s;
}

void require(bool ok, const std::string& msg, Issues& is) {
  if (!ok) is.push_back(msg);
}

void raise_if(const Issues& is) {
  if (!is.empty()) throw ConfigIssues(is);
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot write " + p.string());
  return os;
}

std::size_t resolve_train_end(const RunConfig& c, std::size_t T, std::size_t fallback) {
  const std::size_t n = c.train_end.value_or(fallback);
  if (n < 2 || n > T)
    throw ConfigIssues({"train_end: " + std::to_string(n) + " is outside [2, " + std::to_string(T) + "]"});
  return n;
}

struct ExogBundle {
  SeriesMap series;
  json summary = json::object();
};

ExogBundle build_exog(const RunConfig& c, const PanelDataset& ds, std::size_t window) {
  ExogBundle b;
  Issues is;
  for (const auto& [name, e] : c.exog) {
    try {
      ds.row_index(e.row);
      ds.col_index(e.col);
    } catch (const Error& err) {
      is.push_back("exog." + name + ": " + err.what());
      continue;
    }
    ThresholdExpr expr = e;
    expr.delay = c.exog_delay.value_or(c.delay_set.front());
    const auto ts = make_threshold_series(ds, expr, window);
    b.series[name] = ts.values;
    b.summary[name] = {{"mean", ts.mean}, {"sd", ts.sd}, {"window", window}, {"delay", expr.delay}};
  }
  raise_if(is);
  return b;
}

std::vector<EntrySubset> resolve_subsets(const RunConfig& c, const Shape& shape, const PanelDataset* ds) {
  std::vector<EntrySubset> out;
  Issues is;
  for (const auto& d : c.subsets) {
    if (d.mode > shape.size()) {
      is.push_back("subsets." + d.name + ": mode " + std::to_string(d.mode) + " exceeds the tensor order");
      continue;
    }
    const std::size_t k = d.mode - 1;
    std::vector<std::size_t> idx;
    for (const auto& item : d.items) {
      if (item.is_number_integer()) {
        const long long i = item.get<long long>();
        if (i < 1 || static_cast<std::size_t>(i) > shape[k])
          is.push_back("subsets." + d.name + ": index " + item.dump() + " outside 1.." + std::to_string(shape[k]));
        else idx.push_back(static_cast<std::size_t>(i - 1));
      } else if (item.is_string()) {
        if (!ds || k > 1) {
          is.push_back("subsets." + d.name + ": label " + item.dump() + " needs data and mode 1 or 2");
          continue;
        }
        try {
          idx.push_back(k == 0 ? ds->row_index(item.get<std::string>()) : ds->col_index(item.get<std::string>()));
        } catch (const Error& e) {
          is.push_back("subsets." + d.name + ": " + e.what());
        }
      } else {
        is.push_back("subsets." + d.name + ": bad index " + item.dump());
      }
    }
    out.push_back(mode_subset(shape, d.name, k, idx));
  }
  raise_if(is);
  return out;
}

json json_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

int cmd_fit(const RunConfig& c, std::ostream& out) {
  Issues is;
  require(!c.data.empty(), "data: required for fit", is);
  raise_if(is);
  const PanelDataset ds = ingest(c.data, make_schema(c));
  const std::size_t T = ds.values.length();
  const std::size_t n = resolve_train_end(c, T, T);
  const TensorSeries train = ds.values.slice(0, n);
  const std::size_t min_dim = *std::min_element(ds.values.shape().begin(), ds.values.shape().end());
  std::size_t r = c.rank;
  if (r == 0) r = select_rank(train, c.lag, std::min(c.r_max, min_dim));
  if (r > min_dim) throw ConfigIssues({"rank: " + std::to_string(r) + " exceeds the smallest dimension " + std::to_string(min_dim)});
  const ExogBundle exog = build_exog(c, ds, n);
  TARSpec spec = make_spec(c);
  try {
    spec.validate();
  } catch (const DomainError& e) {
    throw ConfigIssues({std::string("TAR settings: ") + e.what()});
  }
  CPOptions cp = c.cp;
  cp.seed = c.seed;
  const TTFMModel model = fit_ttfm(train, r, {spec}, exog.series, c.lag, cp);

  const fs::path dir(c.out);
  {
    auto os = open_out(dir / "model.json");
    write_model(os, model);
  }
  {
    auto os = open_out(dir / "factors.csv");
    write_factors_csv(os, extract_factors(ds.values, model.cp), ds.times);
  }
  json factors = json::array();
  for (const auto& f : model.tars) {
    json counts = json::array();
    for (const auto& reg : f.regimes) counts.push_back(reg.count);
    factors.push_back({{"delay", f.delay},
                       {"order", f.order},
                       {"thresholds", f.thresholds},
                       {"regime_sizes", counts},
                       {"aic", json_or_null(f.aic)},
                       {"bic", json_or_null(f.bic)}});
  }
  json summary = {{"command", "fit"},
                  {"rank", model.cp.rank},
                  {"train_length", n},
                  {"train_start", n ? ds.times.front() : ""},
                  {"train_end", ds.times[n - 1]},
                  {"cp_status", model.cp.status == FitStatus::Converged ? "converged" : "max_iter_reached"},
                  {"cp_iterations", model.cp.iterations},
                  {"strengths", model.cp.strengths},
                  {"factors", factors},
                  {"threshold_series", exog.summary}};
  {
    auto os = open_out(dir / "fit_summary.json");
    os << summary.dump(2) << '\n';
  }
  out << summary.dump() << '\n';
  return 0;
}

int cmd_forecast(const RunConfig& c, std::ostream& out) {
  Issues is;
  require(!c.data.empty(), "data: required for forecast", is);
  raise_if(is);
  const fs::path dir(c.out);
  const TTFMModel model = load_model(c.model.empty() ? (dir / "model.json").string() : c.model);
  const PanelDataset ds = ingest(c.data, make_schema(c));
  if (ds.values.shape() != model.cp.shape) throw ShapeError("data shape does not match the model");
  const std::size_t T = ds.values.length();
  const std::size_t n = resolve_train_end(c, T, model.train_length);
  if (n >= T) throw ConfigIssues({"train_end: no observations left to forecast"});
  const ExogBundle exog = build_exog(c, ds, n);
  RollingOptions opts;
  opts.policy = c.refit;
  opts.research_thresholds = c.research;
  opts.trim = c.trim;
  const auto recs = rolling_forecast(model, ds.values, n - 1, T - 2, opts, exog.series);
  {
    auto os = open_out(dir / "forecast.csv");
    write_forecast_csv(os, recs);
  }
  {
    auto os = open_out(dir / "forecast_entries.csv");
    write_forecast_entries_csv(os, recs);
  }
  out << json{{"command", "forecast"}, {"steps", recs.size()}, {"first_origin", n}, {"last_origin", T - 1}}.dump()
      << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& c, std::ostream& out) {
  const fs::path dir(c.out);
  std::ifstream sum(dir / "forecast.csv", std::ios::binary), ent(dir / "forecast_entries.csv", std::ios::binary);
  if (!sum || !ent) throw IoError("evaluate needs forecast.csv and forecast_entries.csv in " + dir.string());
  const auto recs = read_forecast_records(sum, ent);
  if (recs.empty()) throw InsufficientData("forecast file has no records");
  std::optional<PanelDataset> ds;
  if (!c.data.empty()) ds = ingest(c.data, make_schema(c));
  const auto subsets = resolve_subsets(c, recs.front().forecast.shape(), ds ? &*ds : nullptr);
  const auto summary = evaluate_forecasts(recs, subsets);
  std::ostringstream js;
  write_evaluation_json(js, summary);
  {
    auto os = open_out(dir / "evaluation.json");
    os << js.str();
  }
  out << js.str();
  return 0;
}

int cmd_simulate(const RunConfig& c, std::ostream& out) {
  if (!c.emit_panel.empty()) {
    SimConfig sc;
    sc.dims = c.sim.dims.front();
    sc.T = c.sim.Ts.front();
    sc.extra = c.sim.extra;
    sc.snr = c.sim.snrs.front();
    sc.burn_in = c.sim.burn_in;
    sc.seed = c.seed;
    const SimTruth truth = generate(sc);
    auto os = open_out(c.emit_panel);
    write_series_csv(os, truth.observed, quarter_labels(1900, 1, truth.observed.length()));
    out << json{{"command", "simulate"}, {"panel", c.emit_panel}, {"length", truth.observed.length()}}.dump() << '\n';
    return 0;
  }
  StudyConfig sc;
  sc.dims = c.sim.dims;
  sc.snrs = c.sim.snrs;
  sc.Ts = c.sim.Ts;
  sc.replicates = c.sim.replicates;
  sc.extra = c.sim.extra;
  sc.burn_in = c.sim.burn_in;
  sc.seed = c.seed;
  sc.cp = c.cp;
  sc.threads = c.sim.threads;
  const auto rows = run_study(sc);
  const fs::path p = fs::path(c.out) / "simulation.csv";
  auto os = open_out(p);
  write_study_csv(os, rows);
  out << json{{"command", "simulate"}, {"rows", rows.size()}, {"file", p.string()}}.dump() << '\n';
  return 0;
}

void print_error(std::ostream& err, const std::string& code, const std::string& msg, const Issues& issues = {}) {
  json e = {{"error", code}, {"message", msg}};
  if (!issues.empty()) e["issues"] = issues;
  err << e.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Threshold tensor factor model: fit, forecast, evaluate, simulate", "ttfm"};
  app.require_subcommand(1, 1);
  std::string config, rank, lag, regimes, delay_set, order_set, threshold, exog_delay, train_end, refit, seed,
      outdir, data, model, replicates, emit_panel;
  std::vector<std::string> subsets;

  struct Flag {
    const char* name;
    std::string* dst;
    const char* help;
  };
  const std::vector<Flag> flags = {
      {"--config", &config, "JSON configuration file"},
      {"--data", &data, "long-format panel CSV (time,row,col,value)"},
      {"--rank", &rank, "number of factors or 'auto'"},
      {"--lag", &lag, "auto-moment lag h"},
      {"--regimes", &regimes, "TAR regimes (1-3)"},
      {"--delay-set", &delay_set, "comma-separated delay candidates"},
      {"--order-set", &order_set, "comma-separated AR order candidates"},
      {"--threshold", &threshold, "self or exog:NAME"},
      {"--exog-delay", &exog_delay, "delay d applied to the exogenous threshold"},
      {"--train-end", &train_end, "number of training observations"},
      {"--refit", &refit, "frozen or params"},
      {"--seed", &seed, "RNG seed"},
      {"--out", &outdir, "output directory"},
      {"--model", &model, "model file (default OUT/model.json)"},
      {"--replicates", &replicates, "simulation replicates per cell"},
      {"--emit-panel", &emit_panel, "simulate: write one synthetic panel to PATH instead of the study"},
  };
  std::vector<CLI::App*> subs;
  for (const char* name : {"fit", "forecast", "evaluate", "simulate"}) {
    auto* s = app.add_subcommand(name);
    for (const auto& f : flags) s->add_option(f.name, *f.dst, f.help);
    s->add_option("--subset", subsets, "NAME=MODE:LIST with 1-based indices or labels");
    subs.push_back(s);
  }
  subs[0]->description("fit the model on the training window");
  subs[1]->description("rolling one-step forecasts over the test window");
  subs[2]->description("summarize forecast errors");
  subs[3]->description("run the simulation study");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage", e.what());
    return 2;
  }

  try {
    json j = json::object();
    if (!config.empty()) {
      std::ifstream is(config, std::ios::binary);
      if (!is) throw IoError("cannot open config " + config);
      try {
        j = json::parse(is);
      } catch (const json::exception& e) {
        throw ConfigIssues({std::string("config is not valid JSON: ") + e.what()});
      }
      // Relative data and exog paths are taken relative to the config file.
      if (j.is_object() && j.contains("data") && j["data"].is_string()) {
        fs::path p = j["data"].get<std::string>();
        if (p.is_relative()) j["data"] = (fs::path(config).parent_path() / p).lexically_normal().string();
      }
    }
    if (!j.is_object()) throw ConfigIssues({"configuration must be a JSON object"});
    auto set = [&](const std::string& v, const char* key, bool is_list = false) {
      if (!v.empty()) j[key] = is_list ? list(v) : scalar(v);
    };
    set(rank, "rank");
    set(lag, "lag");
    set(regimes, "regimes");
    set(delay_set, "delay_set", true);
    set(order_set, "order_set", true);
    set(exog_delay, "exog_delay");
    set(train_end, "train_end");
    set(seed, "seed");
    if (!threshold.empty()) j["threshold"] = threshold;
    if (!refit.empty()) j["refit"] = refit;
    if (!outdir.empty()) j["out"] = outdir;
    if (!data.empty()) j["data"] = data;
    if (!model.empty()) j["model"] = model;
    if (!emit_panel.empty()) j["emit_panel"] = emit_panel;
    if (!replicates.empty()) j["simulate"]["replicates"] = scalar(replicates);
    Issues is;
    for (const auto& s : subsets) {
      const auto eq = s.find('='), colon = s.find(':');
      if (eq == std::string::npos || colon == std::string::npos || colon < eq) {
        is.push_back("--subset: expected NAME=MODE:LIST, got '" + s + "'");
        continue;
      }
      j["subsets"].push_back(
          {{"name", s.substr(0, eq)}, {"mode", scalar(s.substr(eq + 1, colon - eq - 1))}, {"indices", list(s.substr(colon + 1))}});
    }
    const RunConfig c = parse_config(j, is);
    raise_if(is);

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "fit") return cmd_fit(c, out);
    if (cmd == "forecast") return cmd_forecast(c, out);
    if (cmd == "evaluate") return cmd_evaluate(c, out);
    return cmd_simulate(c, out);
  } catch (const ConfigIssues& e) {
    print_error(err, e.code(), e.what(), e.issues());
    return 2;
  } catch (const ConfigError& e) {
    print_error(err, e.code(), e.what());
    return 2;
  } catch (const Error& e) {
    print_error(err, e.code(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error(err, "internal", e.what());
    return 1;
  }
}

}  // namespace ttfm
