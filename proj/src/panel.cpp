#include "ttfm/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include "ttfm/error.hpp"
#include "ttfm/format.hpp"

namespace ttfm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n\"");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n\"");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto c = line.find(',', pos);
    out.push_back(trim(std::string_view(line).substr(pos, c == std::string::npos ? std::string::npos : c - pos)));
    if (c == std::string::npos) break;
    pos = c + 1;
  }
  return out;
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// (format, year, sub-period, day); format 0 = ISO date, 1 = quarter
using TimeKey = std::tuple<int, int, int, int>;

bool parse_time(const std::string& s, TimeKey& key) {
  auto num = [](std::string_view v) {
    int x = 0;
    std::from_chars(v.data(), v.data() + v.size(), x);
    return x;
  };
  if (s.size() == 6 && (s[4] == 'Q' || s[4] == 'q') && all_digits(std::string_view(s).substr(0, 4)) &&
      s[5] >= '1' && s[5] <= '4') {
    key = {1, num(std::string_view(s).substr(0, 4)), s[5] - '0', 0};
    return true;
  }
  if (s.size() == 10 && s[4] == '-' && s[7] == '-' && all_digits(std::string_view(s).substr(0, 4)) &&
      all_digits(std::string_view(s).substr(5, 2)) && all_digits(std::string_view(s).substr(8, 2))) {
    const int m = num(std::string_view(s).substr(5, 2)), d = num(std::string_view(s).substr(8, 2));
    if (m < 1 || m > 12 || d < 1 || d > 31) return false;
    key = {0, num(std::string_view(s).substr(0, 4)), m, d};
    return true;
  }
  return false;
}

std::size_t index_of(std::vector<std::string>& labels, std::map<std::string, std::size_t>& idx,
                     const std::string& label) {
  auto [it, fresh] = idx.try_emplace(label, labels.size());
  if (fresh) labels.push_back(label);
  return it->second;
}

}  // namespace

Transform parse_transform(const std::string& s) {
  std::string l = s;
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
  if (l == "none" || l == "level") return Transform::None;
  if (l == "diff" || l == "d") return Transform::Diff;
  if (l == "dln") return Transform::DLn;
  if (l == "d2ln") return Transform::D2Ln;
  if (l == "gp") return Transform::GP;
  throw ConfigError("unknown transform '" + s + "' (expected none, diff, dln, d2ln or gp)");
}

std::string transform_name(Transform t) {
  switch (t) {
    case Transform::None: return "none";
    case Transform::Diff: return "diff";
    case Transform::DLn: return "dln";
    case Transform::D2Ln: return "d2ln";
    case Transform::GP: return "gp";
  }
  return "none";
}

std::size_t transform_order(Transform t) {
  switch (t) {
    case Transform::None: return 0;
    case Transform::D2Ln: return 2;
    default: return 1;
  }
}

std::vector<double> apply_transform(std::span<const double> x, Transform t, const std::string& where) {
  const std::size_t ord = transform_order(t);
  if (x.size() <= ord)
    throw InsufficientData(where + "series of length " + std::to_string(x.size()) + " is too short for " +
                           transform_name(t));
  auto ln = [&](std::size_t i) {
    if (!(x[i] > 0))
      throw DomainError(where + "nonpositive value " + fmt_double(x[i]) + " at position " +
                        std::to_string(i + 1) + " under " + transform_name(t));
    return std::log(x[i]);
  };
  std::vector<double> out;
  out.reserve(x.size() - ord);
  for (std::size_t i = ord; i < x.size(); ++i) {
    switch (t) {
      case Transform::None: out.push_back(x[i]); break;
      case Transform::Diff: out.push_back(x[i] - x[i - 1]); break;
      case Transform::DLn: out.push_back(ln(i) - ln(i - 1)); break;
      case Transform::D2Ln: out.push_back(ln(i) - 2.0 * ln(i - 1) + ln(i - 2)); break;
      case Transform::GP:
        if (x[i - 1] == 0.0)
          throw DomainError(where + "zero base value at position " + std::to_string(i) + " under gp");
        out.push_back((x[i] - x[i - 1]) / x[i - 1]);
        break;
    }
  }
  return out;
}

std::size_t PanelDataset::row_index(const std::string& label) const {
  auto it = std::find(row_labels.begin(), row_labels.end(), label);
  if (it == row_labels.end()) throw ConfigError("unknown row label '" + label + "'");
  return static_cast<std::size_t>(it - row_labels.begin());
}

std::size_t PanelDataset::col_index(const std::string& label) const {
  auto it = std::find(col_labels.begin(), col_labels.end(), label);
  if (it == col_labels.end()) throw ConfigError("unknown column label '" + label + "'");
  return static_cast<std::size_t>(it - col_labels.begin());
}

PanelDataset ingest(const std::string& path, const IngestSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open data file " + path);
  return ingest_stream(in, schema, path);
}

PanelDataset ingest_stream(std::istream& in, const IngestSchema& schema, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw IngestError(source + ": empty input");
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  auto header = split(line);
  for (auto& h : header)
    std::transform(h.begin(), h.end(), h.begin(), [](unsigned char c) { return std::tolower(c); });
  if (header != std::vector<std::string>{"time", "row", "col", "value"})
    throw IngestError(source + ": header must be time,row,col,value");

  PanelDataset ds;
  std::map<std::string, std::size_t> ridx, cidx;
  std::map<std::string, TimeKey> tkeys;
  std::map<std::tuple<std::string, std::size_t, std::size_t>, double> cells;
  int format = -1;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split(line);
    const std::string at = source + ":" + std::to_string(lineno) + ": ";
    if (f.size() != 4) throw IngestError(at + "expected 4 fields, got " + std::to_string(f.size()));
    TimeKey key;
    if (!parse_time(f[0], key)) throw IngestError(at + "bad time '" + f[0] + "' (use YYYY-MM-DD or YYYYQn)");
    if (format < 0) format = std::get<0>(key);
    if (std::get<0>(key) != format) throw IngestError(at + "mixed time formats");
    tkeys.emplace(f[0], key);
    if (f[1].empty() || f[2].empty()) throw IngestError(at + "empty row or column label");
    const auto r = index_of(ds.row_labels, ridx, f[1]);
    const auto c = index_of(ds.col_labels, cidx, f[2]);
    const std::string& v = f[3];
    if (v.empty() || v == "NA" || v == "na" || v == "NaN" || v == "nan") continue;  // reported as a gap
    double x = 0.0;
    const char* e = v.data() + v.size();
    auto res = std::from_chars(v.data() + (v[0] == '+' ? 1 : 0), e, x);
    if (res.ec != std::errc() || res.ptr != e || !std::isfinite(x))
      throw IngestError(at + "bad value '" + v + "'");
    if (!cells.emplace(std::make_tuple(f[0], r, c), x).second)
      throw IngestError(at + "duplicate cell (" + f[0] + ", " + f[1] + ", " + f[2] + ")");
  }
  if (tkeys.empty()) throw IngestError(source + ": no data rows");

  for (const auto& [label, key] : tkeys) ds.raw_times.push_back(label);
  std::sort(ds.raw_times.begin(), ds.raw_times.end(),
            [&](const auto& a, const auto& b) { return tkeys.at(a) < tkeys.at(b); });

  const std::size_t nr = ds.row_labels.size(), nc = ds.col_labels.size(), nt = ds.raw_times.size();
  std::vector<std::string> gaps;
  std::size_t n_gaps = 0;
  ds.raw = TensorSeries(Shape{nr, nc});
  for (const auto& t : ds.raw_times) {
    DenseTensor x(Shape{nr, nc});
    for (std::size_t c = 0; c < nc; ++c)
      for (std::size_t r = 0; r < nr; ++r) {
        auto it = cells.find({t, r, c});
        if (it == cells.end()) {
          if (++n_gaps <= 20) gaps.push_back("(" + t + ", " + ds.row_labels[r] + ", " + ds.col_labels[c] + ")");
          continue;
        }
        x[r + nr * c] = it->second;
      }
    ds.raw.push_back(std::move(x));
  }
  if (n_gaps) {
    std::string msg = source + ": " + std::to_string(n_gaps) + " missing cell(s):";
    for (const auto& g : gaps) msg += " " + g;
    if (n_gaps > gaps.size()) msg += " ...";
    throw IngestError(msg);
  }

  std::size_t drop = 0;
  for (const auto& c : ds.col_labels) {
    auto it = schema.transforms.find(c);
    ds.col_transforms.push_back(it == schema.transforms.end() ? schema.default_transform : it->second);
    drop = std::max(drop, transform_order(ds.col_transforms.back()));
  }
  if (nt <= drop + 1) throw InsufficientData(source + ": too few time points after differencing");
  ds.dropped = drop;
  ds.times.assign(ds.raw_times.begin() + static_cast<std::ptrdiff_t>(drop), ds.raw_times.end());
  const std::size_t n = nt - drop;

  std::vector<std::vector<double>> cols(nr * nc);
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t r = 0; r < nr; ++r) {
      const std::size_t e = r + nr * c;
      std::vector<double> x(nt);
      for (std::size_t t = 0; t < nt; ++t) x[t] = ds.raw[t][e];
      const Transform tr = ds.col_transforms[c];
      const std::string where = source + ": (" + ds.row_labels[r] + ", " + ds.col_labels[c] + "): ";
      if (tr == Transform::DLn || tr == Transform::D2Ln)
        for (std::size_t t = 0; t < nt; ++t)
          if (!(x[t] > 0))
            throw DomainError(where + "nonpositive value " + fmt_double(x[t]) + " at " + ds.raw_times[t] +
                              " under " + transform_name(tr));
      auto y = apply_transform(x, tr, where);
      y.erase(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(drop - transform_order(tr)));
      cols[e] = std::move(y);
    }

  ds.standardized = schema.standardize;
  ds.stats.assign(nr * nc, SeriesStats{});
  if (schema.standardize) {
    for (std::size_t e = 0; e < cols.size(); ++e) {
      auto& y = cols[e];
      double m = 0.0;
      for (double v : y) m += v;
      m /= static_cast<double>(n);
      double ss = 0.0;
      for (double v : y) ss += (v - m) * (v - m);
      const double sd = std::sqrt(ss / static_cast<double>(n - 1));
      if (!(sd > 1e-12 * std::abs(m)))  // also catches rounding-level spread
        throw DomainError(source + ": (" + ds.row_labels[e % nr] + ", " + ds.col_labels[e / nr] +
                          ") is constant after transformation");
      for (double& v : y) v = (v - m) / sd;
      ds.stats[e] = {m, sd};
    }
  }

  ds.values = TensorSeries(Shape{nr, nc});
  for (std::size_t t = 0; t < n; ++t) {
    DenseTensor x(Shape{nr, nc});
    for (std::size_t e = 0; e < cols.size(); ++e) x[e] = cols[e][t];
    ds.values.push_back(std::move(x));
  }
  return ds;
}

void write_panel_csv(std::ostream& os, const PanelDataset& ds) {
  const std::size_t nr = ds.row_labels.size(), nc = ds.col_labels.size();
  os << "time,row,col,value\n";
  for (std::size_t t = 0; t < ds.values.length(); ++t)
    for (std::size_t r = 0; r < nr; ++r)
      for (std::size_t c = 0; c < nc; ++c)
        os << ds.times[t] << ',' << ds.row_labels[r] << ',' << ds.col_labels[c] << ','
           << fmt_double(ds.values[t][r + nr * c]) << '\n';
}

void write_series_csv(std::ostream& os, const TensorSeries& series, const std::vector<std::string>& times) {
  if (series.shape().size() != 2) throw ShapeError("long-format output needs matrix observations");
  if (times.size() != series.length()) throw ShapeError("one time label per observation required");
  const std::size_t nr = series.shape()[0], nc = series.shape()[1];
  os << "time,row,col,value\n";
  for (std::size_t t = 0; t < series.length(); ++t)
    for (std::size_t r = 0; r < nr; ++r)
      for (std::size_t c = 0; c < nc; ++c)
        os << times[t] << ",r" << r + 1 << ",c" << c + 1 << ',' << fmt_double(series[t][r + nr * c]) << '\n';
}

ThresholdSeries make_threshold_series(const PanelDataset& ds, const ThresholdExpr& expr, std::size_t window) {
  const std::size_t r = ds.row_index(expr.row), c = ds.col_index(expr.col);
  const std::size_t e = r + ds.row_labels.size() * c, nt = ds.raw.length();
  std::vector<double> x(nt);
  for (std::size_t t = 0; t < nt; ++t) x[t] = ds.raw[t][e];
  const auto z = apply_transform(x, expr.transform, "threshold (" + expr.row + ", " + expr.col + "): ");
  const std::size_t ord = transform_order(expr.transform);
  std::vector<double> full(nt, kNaN);
  std::copy(z.begin(), z.end(), full.begin() + static_cast<std::ptrdiff_t>(ord));

  ThresholdSeries out;
  const std::size_t n = ds.times.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t t = i + ds.dropped;
    out.values.push_back(full[t]);
    out.regime_values.push_back(t >= expr.delay ? full[t - expr.delay] : kNaN);
  }
  const std::size_t w = window ? std::min(window, n) : n;
  std::vector<double> fin;
  for (std::size_t i = 0; i < w; ++i)
    if (std::isfinite(out.values[i])) fin.push_back(out.values[i]);
  if (!fin.empty()) {
    double m = 0.0;
    for (double v : fin) m += v;
    m /= static_cast<double>(fin.size());
    double ss = 0.0;
    for (double v : fin) ss += (v - m) * (v - m);
    out.mean = m;
    out.sd = fin.size() > 1 ? std::sqrt(ss / static_cast<double>(fin.size() - 1)) : 0.0;
  }
  return out;
}

std::vector<std::string> quarter_labels(int year, int quarter, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(std::to_string(year) + "Q" + std::to_string(quarter));
    if (++quarter > 4) {
      quarter = 1;
      ++year;
    }
  }
  return out;
}

}  // namespace ttfm
