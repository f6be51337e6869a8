#pragma once

#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ttfm/tensor.hpp"

namespace ttfm {

enum class Transform { None, Diff, DLn, D2Ln, GP };

Transform parse_transform(const std::string& s);
std::string transform_name(Transform t);
/// Leading observations consumed by the transform.
std::size_t transform_order(Transform t);
/// Output has length n - transform_order(t). `where` prefixes domain errors.
std::vector<double> apply_transform(std::span<const double> x, Transform t, const std::string& where = "");

struct SeriesStats {
  double mean = 0.0;
  double sd = 1.0;
};

/**
 * Matrix-valued panel (rows x cols over time) read from long format. `values`
 * holds the transformed, optionally standardized series; `raw` the grid as read.
 * stats[e] belongs to flat entry e = row + rows * col.
 */
struct PanelDataset {
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<std::string> raw_times;
  std::vector<std::string> times;  // raw_times minus the dropped leading rows
  std::size_t dropped = 0;
  std::vector<Transform> col_transforms;
  bool standardized = false;
  std::vector<SeriesStats> stats;
  TensorSeries raw;
  TensorSeries values;

  std::size_t row_index(const std::string& label) const;
  std::size_t col_index(const std::string& label) const;
};

struct IngestSchema {
  std::map<std::string, Transform> transforms;  // by column label
  Transform default_transform = Transform::None;
  bool standardize = true;
};

PanelDataset ingest(const std::string& path, const IngestSchema& schema);
PanelDataset ingest_stream(std::istream& in, const IngestSchema& schema,
                           const std::string& source = "<stream>");

/// Long-format dump of `values` using the dataset's time labels.
void write_panel_csv(std::ostream& os, const PanelDataset& ds);
/// Long-format dump of an arbitrary series with generated labels.
void write_series_csv(std::ostream& os, const TensorSeries& series,
                      const std::vector<std::string>& times);

struct ThresholdExpr {
  std::string row;
  std::string col;
  Transform transform = Transform::DLn;
  std::size_t delay = 1;
};

struct ThresholdSeries {
  std::vector<double> values;         // aligned with ds.times; not delayed
  std::vector<double> regime_values;  // value driving the regime at t: z_{t-d}
  double mean = 0.0;                  // over the summary window of `values`
  double sd = 0.0;
};

/// Build z from the raw panel entry (row, col). Summary stats cover the first `window` times (0: all).
ThresholdSeries make_threshold_series(const PanelDataset& ds, const ThresholdExpr& expr,
                                      std::size_t window = 0);

/// Quarterly labels YYYYQn counting from (year, quarter).
std::vector<std::string> quarter_labels(int year, int quarter, std::size_t n);

}  // namespace ttfm
