#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ttfm/pipeline.hpp"

namespace ttfm {

inline constexpr int kModelFormatVersion = 1;

/// JSON model document; see README for the field list.
void write_model(std::ostream& os, const TTFMModel& model);
TTFMModel read_model(std::istream& is);
void save_model(const std::string& path, const TTFMModel& model);
TTFMModel load_model(const std::string& path);

/// Exact field-by-field equality (doubles compared bitwise by value).
bool identical(const TTFMModel& a, const TTFMModel& b);

/// t,time,factor_1..factor_r with 1-based t.
void write_factors_csv(std::ostream& os, const FactorPanel& panel, const std::vector<std::string>& times);

/// t,factor_1..factor_r,sq_err_obs,sq_err_signal with t the 1-based origin.
void write_forecast_csv(std::ostream& os, const std::vector<ForecastRecord>& records);
/// t,i1..iK,forecast,error, one row per tensor entry, 1-based indices.
void write_forecast_entries_csv(std::ostream& os, const std::vector<ForecastRecord>& records);
/// Rebuild records from the two files written above.
std::vector<ForecastRecord> read_forecast_records(std::istream& summary, std::istream& entries);

void write_evaluation_json(std::ostream& os, const ForecastSummary& s);

}  // namespace ttfm
