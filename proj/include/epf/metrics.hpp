#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "epf/forecast.hpp"

namespace epf::metrics {

enum class NaiveKind { lag1, lag7, calendar };
enum class Metric { mae, rmse, mape, smape, rmae, rrmse, mase };

NaiveKind parse_naive_kind(std::string_view text);
std::string to_string(NaiveKind kind);
Metric parse_metric(std::string_view text);
std::string to_string(Metric metric);
inline constexpr Metric kAllMetrics[] = {Metric::mae,  Metric::rmse,  Metric::mape, Metric::smape,
                                         Metric::rmae, Metric::rrmse, Metric::mase};

struct MetricContext {
    /// Naive benchmark used by rMAE and rRMSE.
    NaiveKind naive = NaiveKind::lag7;
    /// Observed prices reaching at least 7 days before the first forecast
    /// date; the naive forecast for rMAE/rRMSE is built from it.
    const ForecastMatrix* history = nullptr;
    /// Hourly in-sample prices in time order, required by MASE.
    std::vector<double> in_sample;
    /// 1 gives the one-step naive scaling; 168 gives the weekly seasonal one.
    std::size_t mase_lag = 1;
    /// MAPE cells with a zero actual are skipped unless a sentinel is given.
    std::optional<double> mape_zero_sentinel;
};

struct Score {
    double value = 0.0;
    /// MAPE cells skipped because the actual price was zero.
    std::size_t excluded_cells = 0;
};

/// Naive forecast for every date of `actuals` from its 8th day onwards.
ForecastMatrix naive_forecast(const ForecastMatrix& actuals, NaiveKind kind);
/// Naive forecast for the given dates; `actuals` must hold the 7 days before each.
ForecastMatrix naive_forecast(const ForecastMatrix& actuals, NaiveKind kind,
                              const std::vector<Date>& dates);

/// Rows of `matrix` for `dates`, in that order.
ForecastMatrix select_dates(const ForecastMatrix& matrix, const std::vector<Date>& dates);

/// forecast - actual per cell; both must share the same dates.
data::DayMatrix forecast_errors(const ForecastMatrix& actuals, const ForecastMatrix& forecast);

Score score_detailed(Metric metric, const ForecastMatrix& actuals, const ForecastMatrix& forecast,
                     const MetricContext& context = {});
double score(Metric metric, const ForecastMatrix& actuals, const ForecastMatrix& forecast,
             const MetricContext& context = {});

/// Hourly prices of `actuals` flattened day by day, for MASE.
std::vector<double> flatten(const ForecastMatrix& actuals);

struct ReportRow {
    std::string model;
    std::string metric;
    double value = 0.0;
};

/// Every metric the context supports (MASE only with an in-sample series),
/// plus `mape_excluded` when MAPE skipped cells. Throws NumericError when
/// MAE exceeds RMSE.
std::vector<ReportRow> evaluate(const std::string& model, const ForecastMatrix& actuals,
                                const ForecastMatrix& forecast, const MetricContext& context);

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows);
void write_report_json(std::ostream& out, const std::vector<ReportRow>& rows);
std::vector<ReportRow> read_report_csv(std::istream& in);

}  // namespace epf::metrics
