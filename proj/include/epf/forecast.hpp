#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "epf/dataset.hpp"

namespace epf {

/// Day-by-hour price matrix with its date index (forecasts or actuals).
struct ForecastMatrix {
    std::vector<Date> dates;
    data::DayMatrix values;

    std::size_t days() const noexcept { return dates.size(); }
    std::optional<std::size_t> index_of(Date date) const;

    static ForecastMatrix with_dates(std::vector<Date> dates);
    void set_row(std::size_t day, std::span<const double, data::kHoursPerDay> prices);
};

/// Actual prices of `dataset` between two dates, inclusive.
ForecastMatrix actuals(const data::MarketDataset& dataset, Date first, Date last);
ForecastMatrix actuals(const data::MarketDataset& dataset);

/// Forecast CSV: header `date,h1,...,h24`, ISO dates, '.' decimal point.
void write_forecast_csv(std::ostream& out, const ForecastMatrix& forecast);
void write_forecast_csv(const std::filesystem::path& path, const ForecastMatrix& forecast);
ForecastMatrix read_forecast_csv(std::istream& in);
ForecastMatrix read_forecast_csv(const std::filesystem::path& path);

/// One CSV data row, formatted with round-trip precision.
std::string format_forecast_row(Date date, std::span<const double, data::kHoursPerDay> values);
std::string forecast_csv_header();

}  // namespace epf
