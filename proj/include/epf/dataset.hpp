#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "epf/date.hpp"

namespace epf::data {

inline constexpr std::size_t kHoursPerDay = 24;
inline constexpr std::size_t kMaxLag = 7;

using DayMatrix = Eigen::Matrix<double, Eigen::Dynamic, 24, Eigen::RowMajor>;
using DayValues = std::span<const double, kHoursPerDay>;

enum class Series { price, exog1, exog2 };

const char* series_name(Series series);

/// Hourly panel for one market: prices plus two exogenous day-ahead
/// forecasts, one row per calendar day. Immutable after construction.
class MarketDataset {
public:
    MarketDataset(std::string market_id, std::vector<Date> dates, DayMatrix prices,
                  DayMatrix exog1, DayMatrix exog2);

    const std::string& market_id() const noexcept { return market_id_; }
    std::size_t size() const noexcept { return dates_.size(); }
    const std::vector<Date>& dates() const noexcept { return dates_; }
    Date date(std::size_t day) const { return dates_.at(day); }
    std::optional<std::size_t> index_of(Date date) const;

    const DayMatrix& prices() const noexcept { return prices_; }
    const DayMatrix& exog1() const noexcept { return exog1_; }
    const DayMatrix& exog2() const noexcept { return exog2_; }
    const DayMatrix& series(Series series) const;
    DayValues day(Series series, std::size_t day) const;

    /// Copy of the first `n_days` days.
    MarketDataset head(std::size_t n_days) const;

private:
    std::string market_id_;
    std::vector<Date> dates_;
    DayMatrix prices_;
    DayMatrix exog1_;
    DayMatrix exog2_;
};

class AccessObserver {
public:
    virtual ~AccessObserver() = default;
    virtual void on_read(Series series, std::size_t day) = 0;
};

/// Read-only window onto a dataset. Prices are readable for days before
/// `price_end`, exogenous forecasts for days before `exog_end`. Any read
/// past a limit throws LookaheadError.
class HistoryView {
public:
    explicit HistoryView(const MarketDataset& dataset);
    HistoryView(const MarketDataset& dataset, std::size_t price_end, std::size_t exog_end,
                AccessObserver* observer = nullptr);

    const MarketDataset& dataset() const noexcept { return *dataset_; }
    std::size_t price_end() const noexcept { return price_end_; }
    std::size_t exog_end() const noexcept { return exog_end_; }
    AccessObserver* observer() const noexcept { return observer_; }

    DayValues day(Series series, std::size_t day) const;
    Date date(std::size_t day) const { return dataset_->date(day); }

private:
    const MarketDataset* dataset_;
    std::size_t price_end_;
    std::size_t exog_end_;
    AccessObserver* observer_;
};

/// What is known when forecasting `target_day`: prices up to the day
/// before, exogenous forecasts up to and including the target day.
HistoryView forecasting_view(const MarketDataset& dataset, std::size_t target_day,
                             AccessObserver* observer = nullptr);

struct TestPeriod {
    Date start;
    Date end;
    std::size_t n_days = 0;
    std::size_t first_index = 0;
};

struct CalibrationSlice {
    HistoryView view;
    std::size_t first_day = 0;
    std::size_t window_days = 0;
    std::size_t target_day = 0;

    std::size_t last_day() const noexcept { return target_day - 1; }
    std::size_t usable_rows() const noexcept { return window_days - kMaxLag; }
    Date first_date() const { return view.date(first_day); }
    Date last_date() const { return view.date(last_day()); }
};

/// Reads `timestamp,price,exog1,exog2` (header row first; columns are taken by
/// position so the header names may differ). Timestamps are ISO-8601 local
/// time at hourly cadence; DST days of 23 or 25 hours are normalized.
MarketDataset parse_dataset_csv(const std::filesystem::path& path,
                                std::string market_id = {});
MarketDataset parse_dataset_csv(std::istream& in, std::string market_id);

/// Writes the dataset in the layout parse_dataset_csv reads, 24 rows per day.
void write_dataset_csv(std::ostream& out, const MarketDataset& dataset);

/// Hour slot (0-based) that daylight-saving transitions add or remove.
inline constexpr int kDstHour = 2;

/// Length-only form: assumes the transition happens at kDstHour.
std::vector<double> normalize_calendar(std::span<const double> raw_day);

/// `hours` holds the local clock hour of each raw value. A 25-value day
/// must repeat exactly one hour; a 23-value day must skip exactly one.
std::vector<double> normalize_calendar(std::span<const double> raw_day,
                                       std::span<const int> hours);

inline constexpr std::size_t kBenchmarkHistoryDays = 1456;

/// History covers everything before `test_start`; the test period runs to
/// the end of the dataset.
std::pair<HistoryView, TestPeriod> test_split(const MarketDataset& dataset, Date test_start,
                                              std::size_t min_history = kBenchmarkHistoryDays);

/// The `window_days` days immediately preceding `target_day`.
CalibrationSlice calibration_window_slice(const MarketDataset& dataset, std::size_t target_day,
                                          std::size_t window_days,
                                          AccessObserver* observer = nullptr);
CalibrationSlice calibration_window_slice(const MarketDataset& dataset, Date target,
                                          std::size_t window_days);

struct SyntheticMarket {
    std::string market_id = "SYN";
    Date start = Date{std::chrono::year{2013} / 1 / 7};
    std::size_t n_days = 2184;
    unsigned seed = 1;
    double base_price = 40.0;
    double noise = 2.0;
    double spike_probability = 0.0;
};

/// Deterministic price panel with daily and weekly profiles, an
/// autoregressive component and linear exogenous drivers.
MarketDataset make_synthetic_dataset(const SyntheticMarket& spec);

}  // namespace epf::data
