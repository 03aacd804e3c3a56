#pragma once

#include <functional>
#include <span>

#include "epf/dataset.hpp"

namespace epf {

/// Optional callbacks threaded through a daily-recalibration backtest.
struct BacktestHooks {
    /// Dates already forecast (resumed runs) are skipped.
    std::function<bool(Date)> already_done;
    /// Called after each forecast day with its recalibration wall time.
    std::function<void(Date, std::span<const double, data::kHoursPerDay>, double seconds)> on_day;
    /// Called before each day; receives the target day index.
    std::function<void(std::size_t)> on_target;
    /// Every data read made while fitting and forecasting is reported here.
    data::AccessObserver* observer = nullptr;
};

}  // namespace epf
