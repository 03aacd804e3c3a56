#pragma once

#include <array>
#include <cstddef>

#include <Eigen/Core>

#include "epf/backtest.hpp"
#include "epf/dataset.hpp"
#include "epf/features.hpp"
#include "epf/forecast.hpp"
#include "epf/lasso.hpp"
#include "epf/transform.hpp"

namespace epf::lear {

struct LearConfig {
    /// Exogenous regressors are median/MAD scaled; set to also apply asinh.
    bool asinh_exogenous = false;
    /// Plain AIC saturates once the path nears n active variables, which
    /// short windows reach; the corrected form keeps those models sparse.
    InformationCriterion criterion = InformationCriterion::aicc;
    double cd_tol = 1e-4;
    int cd_max_sweeps = 1000;
    /// Start coordinate descent from the LARS solution at the chosen lambda.
    bool warm_start = true;
    unsigned jobs = 1;
};

struct HourModel {
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(features::kLearRowLength);
    double intercept = 0.0;  // transformed-price units
    double lambda = 0.0;
    int n_active = 0;
    bool converged = true;
};

struct LearModel {
    std::array<HourModel, data::kHoursPerDay> hours;
    transform::AsinhParams price;
    transform::AsinhParams exog1;
    transform::AsinhParams exog2;
    bool asinh_exogenous = false;
    std::size_t window_days = 0;
};

/// Maps a raw 247-entry row into the space the regressions are fitted in.
features::LearRow transform_row(const features::LearRow& row, const LearModel& model);

/// Transforms the slice, picks lambda per hour from the LARS path by AIC
/// and refits each hour by coordinate descent at that lambda.
LearModel fit_day(const data::CalibrationSlice& slice, const LearConfig& config = {});

std::array<double, data::kHoursPerDay> forecast_day(const LearModel& model,
                                                    const data::HistoryView& view,
                                                    std::size_t target_day);

/// Daily recalibration over the test period: fit on the window ending the
/// day before each target, then forecast the target.
ForecastMatrix backtest_lear(const data::MarketDataset& dataset, const data::TestPeriod& period,
                             std::size_t window_days, const LearConfig& config = {},
                             const BacktestHooks& hooks = {});

}  // namespace epf::lear
