#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "epf/dataset.hpp"

namespace epf::features {

inline constexpr std::size_t kBlockCount = 10;
inline constexpr std::size_t kWeekdays = 7;
inline constexpr std::size_t kLearRowLength = kBlockCount * data::kHoursPerDay + kWeekdays;
inline constexpr std::size_t kDnnRowLength = kBlockCount * data::kHoursPerDay + 1;
inline constexpr std::size_t kWeekdayOffset = kBlockCount * data::kHoursPerDay;

struct BlockSpec {
    data::Series series;
    int lag;  // days before the target day
    const char* name;
};

// Fixed row layout: block k occupies entries [24k, 24k + 24).
inline constexpr std::array<BlockSpec, kBlockCount> kBlocks = {{
    {data::Series::price, 1, "price_d1"},
    {data::Series::price, 2, "price_d2"},
    {data::Series::price, 3, "price_d3"},
    {data::Series::price, 7, "price_d7"},
    {data::Series::exog1, 0, "exog1_d"},
    {data::Series::exog2, 0, "exog2_d"},
    {data::Series::exog1, 1, "exog1_d1"},
    {data::Series::exog2, 1, "exog2_d1"},
    {data::Series::exog1, 7, "exog1_d7"},
    {data::Series::exog2, 7, "exog2_d7"},
}};

struct WeekdayEncoding {
    std::array<double, kWeekdays> dummies{};
    int index = 1;  // Monday = 1
};

WeekdayEncoding weekday_encoding(Date date);

using LearRow = Eigen::Matrix<double, static_cast<int>(kLearRowLength), 1>;

/// Regressors for `target_day`: four lagged price days, the exogenous
/// forecasts of the target day and of lags 1 and 7, and weekday dummies.
LearRow build_lear_row(const data::HistoryView& view, std::size_t target_day);

struct LearDesign {
    Eigen::MatrixXd X;  // rows = window days 8..w, 247 columns
    Eigen::MatrixXd Y;  // 24 prices per row
    std::vector<std::size_t> days;
};

LearDesign build_lear_design(const data::CalibrationSlice& slice);

/// Day-block selection for the DNN input: one flag per 24-value block in
/// kBlocks order, then the weekday flag.
struct FeatureMask {
    std::array<bool, kBlockCount + 1> flags{};

    static FeatureMask all();
    bool use_block(std::size_t block) const { return flags[block]; }
    bool use_weekday() const { return flags[kBlockCount]; }
    bool any() const;
    std::size_t row_length() const;
    int max_lag() const;
    std::string to_string() const;  // eleven '0'/'1' characters
    static FeatureMask from_string(const std::string& bits);

    friend bool operator==(const FeatureMask&, const FeatureMask&) = default;
};

struct DnnRow {
    Eigen::VectorXd values;
    FeatureMask mask;
};

DnnRow build_dnn_row(const data::HistoryView& view, std::size_t target_day,
                     const FeatureMask& mask);

/// Input rows for several days stacked as a matrix.
Eigen::MatrixXd build_dnn_inputs(const data::HistoryView& view,
                                 const std::vector<std::size_t>& days, const FeatureMask& mask);

}  // namespace epf::features
