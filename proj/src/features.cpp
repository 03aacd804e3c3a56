#include "epf/features.hpp"

#include <algorithm>

#include "epf/error.hpp"

namespace epf::features {
namespace {

void require_lag(std::size_t target_day, int lag) {
    if (target_day < static_cast<std::size_t>(lag)) {
        throw FeatureError("day " + std::to_string(target_day) + " lacks the " +
                           std::to_string(lag) + "-day lag");
    }
}

}  // namespace

WeekdayEncoding weekday_encoding(Date date) {
    WeekdayEncoding enc;
    enc.index = iso_weekday(date);
    enc.dummies[static_cast<std::size_t>(enc.index - 1)] = 1.0;
    return enc;
}

LearRow build_lear_row(const data::HistoryView& view, std::size_t target_day) {
    require_lag(target_day, static_cast<int>(data::kMaxLag));
    LearRow row;
    for (std::size_t b = 0; b < kBlockCount; ++b) {
        const auto values = view.day(kBlocks[b].series, target_day - kBlocks[b].lag);
        for (std::size_t h = 0; h < data::kHoursPerDay; ++h) {
            row(static_cast<Eigen::Index>(b * data::kHoursPerDay + h)) = values[h];
        }
    }
    const auto enc = weekday_encoding(view.date(target_day));
    for (std::size_t k = 0; k < kWeekdays; ++k) {
        row(static_cast<Eigen::Index>(kWeekdayOffset + k)) = enc.dummies[k];
    }
    return row;
}

LearDesign build_lear_design(const data::CalibrationSlice& slice) {
    const std::size_t rows = slice.usable_rows();
    LearDesign design;
    design.X.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(kLearRowLength));
    design.Y.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(data::kHoursPerDay));
    design.days.reserve(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t day = slice.first_day + data::kMaxLag + r;
        const auto i = static_cast<Eigen::Index>(r);
        design.X.row(i) = build_lear_row(slice.view, day).transpose();
        const auto prices = slice.view.day(data::Series::price, day);
        for (std::size_t h = 0; h < data::kHoursPerDay; ++h) {
            design.Y(i, static_cast<Eigen::Index>(h)) = prices[h];
        }
        design.days.push_back(day);
    }
    return design;
}

FeatureMask FeatureMask::all() {
    FeatureMask mask;
    mask.flags.fill(true);
    return mask;
}

bool FeatureMask::any() const {
    for (bool f : flags) {
        if (f) return true;
    }
    return false;
}

std::size_t FeatureMask::row_length() const {
    std::size_t n = 0;
    for (std::size_t b = 0; b < kBlockCount; ++b) {
        n += use_block(b) ? data::kHoursPerDay : 0;
    }
    return n + (use_weekday() ? 1 : 0);
}

int FeatureMask::max_lag() const {
    int lag = 0;
    for (std::size_t b = 0; b < kBlockCount; ++b) {
        if (use_block(b)) lag = std::max(lag, kBlocks[b].lag);
    }
    return lag;
}

std::string FeatureMask::to_string() const {
    std::string bits;
    for (bool f : flags) bits.push_back(f ? '1' : '0');
    return bits;
}

FeatureMask FeatureMask::from_string(const std::string& bits) {
    if (bits.size() != kBlockCount + 1) {
        throw ConfigError("feature mask must have 11 flags, got '" + bits + "'");
    }
    FeatureMask mask;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != '0' && bits[i] != '1') {
            throw ConfigError("feature mask must contain only 0 and 1, got '" + bits + "'");
        }
        mask.flags[i] = bits[i] == '1';
    }
    return mask;
}

DnnRow build_dnn_row(const data::HistoryView& view, std::size_t target_day,
                     const FeatureMask& mask) {
    if (!mask.any()) {
        throw FeatureError("feature mask selects no inputs");
    }
    require_lag(target_day, mask.max_lag());
    DnnRow row{Eigen::VectorXd(static_cast<Eigen::Index>(mask.row_length())), mask};
    Eigen::Index k = 0;
    for (std::size_t b = 0; b < kBlockCount; ++b) {
        if (!mask.use_block(b)) continue;
        const auto values = view.day(kBlocks[b].series, target_day - kBlocks[b].lag);
        for (double v : values) row.values(k++) = v;
    }
    if (mask.use_weekday()) {
        row.values(k++) = weekday_encoding(view.date(target_day)).index;
    }
    return row;
}

Eigen::MatrixXd build_dnn_inputs(const data::HistoryView& view,
                                 const std::vector<std::size_t>& days, const FeatureMask& mask) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(days.size()),
                      static_cast<Eigen::Index>(mask.row_length()));
    for (std::size_t i = 0; i < days.size(); ++i) {
        X.row(static_cast<Eigen::Index>(i)) = build_dnn_row(view, days[i], mask).values.transpose();
    }
    return X;
}

}  // namespace epf::features
