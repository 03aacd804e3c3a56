#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "epf/backtest.hpp"
#include "epf/dnn.hpp"
#include "epf/forecast.hpp"
#include "epf/lear.hpp"

namespace epf::ensemble {

inline constexpr std::size_t kLearWindows[] = {56, 84, 1092, 1456};

/// Elementwise mean of forecasts sharing the same dates.
ForecastMatrix combine_mean(const std::vector<ForecastMatrix>& forecasts);

struct EnsembleResult {
    ForecastMatrix combined;
    std::vector<std::string> member_names;
    std::vector<ForecastMatrix> members;
};

/// Hooks for one member backtest, given its position.
using MemberHooks = std::function<BacktestHooks(std::size_t member)>;

/// One LEAR backtest per window, run on up to `jobs` threads, then averaged.
EnsembleResult run_lear_ensemble(const data::MarketDataset& dataset, const data::TestPeriod& period,
                                 const std::vector<std::size_t>& windows = {std::begin(kLearWindows),
                                                                            std::end(kLearWindows)},
                                 const lear::LearConfig& config = {}, unsigned jobs = 1,
                                 const MemberHooks& hooks = {});

struct DnnMember {
    std::string name;
    dnn::DnnHyperparams hp;
    std::uint64_t seed = 0;
};

EnsembleResult run_dnn_ensemble(const data::MarketDataset& dataset, const data::TestPeriod& period,
                                const std::vector<DnnMember>& members,
                                const dnn::WindowSpec& window = {},
                                const dnn::TrainOptions& options = {}, unsigned jobs = 1,
                                const MemberHooks& hooks = {});

struct ConvexityCheck {
    double ensemble_mae = 0.0;
    double mean_member_mae = 0.0;
    bool holds = false;  // ensemble_mae <= mean_member_mae
};

ConvexityCheck check_convexity(const ForecastMatrix& actuals, const EnsembleResult& result);

}  // namespace epf::ensemble
