#include "epf/ensemble.hpp"

#include "epf/error.hpp"
#include "epf/metrics.hpp"
#include "epf/parallel.hpp"

namespace epf::ensemble {

ForecastMatrix combine_mean(const std::vector<ForecastMatrix>& forecasts) {
    if (forecasts.empty()) {
        throw CombineError("nothing to combine");
    }
    const auto& first = forecasts.front();
    ForecastMatrix out = first;
    for (std::size_t k = 1; k < forecasts.size(); ++k) {
        if (forecasts[k].dates != first.dates) {
            throw CombineError("member " + std::to_string(k) + " covers different dates");
        }
        out.values += forecasts[k].values;
    }
    out.values /= static_cast<double>(forecasts.size());
    return out;
}

EnsembleResult run_lear_ensemble(const data::MarketDataset& dataset, const data::TestPeriod& period,
                                 const std::vector<std::size_t>& windows,
                                 const lear::LearConfig& config, unsigned jobs,
                                 const MemberHooks& hooks) {
    EnsembleResult r;
    r.members.resize(windows.size());
    for (std::size_t w : windows) r.member_names.push_back("LEAR_" + std::to_string(w));
    parallel_for(windows.size(), jobs, [&](std::size_t k) {
        r.members[k] = lear::backtest_lear(dataset, period, windows[k], config,
                                           hooks ? hooks(k) : BacktestHooks{});
    });
    r.combined = combine_mean(r.members);
    return r;
}

EnsembleResult run_dnn_ensemble(const data::MarketDataset& dataset, const data::TestPeriod& period,
                                const std::vector<DnnMember>& members,
                                const dnn::WindowSpec& window, const dnn::TrainOptions& options,
                                unsigned jobs, const MemberHooks& hooks) {
    EnsembleResult r;
    r.members.resize(members.size());
    for (const auto& m : members) r.member_names.push_back(m.name);
    parallel_for(members.size(), jobs, [&](std::size_t k) {
        r.members[k] = dnn::backtest_dnn(dataset, period, members[k].hp, members[k].seed, window,
                                         options, hooks ? hooks(k) : BacktestHooks{});
    });
    r.combined = combine_mean(r.members);
    return r;
}

ConvexityCheck check_convexity(const ForecastMatrix& actuals, const EnsembleResult& result) {
    ConvexityCheck c;
    const auto truth = metrics::select_dates(actuals, result.combined.dates);
    c.ensemble_mae = metrics::score(metrics::Metric::mae, truth, result.combined);
    for (const auto& m : result.members) {
        c.mean_member_mae += metrics::score(metrics::Metric::mae, truth, m);
    }
    c.mean_member_mae /= static_cast<double>(result.members.size());
    // Averaging rounds, so identical members may differ by an ulp or two.
    c.holds = c.ensemble_mae <= c.mean_member_mae * (1.0 + 1e-12);
    return c;
}

}  // namespace epf::ensemble
