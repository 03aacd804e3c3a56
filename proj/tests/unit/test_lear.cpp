#include <doctest.h>

#include <cmath>
#include <set>

#include "epf/error.hpp"
#include "epf/lear.hpp"
#include "support.hpp"

using namespace epf;
using data::Series;

namespace {

struct ReadLog : data::AccessObserver {
    std::size_t target = 0;
    std::size_t price_reads_at_or_after_target = 0;
    std::size_t exog_reads_after_target = 0;
    std::size_t reads = 0;
    void on_read(Series s, std::size_t day) override {
        ++reads;
        if (s == Series::price && day >= target) ++price_reads_at_or_after_target;
        if (s != Series::price && day > target) ++exog_reads_after_target;
    }
};

data::MarketDataset small_market(std::size_t days, unsigned seed = 5) {
    data::SyntheticMarket spec;
    spec.n_days = days;
    spec.seed = seed;
    return data::make_synthetic_dataset(spec);
}

}  // namespace

TEST_CASE("fit_day produces 24 hourly models") {
    const auto ds = small_market(200);
    const auto slice = data::calibration_window_slice(ds, 150, 56);
    const auto model = lear::fit_day(slice);
    CHECK(model.hours.size() == 24);
    CHECK(model.window_days == 56);
    for (const auto& h : model.hours) {
        CHECK(h.theta.size() == 247);
        CHECK(h.lambda >= 0.0);
        CHECK(h.n_active == (h.theta.array() != 0.0).count());
        // 49 rows cannot support more than 48 free coefficients.
        CHECK(h.n_active <= 48);
        CHECK(std::isfinite(h.intercept));
    }
    const auto f = lear::forecast_day(model, data::forecasting_view(ds, 150), 150);
    for (double v : f) CHECK(std::isfinite(v));
}

TEST_CASE("constant prices are forecast exactly") {
    const auto ds = test::constant_dataset(120, 37.25);
    const auto model = lear::fit_day(data::calibration_window_slice(ds, 100, 56));
    for (const auto& h : model.hours) CHECK(h.n_active == 0);
    const auto f = lear::forecast_day(model, data::forecasting_view(ds, 100), 100);
    for (double v : f) CHECK(v == doctest::Approx(37.25).epsilon(1e-12));
}

TEST_CASE("a null model forecasts the price median") {
    const auto ds = small_market(120);
    lear::LearModel model;
    model.price = {41.5, 6.0};
    model.exog1 = {1.0, 1.0};
    model.exog2 = {1.0, 1.0};
    const auto f = lear::forecast_day(model, data::forecasting_view(ds, 100), 100);
    for (double v : f) CHECK(v == 41.5);
}

TEST_CASE("forecast of a two-coefficient model matches a direct computation") {
    const auto ds = test::make_dataset(30, [](Series s, std::size_t d, std::size_t h) {
        return (s == Series::price ? 30.0 : 500.0) + 3.0 * static_cast<double>(d) + static_cast<double>(h);
    });
    const std::size_t target = 20;
    lear::LearModel model;
    model.price = {35.0, 4.0};
    model.exog1 = {520.0, 25.0};
    model.exog2 = {510.0, 30.0};
    for (std::size_t h = 0; h < 24; ++h) {
        auto& hm = model.hours[h];
        hm.intercept = 0.1;
        hm.theta(static_cast<Eigen::Index>(h)) = 0.6;        // price of the day before, same hour
        hm.theta(static_cast<Eigen::Index>(96 + h)) = -0.02;  // exog1 forecast for the target hour
    }
    const auto f = lear::forecast_day(model, data::forecasting_view(ds, target), target);
    for (std::size_t h = 0; h < 24; ++h) {
        const double p1 = ds.prices()(static_cast<Eigen::Index>(target - 1), static_cast<Eigen::Index>(h));
        const double x1 = ds.exog1()(static_cast<Eigen::Index>(target), static_cast<Eigen::Index>(h));
        const double y = 0.1 + 0.6 * std::asinh((p1 - 35.0) / 4.0) - 0.02 * (x1 - 520.0) / 25.0;
        CHECK(f[h] == doctest::Approx(35.0 + 4.0 * std::sinh(y)).epsilon(1e-13));
    }

    // With the switch on, exogenous inputs go through asinh as well.
    model.asinh_exogenous = true;
    const auto g = lear::forecast_day(model, data::forecasting_view(ds, target), target);
    const double x1 = ds.exog1()(static_cast<Eigen::Index>(target), 0);
    const double p1 = ds.prices()(static_cast<Eigen::Index>(target - 1), 0);
    const double y = 0.1 + 0.6 * std::asinh((p1 - 35.0) / 4.0) - 0.02 * std::asinh((x1 - 520.0) / 25.0);
    CHECK(g[0] == doctest::Approx(35.0 + 4.0 * std::sinh(y)).epsilon(1e-13));
}

TEST_CASE("transform_row leaves the weekday dummies alone") {
    lear::LearModel model;
    model.price = {10.0, 2.0};
    model.exog1 = {100.0, 10.0};
    model.exog2 = {50.0, 5.0};
    features::LearRow row = features::LearRow::Constant(12.0);
    row.tail(7) << 0, 0, 1, 0, 0, 0, 0;
    const auto t = lear::transform_row(row, model);
    CHECK(t(0) == doctest::Approx(std::asinh(1.0)));
    CHECK(t(96) == doctest::Approx(-8.8));
    CHECK(t(120) == doctest::Approx(-7.6));
    CHECK(t.tail(7) == row.tail(7));
}

TEST_CASE("fitting on a slice never reads the target day's prices") {
    const auto ds = small_market(200);
    for (std::size_t target : {60u, 130u, 199u}) {
        ReadLog log;
        log.target = target;
        const auto slice = data::calibration_window_slice(ds, target, 56, &log);
        const auto model = lear::fit_day(slice);
        lear::forecast_day(model, data::forecasting_view(ds, target, &log), target);
        CHECK(log.reads > 0);
        CHECK(log.price_reads_at_or_after_target == 0);
        CHECK(log.exog_reads_after_target == 0);
    }
}

TEST_CASE("backtest_lear") {
    const auto ds = small_market(140);
    const auto period = data::test_split(ds, ds.date(120), 84).second;
    REQUIRE(period.n_days == 20);

    const auto full = lear::backtest_lear(ds, period, 56);
    CHECK(full.days() == 20);
    CHECK(full.dates.front() == ds.date(120));
    CHECK(full.values.allFinite());

    SUBCASE("later data does not change earlier forecasts") {
        const auto cut = ds.head(130);
        auto short_period = period;
        short_period.n_days = 10;
        const auto partial = lear::backtest_lear(cut, short_period, 56);
        CHECK(partial.values == full.values.topRows(10));
    }
    SUBCASE("hour-parallel fits are identical") {
        lear::LearConfig config;
        config.jobs = 4;
        CHECK(lear::backtest_lear(ds, period, 56, config).values == full.values);
    }
    SUBCASE("skipped days are not refitted and do not alter the rest") {
        BacktestHooks hooks;
        std::set<Date> done = {ds.date(121), ds.date(125)};
        hooks.already_done = [&](Date d) { return done.count(d) > 0; };
        const auto rest = lear::backtest_lear(ds, period, 56, {}, hooks);
        CHECK(rest.days() == 18);
        for (std::size_t i = 0; i < rest.days(); ++i) {
            const auto k = *full.index_of(rest.dates[i]);
            CHECK(rest.values.row(static_cast<Eigen::Index>(i)) == full.values.row(static_cast<Eigen::Index>(k)));
        }
    }
    SUBCASE("completed days are reported before a failure") {
        BacktestHooks hooks;
        int reported = 0;
        hooks.on_day = [&](Date, std::span<const double, 24>, double seconds) {
            ++reported;
            CHECK(seconds >= 0.0);
        };
        hooks.on_target = [&](std::size_t target) {
            if (target == 123) throw NumericError("injected");
        };
        CHECK_THROWS_AS(lear::backtest_lear(ds, period, 56, {}, hooks), NumericError);
        CHECK(reported == 3);
    }
    SUBCASE("starting coordinate descent from zero reaches the same fit") {
        lear::LearConfig cold;
        cold.warm_start = false;
        cold.cd_tol = 1e-10;
        cold.cd_max_sweeps = 200000;
        const auto other = lear::backtest_lear(ds, period, 56, cold);
        CHECK((other.values - full.values).cwiseAbs().maxCoeff() < 1e-3);
    }
    SUBCASE("no day reads prices at or after its target") {
        struct Tracker : data::AccessObserver {
            std::size_t current = 0;
            int violations = 0;
            void on_read(Series s, std::size_t day) override {
                if (s == Series::price && day >= current) ++violations;
                if (s != Series::price && day > current) ++violations;
            }
        } tracker;
        BacktestHooks hooks;
        hooks.observer = &tracker;
        hooks.on_target = [&](std::size_t t) { tracker.current = t; };
        lear::backtest_lear(ds, period, 84, {}, hooks);
        CHECK(tracker.violations == 0);
    }
}

TEST_CASE("short windows and too little history") {
    const auto ds = small_market(100);
    CHECK_THROWS_AS(lear::fit_day(data::calibration_window_slice(ds, 50, 56)), SliceError);
    const auto period = data::test_split(ds, ds.date(90), 56).second;
    CHECK_THROWS_AS(lear::backtest_lear(ds, period, 91), SliceError);
}
