#include "epf/lear.hpp"

#include <chrono>
#include <vector>

#include "epf/error.hpp"
#include "epf/parallel.hpp"

namespace epf::lear {
namespace {

using data::Series;

std::vector<double> pooled(const data::CalibrationSlice& slice, Series series) {
    std::vector<double> values;
    values.reserve(slice.window_days * data::kHoursPerDay);
    for (std::size_t d = slice.first_day; d < slice.target_day; ++d) {
        const auto day = slice.view.day(series, d);
        values.insert(values.end(), day.begin(), day.end());
    }
    return values;
}

double transform_value(double x, Series series, const LearModel& model) {
    switch (series) {
        case Series::price:
            return transform::apply_asinh(x, model.price);
        case Series::exog1:
            return model.asinh_exogenous ? transform::apply_asinh(x, model.exog1)
                                         : transform::apply_median_mad(x, model.exog1);
        case Series::exog2:
            return model.asinh_exogenous ? transform::apply_asinh(x, model.exog2)
                                         : transform::apply_median_mad(x, model.exog2);
    }
    return x;
}

}  // namespace

features::LearRow transform_row(const features::LearRow& row, const LearModel& model) {
    features::LearRow out = row;
    for (std::size_t b = 0; b < features::kBlockCount; ++b) {
        for (std::size_t h = 0; h < data::kHoursPerDay; ++h) {
            const auto i = static_cast<Eigen::Index>(b * data::kHoursPerDay + h);
            out(i) = transform_value(row(i), features::kBlocks[b].series, model);
        }
    }
    return out;
}

LearModel fit_day(const data::CalibrationSlice& slice, const LearConfig& config) {
    LearModel model;
    model.window_days = slice.window_days;
    model.asinh_exogenous = config.asinh_exogenous;
    model.price = transform::fit_asinh(pooled(slice, Series::price));
    model.exog1 = transform::fit_asinh(pooled(slice, Series::exog1));
    model.exog2 = transform::fit_asinh(pooled(slice, Series::exog2));

    const features::LearDesign design = features::build_lear_design(slice);
    const Eigen::Index n = design.X.rows();
    Eigen::MatrixXd X(n, design.X.cols());
    Eigen::MatrixXd Y(n, design.Y.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        X.row(i) = transform_row(design.X.row(i).transpose(), model).transpose();
        for (Eigen::Index h = 0; h < Y.cols(); ++h) {
            Y(i, h) = transform::apply_asinh(design.Y(i, h), model.price);
        }
    }

    LassoOptions options;
    options.tol = config.cd_tol;
    options.max_sweeps = config.cd_max_sweeps;
    const Standardization standardization = Standardization::fit(X, options);
    const Eigen::MatrixXd Z = standardization.transform(X);
    const Eigen::RowVectorXd y_center = Y.colwise().mean();
    const Eigen::MatrixXd Yc = Y.rowwise() - y_center;
    const Eigen::MatrixXd G = Z.transpose() * Z;
    const Eigen::MatrixXd C = Z.transpose() * Yc;
    const std::size_t max_active = static_cast<std::size_t>(n) - 1;

    parallel_for(data::kHoursPerDay, config.jobs, [&](std::size_t h) {
        const auto hi = static_cast<Eigen::Index>(h);
        const Eigen::VectorXd c = C.col(hi);
        const double yty = Yc.col(hi).squaredNorm();
        const LarsPath path = lars_path_gram(G, c, yty, max_active);
        const auto& chosen = path.points[select_aic_index(path, static_cast<std::size_t>(n), config.criterion)];
        const double lambda = chosen.lambda;
        const GramCdResult cd = lasso_cd_gram(G, c, yty, lambda, config.cd_tol,
                                              config.cd_max_sweeps,
                                              config.warm_start ? &chosen.theta : nullptr);
        HourModel& hour = model.hours[h];
        hour.theta = standardization.unscale(cd.theta, X.cols());
        Standardization centered = standardization;
        centered.y_center = y_center(hi);
        hour.intercept = centered.intercept(hour.theta);
        hour.lambda = lambda;
        hour.n_active = static_cast<int>((hour.theta.array() != 0.0).count());
        hour.converged = cd.converged;
    });
    return model;
}

std::array<double, data::kHoursPerDay> forecast_day(const LearModel& model,
                                                    const data::HistoryView& view,
                                                    std::size_t target_day) {
    const features::LearRow row = transform_row(features::build_lear_row(view, target_day), model);
    std::array<double, data::kHoursPerDay> forecast{};
    for (std::size_t h = 0; h < data::kHoursPerDay; ++h) {
        const double y = model.hours[h].intercept + model.hours[h].theta.dot(row);
        forecast[h] = transform::invert_asinh(y, model.price);
    }
    return forecast;
}

ForecastMatrix backtest_lear(const data::MarketDataset& dataset, const data::TestPeriod& period,
                             std::size_t window_days, const LearConfig& config,
                             const BacktestHooks& hooks) {
    std::vector<Date> dates;
    std::vector<std::array<double, data::kHoursPerDay>> rows;
    for (std::size_t k = 0; k < period.n_days; ++k) {
        const std::size_t target = period.first_index + k;
        const Date date = dataset.date(target);
        if (hooks.already_done && hooks.already_done(date)) continue;
        if (hooks.on_target) hooks.on_target(target);
        const auto start = std::chrono::steady_clock::now();
        const auto slice = data::calibration_window_slice(dataset, target, window_days,
                                                          hooks.observer);
        const LearModel model = fit_day(slice, config);
        const auto forecast = forecast_day(model, slice.view, target);
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (hooks.on_day) hooks.on_day(date, forecast, seconds);
        dates.push_back(date);
        rows.push_back(forecast);
    }
    ForecastMatrix out = ForecastMatrix::with_dates(std::move(dates));
    for (std::size_t d = 0; d < rows.size(); ++d) {
        out.set_row(d, rows[d]);
    }
    return out;
}

}  // namespace epf::lear
