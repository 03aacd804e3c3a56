#include "epf/metrics.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "epf/error.hpp"

namespace epf::metrics {

namespace {

using data::kHoursPerDay;

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void check_aligned(const ForecastMatrix& actuals, const ForecastMatrix& forecast) {
    if (actuals.dates != forecast.dates || actuals.values.rows() != forecast.values.rows()) {
        throw ShapeError("forecast and actuals cover different dates (" +
                         std::to_string(forecast.days()) + " vs " +
                         std::to_string(actuals.days()) + " days)");
    }
    if (actuals.days() == 0) {
        throw ShapeError("cannot score an empty forecast");
    }
}

long naive_lag(NaiveKind kind, Date date) {
    switch (kind) {
        case NaiveKind::lag1:
            return 1;
        case NaiveKind::lag7:
            return 7;
        case NaiveKind::calendar: {
            const int wd = iso_weekday(date);
            return (wd >= 2 && wd <= 5) ? 1 : 7;
        }
    }
    return 7;
}

double mean_abs(const data::DayMatrix& e) { return e.cwiseAbs().mean(); }
double root_mean_square(const data::DayMatrix& e) { return std::sqrt(e.array().square().mean()); }

}  // namespace

NaiveKind parse_naive_kind(std::string_view text) {
    if (text == "lag1") return NaiveKind::lag1;
    if (text == "lag7") return NaiveKind::lag7;
    if (text == "calendar") return NaiveKind::calendar;
    throw ConfigError("unknown naive kind '" + std::string(text) + "' (lag1, lag7, calendar)");
}

std::string to_string(NaiveKind kind) {
    switch (kind) {
        case NaiveKind::lag1:
            return "lag1";
        case NaiveKind::lag7:
            return "lag7";
        case NaiveKind::calendar:
            return "calendar";
    }
    return "lag7";
}

Metric parse_metric(std::string_view text) {
    for (Metric m : kAllMetrics) {
        if (to_string(m) == text) {
            return m;
        }
    }
    throw ConfigError("unknown metric '" + std::string(text) + "'");
}

std::string to_string(Metric metric) {
    switch (metric) {
        case Metric::mae:
            return "MAE";
        case Metric::rmse:
            return "RMSE";
        case Metric::mape:
            return "MAPE";
        case Metric::smape:
            return "sMAPE";
        case Metric::rmae:
            return "rMAE";
        case Metric::rrmse:
            return "rRMSE";
        case Metric::mase:
            return "MASE";
    }
    return "MAE";
}

ForecastMatrix naive_forecast(const ForecastMatrix& actuals, NaiveKind kind,
                              const std::vector<Date>& dates) {
    auto out = ForecastMatrix::with_dates(dates);
    for (std::size_t i = 0; i < dates.size(); ++i) {
        const Date source = add_days(dates[i], -naive_lag(kind, dates[i]));
        const auto row = actuals.index_of(source);
        if (!row) {
            throw MetricError("naive forecast for " + format_date(dates[i]) + " needs prices of " +
                              format_date(source));
        }
        out.values.row(static_cast<Eigen::Index>(i)) =
            actuals.values.row(static_cast<Eigen::Index>(*row));
    }
    return out;
}

ForecastMatrix naive_forecast(const ForecastMatrix& actuals, NaiveKind kind) {
    if (actuals.days() <= 7) {
        throw MetricError("naive forecasts need more than 7 days of prices");
    }
    return naive_forecast(actuals, kind,
                          std::vector<Date>(actuals.dates.begin() + 7, actuals.dates.end()));
}

ForecastMatrix select_dates(const ForecastMatrix& matrix, const std::vector<Date>& dates) {
    auto out = ForecastMatrix::with_dates(dates);
    for (std::size_t i = 0; i < dates.size(); ++i) {
        const auto row = matrix.index_of(dates[i]);
        if (!row) {
            throw ShapeError("no prices for " + format_date(dates[i]));
        }
        out.values.row(static_cast<Eigen::Index>(i)) =
            matrix.values.row(static_cast<Eigen::Index>(*row));
    }
    return out;
}

data::DayMatrix forecast_errors(const ForecastMatrix& actuals, const ForecastMatrix& forecast) {
    check_aligned(actuals, forecast);
    return forecast.values - actuals.values;
}

std::vector<double> flatten(const ForecastMatrix& actuals) {
    return std::vector<double>(actuals.values.data(),
                               actuals.values.data() + actuals.values.size());
}

Score score_detailed(Metric metric, const ForecastMatrix& actuals, const ForecastMatrix& forecast,
                     const MetricContext& context) {
    const data::DayMatrix err = forecast_errors(actuals, forecast);
    Score s;
    switch (metric) {
        case Metric::mae:
            s.value = mean_abs(err);
            break;
        case Metric::rmse:
            s.value = root_mean_square(err);
            break;
        case Metric::mape: {
            double sum = 0.0;
            std::size_t used = 0;
            for (Eigen::Index i = 0; i < err.size(); ++i) {
                const double p = actuals.values.data()[i];
                if (p == 0.0) {
                    if (context.mape_zero_sentinel) {
                        sum += *context.mape_zero_sentinel;
                        ++used;
                    } else {
                        ++s.excluded_cells;
                    }
                    continue;
                }
                sum += std::abs(err.data()[i]) / std::abs(p);
                ++used;
            }
            if (used == 0) {
                throw MetricError("MAPE undefined: every actual price is zero");
            }
            s.value = sum / static_cast<double>(used);
            break;
        }
        case Metric::smape: {
            double sum = 0.0;
            for (Eigen::Index i = 0; i < err.size(); ++i) {
                const double denom =
                    std::abs(actuals.values.data()[i]) + std::abs(forecast.values.data()[i]);
                if (denom > 0.0) {
                    sum += 2.0 * std::abs(err.data()[i]) / denom;
                }
            }
            s.value = sum / static_cast<double>(err.size());
            break;
        }
        case Metric::rmae:
        case Metric::rrmse: {
            if (context.history == nullptr) {
                throw MetricError(to_string(metric) + " needs prices from before the first forecast date");
            }
            const auto naive = naive_forecast(*context.history, context.naive, forecast.dates);
            const data::DayMatrix naive_err = naive.values - actuals.values;
            const bool relative_mae = metric == Metric::rmae;
            const double num = relative_mae ? mean_abs(err) : root_mean_square(err);
            const double den = relative_mae ? mean_abs(naive_err) : root_mean_square(naive_err);
            if (den == 0.0) {
                throw MetricError(to_string(metric) + " undefined: the naive forecast is exact");
            }
            s.value = num / den;
            break;
        }
        case Metric::mase: {
            const auto& in = context.in_sample;
            const std::size_t lag = context.mase_lag;
            if (lag == 0 || in.size() <= lag) {
                throw MetricError("MASE needs an in-sample series longer than its lag");
            }
            double den = 0.0;
            for (std::size_t i = lag; i < in.size(); ++i) {
                den += std::abs(in[i] - in[i - lag]);
            }
            den /= static_cast<double>(in.size() - lag);
            if (den == 0.0) {
                throw MetricError("MASE undefined: in-sample naive error is zero");
            }
            s.value = mean_abs(err) / den;
            break;
        }
    }
    return s;
}

double score(Metric metric, const ForecastMatrix& actuals, const ForecastMatrix& forecast,
             const MetricContext& context) {
    return score_detailed(metric, actuals, forecast, context).value;
}

std::vector<ReportRow> evaluate(const std::string& model, const ForecastMatrix& actuals,
                                const ForecastMatrix& forecast, const MetricContext& context) {
    std::vector<ReportRow> rows;
    double mae = 0.0;
    double rmse = 0.0;
    for (Metric m : kAllMetrics) {
        if ((m == Metric::rmae || m == Metric::rrmse) && context.history == nullptr) {
            continue;
        }
        if (m == Metric::mase && context.in_sample.empty()) {
            continue;
        }
        const Score s = score_detailed(m, actuals, forecast, context);
        rows.push_back({model, to_string(m), s.value});
        if (m == Metric::mae) mae = s.value;
        if (m == Metric::rmse) rmse = s.value;
        if (m == Metric::mape && s.excluded_cells > 0) {
            rows.push_back({model, "mape_excluded", static_cast<double>(s.excluded_cells)});
        }
    }
    if (mae > rmse * (1.0 + 1e-12)) {
        throw NumericError("MAE " + format_double(mae) + " exceeds RMSE " + format_double(rmse));
    }
    return rows;
}

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
    out << "model,metric,value\n";
    for (const auto& r : rows) {
        out << r.model << ',' << r.metric << ',' << format_double(r.value) << '\n';
    }
}

void write_report_json(std::ostream& out, const std::vector<ReportRow>& rows) {
    auto doc = nlohmann::json::array();
    for (const auto& r : rows) {
        doc.push_back({{"model", r.model}, {"metric", r.metric}, {"value", r.value}});
    }
    out << doc.dump(2) << '\n';
}

std::vector<ReportRow> read_report_csv(std::istream& in) {
    std::vector<ReportRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line_no == 1 || line.empty()) {
            continue;
        }
        const auto c1 = line.find(',');
        const auto c2 = line.rfind(',');
        if (c1 == std::string::npos || c1 == c2) {
            throw ParseError(line_no, "expected model,metric,value");
        }
        ReportRow r{line.substr(0, c1), line.substr(c1 + 1, c2 - c1 - 1), 0.0};
        const char* first = line.data() + c2 + 1;
        const char* last = line.data() + line.size();
        const auto res = std::from_chars(first, last, r.value);
        if (res.ec != std::errc() || res.ptr != last) {
            throw ParseError(line_no, "bad metric value");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace epf::metrics
