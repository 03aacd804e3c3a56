#include "epf/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string_view>

#include "epf/error.hpp"

namespace epf::data {

const char* series_name(Series series) {
    switch (series) {
        case Series::price: return "price";
        case Series::exog1: return "exog1";
        case Series::exog2: return "exog2";
    }
    return "?";
}

MarketDataset::MarketDataset(std::string market_id, std::vector<Date> dates, DayMatrix prices,
                             DayMatrix exog1, DayMatrix exog2)
    : market_id_(std::move(market_id)),
      dates_(std::move(dates)),
      prices_(std::move(prices)),
      exog1_(std::move(exog1)),
      exog2_(std::move(exog2)) {
    const auto n = static_cast<Eigen::Index>(dates_.size());
    if (prices_.rows() != n || exog1_.rows() != n || exog2_.rows() != n) {
        throw SchemaError("series lengths do not match the date index");
    }
    for (std::size_t i = 1; i < dates_.size(); ++i) {
        if (days_between(dates_[i - 1], dates_[i]) != 1) {
            throw CadenceError("dates are not consecutive at " + format_date(dates_[i]));
        }
    }
    for (const DayMatrix* m : {&prices_, &exog1_, &exog2_}) {
        if (!m->allFinite()) {
            throw SchemaError("dataset contains non-finite values");
        }
    }
}

std::optional<std::size_t> MarketDataset::index_of(Date date) const {
    if (dates_.empty()) {
        return std::nullopt;
    }
    const long offset = days_between(dates_.front(), date);
    if (offset < 0 || static_cast<std::size_t>(offset) >= dates_.size()) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(offset);
}

const DayMatrix& MarketDataset::series(Series series) const {
    switch (series) {
        case Series::price: return prices_;
        case Series::exog1: return exog1_;
        case Series::exog2: return exog2_;
    }
    return prices_;
}

DayValues MarketDataset::day(Series s, std::size_t day) const {
    if (day >= size()) {
        throw SliceError("day index " + std::to_string(day) + " outside dataset");
    }
    return DayValues(series(s).row(static_cast<Eigen::Index>(day)).data(), kHoursPerDay);
}

MarketDataset MarketDataset::head(std::size_t n_days) const {
    n_days = std::min(n_days, size());
    const auto n = static_cast<Eigen::Index>(n_days);
    return MarketDataset(market_id_, {dates_.begin(), dates_.begin() + n}, prices_.topRows(n),
                         exog1_.topRows(n), exog2_.topRows(n));
}

HistoryView::HistoryView(const MarketDataset& dataset)
    : HistoryView(dataset, dataset.size(), dataset.size()) {}

HistoryView::HistoryView(const MarketDataset& dataset, std::size_t price_end,
                         std::size_t exog_end, AccessObserver* observer)
    : dataset_(&dataset),
      price_end_(std::min(price_end, dataset.size())),
      exog_end_(std::min(exog_end, dataset.size())),
      observer_(observer) {}

DayValues HistoryView::day(Series series, std::size_t day) const {
    const std::size_t limit = series == Series::price ? price_end_ : exog_end_;
    if (day >= limit) {
        throw LookaheadError(std::string(series_name(series)) + " of day " +
                             std::to_string(day) + " is not available (limit " +
                             std::to_string(limit) + ")");
    }
    if (observer_ != nullptr) {
        observer_->on_read(series, day);
    }
    return dataset_->day(series, day);
}

HistoryView forecasting_view(const MarketDataset& dataset, std::size_t target_day,
                             AccessObserver* observer) {
    return HistoryView(dataset, target_day, target_day + 1, observer);
}

// --- calendar normalization -------------------------------------------------

std::vector<double> normalize_calendar(std::span<const double> raw_day) {
    std::vector<int> hours;
    switch (raw_day.size()) {
        case 24:
            for (int h = 0; h < 24; ++h) hours.push_back(h);
            break;
        case 25:
            for (int h = 0; h < 24; ++h) {
                hours.push_back(h);
                if (h == kDstHour) hours.push_back(h);
            }
            break;
        case 23:
            for (int h = 0; h < 24; ++h) {
                if (h != kDstHour) hours.push_back(h);
            }
            break;
        default:
            throw CalendarError("a day must hold 23, 24 or 25 hourly values, got " +
                                std::to_string(raw_day.size()));
    }
    return normalize_calendar(raw_day, hours);
}

std::vector<double> normalize_calendar(std::span<const double> raw_day,
                                       std::span<const int> hours) {
    if (raw_day.size() < 23 || raw_day.size() > 25) {
        throw CalendarError("a day must hold 23, 24 or 25 hourly values, got " +
                            std::to_string(raw_day.size()));
    }
    if (hours.size() != raw_day.size()) {
        throw CalendarError("hour labels do not match values");
    }
    std::vector<double> out(kHoursPerDay, 0.0);
    std::vector<int> count(kHoursPerDay, 0);
    for (std::size_t i = 0; i < raw_day.size(); ++i) {
        const int h = hours[i];
        if (h < 0 || h >= 24) {
            throw CalendarError("hour label " + std::to_string(h) + " out of range");
        }
        if (i > 0 && h < hours[i - 1]) {
            throw CalendarError("hour labels are not ordered");
        }
        out[static_cast<std::size_t>(h)] += raw_day[i];
        ++count[static_cast<std::size_t>(h)];
    }
    int repeated = 0;
    int missing = 0;
    for (std::size_t h = 0; h < kHoursPerDay; ++h) {
        if (count[h] > 2) {
            throw CalendarError("hour " + std::to_string(h) + " appears more than twice");
        }
        repeated += count[h] == 2;
        missing += count[h] == 0;
    }
    const bool consistent = (raw_day.size() == 24 && repeated == 0 && missing == 0) ||
                            (raw_day.size() == 25 && repeated == 1 && missing == 0) ||
                            (raw_day.size() == 23 && repeated == 0 && missing == 1);
    if (!consistent) {
        throw CalendarError("hour labels are inconsistent with a " +
                            std::to_string(raw_day.size()) + "-hour day");
    }
    for (std::size_t h = 0; h < kHoursPerDay; ++h) {
        if (count[h] == 2) {
            out[h] /= 2.0;
        }
    }
    for (std::size_t h = 0; h < kHoursPerDay; ++h) {
        if (count[h] != 0) {
            continue;
        }
        if (h == 0) {
            out[h] = out[1];
        } else if (h == kHoursPerDay - 1) {
            out[h] = out[h - 1];
        } else {
            out[h] = 0.5 * (out[h - 1] + out[h + 1]);
        }
    }
    return out;
}

// --- CSV --------------------------------------------------------------------

namespace {

struct Timestamp {
    Date date;
    int hour = 0;
    int minute = 0;
};

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' ||
                          s.back() == '"')) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(trim(line.substr(start, comma - start)));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return fields;
}

bool parse_two_digits(std::string_view s, std::size_t pos, int& out) {
    if (pos + 2 > s.size() || !std::isdigit(static_cast<unsigned char>(s[pos])) ||
        !std::isdigit(static_cast<unsigned char>(s[pos + 1]))) {
        return false;
    }
    out = (s[pos] - '0') * 10 + (s[pos + 1] - '0');
    return true;
}

Timestamp parse_timestamp(std::string_view text, std::size_t line) {
    if (text.size() < 13) {
        throw ParseError(line, "malformed timestamp '" + std::string(text) + "'");
    }
    Timestamp ts;
    std::size_t time_pos = 0;
    try {
        ts.date = parse_date(text.substr(0, 10));
        time_pos = 11;
    } catch (const ConfigError&) {
        throw ParseError(line, "malformed timestamp '" + std::string(text) + "'");
    }
    if (text[10] != ' ' && text[10] != 'T') {
        throw ParseError(line, "malformed timestamp '" + std::string(text) + "'");
    }
    if (!parse_two_digits(text, time_pos, ts.hour) || ts.hour > 23) {
        throw ParseError(line, "malformed timestamp '" + std::string(text) + "'");
    }
    if (text.size() > time_pos + 2) {
        if (text[time_pos + 2] != ':' || !parse_two_digits(text, time_pos + 3, ts.minute) ||
            ts.minute > 59) {
            throw ParseError(line, "malformed timestamp '" + std::string(text) + "'");
        }
    }
    return ts;
}

double parse_value(std::string_view text, std::size_t line, const char* column) {
    if (text.empty()) {
        throw ParseError(line, std::string("missing value in column ") + column);
    }
    std::string buf(text);
    char* end = nullptr;
    const double value = std::strtod(buf.c_str(), &end);
    if (end != buf.c_str() + buf.size()) {
        throw ParseError(line, std::string("invalid number '") + buf + "' in column " + column);
    }
    if (!std::isfinite(value)) {
        throw ParseError(line, std::string("missing value in column ") + column);
    }
    return value;
}

struct RawDay {
    Date date;
    std::vector<int> hours;
    std::vector<double> values[3];
    std::size_t first_line = 0;
};

}  // namespace

MarketDataset parse_dataset_csv(const std::filesystem::path& path, std::string market_id) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open dataset file " + path.string());
    }
    if (market_id.empty()) {
        market_id = path.stem().string();
    }
    return parse_dataset_csv(in, std::move(market_id));
}

MarketDataset parse_dataset_csv(std::istream& in, std::string market_id) {
    static constexpr const char* kColumns[] = {"price", "exog1", "exog2"};
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) {
        throw SchemaError("dataset file is empty");
    }
    ++line_no;
    if (split_fields(line).size() < 4) {
        throw SchemaError("header must name timestamp, price, exog1 and exog2 columns");
    }

    std::vector<RawDay> days;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const auto fields = split_fields(line);
        if (fields.size() != 4) {
            throw ParseError(line_no, "expected 4 columns, found " +
                                          std::to_string(fields.size()));
        }
        const Timestamp ts = parse_timestamp(fields[0], line_no);
        if (ts.minute != 0) {
            throw CadenceError("line " + std::to_string(line_no) +
                               ": timestamps must fall on the hour");
        }
        if (days.empty() || days.back().date != ts.date) {
            if (!days.empty() && days_between(days.back().date, ts.date) != 1) {
                throw CadenceError("line " + std::to_string(line_no) + ": expected day " +
                                   format_date(add_days(days.back().date, 1)) + ", got " +
                                   format_date(ts.date));
            }
            days.push_back(RawDay{ts.date, {}, {}, line_no});
        }
        RawDay& day = days.back();
        if (!day.hours.empty()) {
            const int prev = day.hours.back();
            const bool next_hour = ts.hour == prev + 1;
            const bool repeat = ts.hour == prev;
            const bool skip = ts.hour == prev + 2;
            if (!next_hour && !repeat && !skip) {
                throw CadenceError("line " + std::to_string(line_no) +
                                   ": non-hourly step from hour " + std::to_string(prev) +
                                   " to " + std::to_string(ts.hour));
            }
        }
        day.hours.push_back(ts.hour);
        for (int k = 0; k < 3; ++k) {
            day.values[k].push_back(parse_value(fields[static_cast<std::size_t>(k) + 1], line_no,
                                                kColumns[k]));
        }
    }
    if (days.empty()) {
        throw SchemaError("dataset file has no data rows");
    }

    const auto n = static_cast<Eigen::Index>(days.size());
    DayMatrix matrices[3] = {DayMatrix(n, 24), DayMatrix(n, 24), DayMatrix(n, 24)};
    std::vector<Date> dates;
    dates.reserve(days.size());
    for (Eigen::Index d = 0; d < n; ++d) {
        const RawDay& day = days[static_cast<std::size_t>(d)];
        dates.push_back(day.date);
        for (int k = 0; k < 3; ++k) {
            std::vector<double> normalized;
            try {
                normalized = normalize_calendar(day.values[k], day.hours);
            } catch (const CalendarError& e) {
                throw CadenceError("day " + format_date(day.date) + " starting at line " +
                                   std::to_string(day.first_line) + ": " + e.what());
            }
            for (int h = 0; h < 24; ++h) {
                matrices[k](d, h) = normalized[static_cast<std::size_t>(h)];
            }
        }
    }
    return MarketDataset(std::move(market_id), std::move(dates), std::move(matrices[0]),
                         std::move(matrices[1]), std::move(matrices[2]));
}

// --- splits -----------------------------------------------------------------

void write_dataset_csv(std::ostream& out, const MarketDataset& dataset) {
    out << "timestamp,price,exog1,exog2\n";
    char buf[32];
    auto put = [&](double v) {
        const auto res = std::to_chars(buf, buf + sizeof buf, v);
        out.write(buf, res.ptr - buf);
    };
    for (std::size_t d = 0; d < dataset.size(); ++d) {
        const std::string date = format_date(dataset.date(d));
        for (std::size_t h = 0; h < kHoursPerDay; ++h) {
            out << date << ' ' << (h < 10 ? "0" : "") << h << ":00,";
            put(dataset.day(Series::price, d)[h]);
            out << ',';
            put(dataset.day(Series::exog1, d)[h]);
            out << ',';
            put(dataset.day(Series::exog2, d)[h]);
            out << '\n';
        }
    }
}

std::pair<HistoryView, TestPeriod> test_split(const MarketDataset& dataset, Date test_start,
                                              std::size_t min_history) {
    const auto index = dataset.index_of(test_start);
    if (!index) {
        throw SplitError("test start " + format_date(test_start) + " is not in the dataset");
    }
    if (*index == 0 || *index < min_history) {
        throw SplitError("test start " + format_date(test_start) + " leaves only " +
                         std::to_string(*index) + " days of history, need " +
                         std::to_string(std::max<std::size_t>(min_history, 1)));
    }
    TestPeriod period;
    period.start = test_start;
    period.end = dataset.dates().back();
    period.first_index = *index;
    period.n_days = dataset.size() - *index;
    return {HistoryView(dataset, *index, *index), period};
}

CalibrationSlice calibration_window_slice(const MarketDataset& dataset, std::size_t target_day,
                                          std::size_t window_days, AccessObserver* observer) {
    if (window_days <= kMaxLag) {
        throw SliceError("calibration window must exceed " + std::to_string(kMaxLag) + " days");
    }
    if (target_day > dataset.size()) {
        throw SliceError("target day outside dataset");
    }
    if (target_day < window_days) {
        throw SliceError("window of " + std::to_string(window_days) + " days needs " +
                         std::to_string(window_days) + " prior days, only " +
                         std::to_string(target_day) + " available");
    }
    CalibrationSlice slice{forecasting_view(dataset, target_day, observer), target_day - window_days,
                           window_days, target_day};
    return slice;
}

CalibrationSlice calibration_window_slice(const MarketDataset& dataset, Date target,
                                          std::size_t window_days) {
    std::size_t target_day = 0;
    if (const auto index = dataset.index_of(target)) {
        target_day = *index;
    } else if (!dataset.dates().empty() &&
               target == add_days(dataset.dates().back(), 1)) {
        target_day = dataset.size();
    } else {
        throw SliceError("target " + format_date(target) + " is not in the dataset");
    }
    return calibration_window_slice(dataset, target_day, window_days);
}

// --- synthetic data ---------------------------------------------------------

MarketDataset make_synthetic_dataset(const SyntheticMarket& spec) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const auto n = static_cast<Eigen::Index>(spec.n_days);
    DayMatrix prices(n, 24), load(n, 24), wind(n, 24);
    std::vector<Date> dates;
    dates.reserve(spec.n_days);

    constexpr double kLagDay = 0.45;
    constexpr double kLagWeek = 0.25;
    constexpr double kLoadCoef = 0.8;
    constexpr double kWindCoef = -1.2;
    const double load_mean = 30.0;
    const double wind_mean = 6.0;
    const double intercept = spec.base_price * (1.0 - kLagDay - kLagWeek) -
                             kLoadCoef * load_mean - kWindCoef * wind_mean;

    double wind_level = 0.0;
    std::array<double, 24> shock{};
    for (Eigen::Index d = 0; d < n; ++d) {
        const Date date = add_days(spec.start, static_cast<long>(d));
        dates.push_back(date);
        const int weekday = iso_weekday(date);
        const double weekend = weekday >= 6 ? -4.0 : 0.0;
        wind_level = 0.7 * wind_level + 0.7 * gauss(rng);
        for (int h = 0; h < 24; ++h) {
            const double daily = std::sin(2.0 * std::numbers::pi * (h - 6) / 24.0);
            load(d, h) = load_mean + 8.0 * daily + weekend + 1.5 * gauss(rng);
            wind(d, h) = std::max(0.0, wind_mean + 3.0 * wind_level + 0.8 * gauss(rng));
        }
        for (int h = 0; h < 24; ++h) {
            shock[static_cast<std::size_t>(h)] =
                0.3 * shock[static_cast<std::size_t>(h)] + spec.noise * gauss(rng);
            const double p1 = d >= 1 ? prices(d - 1, h) : spec.base_price;
            const double p7 = d >= 7 ? prices(d - 7, h) : spec.base_price;
            double p = intercept + kLagDay * p1 + kLagWeek * p7 + kLoadCoef * load(d, h) +
                       kWindCoef * wind(d, h) + shock[static_cast<std::size_t>(h)];
            if (spec.spike_probability > 0.0 && unit(rng) < spec.spike_probability) {
                p += 5.0 * spec.base_price * unit(rng);
            }
            prices(d, h) = p;
        }
    }
    return MarketDataset(spec.market_id, std::move(dates), std::move(prices), std::move(load),
                         std::move(wind));
}

}  // namespace epf::data
