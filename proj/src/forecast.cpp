#include "epf/forecast.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include "epf/error.hpp"

namespace epf {

std::optional<std::size_t> ForecastMatrix::index_of(Date date) const {
    if (dates.empty()) {
        return std::nullopt;
    }
    // Dates are usually consecutive; fall back to a search when they are not.
    const long offset = days_between(dates.front(), date);
    if (offset >= 0 && static_cast<std::size_t>(offset) < dates.size() &&
        dates[static_cast<std::size_t>(offset)] == date) {
        return static_cast<std::size_t>(offset);
    }
    const auto it = std::lower_bound(dates.begin(), dates.end(), date);
    if (it != dates.end() && *it == date) {
        return static_cast<std::size_t>(it - dates.begin());
    }
    return std::nullopt;
}

ForecastMatrix ForecastMatrix::with_dates(std::vector<Date> dates) {
    ForecastMatrix m;
    m.values = data::DayMatrix::Zero(static_cast<Eigen::Index>(dates.size()), 24);
    m.dates = std::move(dates);
    return m;
}

void ForecastMatrix::set_row(std::size_t day, std::span<const double, data::kHoursPerDay> prices) {
    for (std::size_t h = 0; h < data::kHoursPerDay; ++h) {
        values(static_cast<Eigen::Index>(day), static_cast<Eigen::Index>(h)) = prices[h];
    }
}

ForecastMatrix actuals(const data::MarketDataset& dataset, Date first, Date last) {
    const auto i0 = dataset.index_of(first);
    const auto i1 = dataset.index_of(last);
    if (!i0 || !i1 || *i1 < *i0) {
        throw DataError("requested actuals " + format_date(first) + ".." + format_date(last) +
                        " are outside the dataset");
    }
    const auto n = static_cast<Eigen::Index>(*i1 - *i0 + 1);
    ForecastMatrix m;
    m.dates.assign(dataset.dates().begin() + static_cast<std::ptrdiff_t>(*i0),
                   dataset.dates().begin() + static_cast<std::ptrdiff_t>(*i1 + 1));
    m.values = dataset.prices().middleRows(static_cast<Eigen::Index>(*i0), n);
    return m;
}

ForecastMatrix actuals(const data::MarketDataset& dataset) {
    return actuals(dataset, dataset.dates().front(), dataset.dates().back());
}

std::string forecast_csv_header() {
    std::string header = "date";
    for (int h = 1; h <= 24; ++h) {
        header += ",h" + std::to_string(h);
    }
    return header;
}

std::string format_forecast_row(Date date, std::span<const double, data::kHoursPerDay> values) {
    std::string row = format_date(date);
    char buf[32];
    for (double v : values) {
        const auto res = std::to_chars(buf, buf + sizeof buf, v);
        row.push_back(',');
        row.append(buf, res.ptr);
    }
    return row;
}

void write_forecast_csv(std::ostream& out, const ForecastMatrix& forecast) {
    out << forecast_csv_header() << '\n';
    for (std::size_t d = 0; d < forecast.days(); ++d) {
        const auto* row = forecast.values.row(static_cast<Eigen::Index>(d)).data();
        out << format_forecast_row(forecast.dates[d],
                                   std::span<const double, data::kHoursPerDay>(row, 24))
            << '\n';
    }
}

void write_forecast_csv(const std::filesystem::path& path, const ForecastMatrix& forecast) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    write_forecast_csv(out, forecast);
}

ForecastMatrix read_forecast_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line) || line.rfind("date", 0) != 0) {
        throw SchemaError("forecast file must start with a date,h1,...,h24 header");
    }
    std::vector<Date> dates;
    std::vector<std::array<double, 24>> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::array<double, 24> row{};
        std::size_t pos = line.find(',');
        if (pos == std::string::npos) {
            throw ParseError(line_no, "expected 25 columns");
        }
        try {
            dates.push_back(parse_date(std::string_view(line).substr(0, pos)));
        } catch (const ConfigError&) {
            throw ParseError(line_no, "invalid date '" + line.substr(0, pos) + "'");
        }
        for (int h = 0; h < 24; ++h) {
            const std::size_t start = pos + 1;
            pos = line.find(',', start);
            const std::size_t end = pos == std::string::npos ? line.size() : pos;
            if (start > line.size() || (pos == std::string::npos && h < 23)) {
                throw ParseError(line_no, "expected 25 columns");
            }
            const char* first = line.data() + start;
            const char* last = line.data() + end;
            const auto res = std::from_chars(first, last, row[static_cast<std::size_t>(h)]);
            if (res.ec != std::errc{} || res.ptr != last) {
                throw ParseError(line_no, "invalid value in column h" + std::to_string(h + 1));
            }
        }
        if (pos != std::string::npos) {
            throw ParseError(line_no, "expected 25 columns");
        }
        if (dates.size() > 1 && dates[dates.size() - 2] >= dates.back()) {
            throw ParseError(line_no, "dates must be strictly increasing");
        }
        rows.push_back(row);
    }
    ForecastMatrix m = ForecastMatrix::with_dates(std::move(dates));
    for (std::size_t d = 0; d < rows.size(); ++d) {
        m.set_row(d, rows[d]);
    }
    return m;
}

ForecastMatrix read_forecast_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open forecast file " + path.string());
    }
    return read_forecast_csv(in);
}

}  // namespace epf
