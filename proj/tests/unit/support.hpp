#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "epf/dataset.hpp"
#include "epf/forecast.hpp"

namespace epf::test {

inline Date ymd(int y, unsigned m, unsigned d) {
    return Date{std::chrono::year{y} / std::chrono::month{m} / std::chrono::day{d}};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "epf") {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                (tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

using CellFn = std::function<double(data::Series, std::size_t day, std::size_t hour)>;

/// Dataset whose cells are given by `cell`, starting on a Monday.
inline data::MarketDataset make_dataset(std::size_t n_days, const CellFn& cell,
                                        Date start = ymd(2015, 1, 5)) {
    std::vector<Date> dates;
    data::DayMatrix m[3] = {data::DayMatrix(static_cast<Eigen::Index>(n_days), 24),
                            data::DayMatrix(static_cast<Eigen::Index>(n_days), 24),
                            data::DayMatrix(static_cast<Eigen::Index>(n_days), 24)};
    const data::Series series[3] = {data::Series::price, data::Series::exog1, data::Series::exog2};
    for (std::size_t d = 0; d < n_days; ++d) {
        dates.push_back(add_days(start, static_cast<long>(d)));
        for (int k = 0; k < 3; ++k) {
            for (std::size_t h = 0; h < 24; ++h) {
                m[k](static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h)) = cell(series[k], d, h);
            }
        }
    }
    return data::MarketDataset("TST", std::move(dates), m[0], m[1], m[2]);
}

inline data::MarketDataset constant_dataset(std::size_t n_days, double value) {
    return make_dataset(n_days, [value](data::Series, std::size_t, std::size_t) { return value; });
}

/// Cell code that identifies series, day and hour uniquely.
inline double cell_code(data::Series s, std::size_t d, std::size_t h) {
    return static_cast<double>(static_cast<int>(s) + 1) * 1e6 + static_cast<double>(d) * 100.0 +
           static_cast<double>(h);
}

inline data::MarketDataset coded_dataset(std::size_t n_days) {
    return make_dataset(n_days, cell_code);
}

inline ForecastMatrix matrix_of(const std::vector<Date>& dates,
                                const std::function<double(std::size_t, std::size_t)>& cell) {
    auto m = ForecastMatrix::with_dates(dates);
    for (std::size_t d = 0; d < dates.size(); ++d) {
        for (std::size_t h = 0; h < 24; ++h) {
            m.values(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h)) = cell(d, h);
        }
    }
    return m;
}

inline std::vector<Date> consecutive_dates(Date start, std::size_t n) {
    std::vector<Date> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(add_days(start, static_cast<long>(i)));
    return out;
}

}  // namespace epf::test
