#include "epf/date.hpp"

#include <charconv>
#include <cstdio>

#include "epf/error.hpp"

namespace epf {
namespace {

int to_int(std::string_view text, std::string_view whole) {
    int value = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) {
        throw ConfigError("invalid date '" + std::string(whole) + "'");
    }
    return value;
}

}  // namespace

Date parse_date(std::string_view text) {
    int y = 0, m = 0, d = 0;
    if (text.size() == 10 && text[4] == '-' && text[7] == '-') {
        y = to_int(text.substr(0, 4), text);
        m = to_int(text.substr(5, 2), text);
        d = to_int(text.substr(8, 2), text);
    } else if (text.size() == 10 && text[2] == '.' && text[5] == '.') {
        d = to_int(text.substr(0, 2), text);
        m = to_int(text.substr(3, 2), text);
        y = to_int(text.substr(6, 4), text);
    } else {
        throw ConfigError("invalid date '" + std::string(text) + "'");
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y},
                                          std::chrono::month{static_cast<unsigned>(m)},
                                          std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) {
        throw ConfigError("invalid date '" + std::string(text) + "'");
    }
    return Date{ymd};
}

std::string format_date(Date date) {
    const std::chrono::year_month_day ymd{date};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

int iso_weekday(Date date) {
    return static_cast<int>(std::chrono::weekday{date}.iso_encoding());
}

}  // namespace epf
