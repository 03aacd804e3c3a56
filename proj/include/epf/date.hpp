#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace epf {

using Date = std::chrono::sys_days;

// Accepts YYYY-MM-DD and DD.MM.YYYY.
Date parse_date(std::string_view text);

std::string format_date(Date date);

// Monday = 1 ... Sunday = 7.
int iso_weekday(Date date);

inline Date add_days(Date date, long days) { return date + std::chrono::days{days}; }
inline long days_between(Date from, Date to) { return (to - from).count(); }

}  // namespace epf
