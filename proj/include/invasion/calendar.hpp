#pragma once

#include <string>
#include <string_view>

namespace invasion {

// Dates are whole months counted from January 1970 (month 0). Earlier dates
// are negative.

int parse_month(std::string_view text);        // "YYYY-MM"
std::string format_month(int month);
inline int month_year(int month) { return month >= 0 ? 1970 + month / 12 : 1970 - (11 - month) / 12; }
inline int month_of_year(int month) { return ((month % 12) + 12) % 12 + 1; }

}  // namespace invasion
