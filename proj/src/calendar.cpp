#include "invasion/calendar.hpp"

#include <charconv>
#include <cstdio>

#include "invasion/errors.hpp"

namespace invasion {

int parse_month(std::string_view text) {
  auto fail = [&] { return ParseError("bad month '" + std::string(text) + "', expected YYYY-MM"); };
  auto dash = text.find('-', 1);
  if (dash == std::string_view::npos) throw fail();
  int year = 0;
  int mon = 0;
  auto y = std::from_chars(text.data(), text.data() + dash, year);
  auto m = std::from_chars(text.data() + dash + 1, text.data() + text.size(), mon);
  if (y.ec != std::errc() || y.ptr != text.data() + dash) throw fail();
  if (m.ec != std::errc() || m.ptr != text.data() + text.size()) throw fail();
  if (mon < 1 || mon > 12) throw fail();
  return (year - 1970) * 12 + (mon - 1);
}

std::string format_month(int month) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d", month_year(month), month_of_year(month));
  return buf;
}

}  // namespace invasion
