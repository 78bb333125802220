// SPDX-License-Identifier: Apache-2.0

#include "wxlab/timeutil.hpp"

#include <cstdio>
#include <stdexcept>

namespace wxlab {

int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);              // [0, 399]
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;   // [0, 365]
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;             // [0, 146096]
    return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

static void civil_from_days(int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int64_t yr = static_cast<int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y = static_cast<int>(yr + (m <= 2));
}

CivilTime civil_from_epoch(int64_t t) {
    int64_t days = t / 86400;
    int64_t rem = t % 86400;
    if (rem < 0) {
        rem += 86400;
        days -= 1;
    }
    CivilTime c;
    civil_from_days(days, c.year, c.month, c.day);
    c.hour = static_cast<int>(rem / 3600);
    c.minute = static_cast<int>((rem / 60) % 60);
    c.second = static_cast<int>(rem % 60);
    return c;
}

int64_t epoch_from_civil(const CivilTime& c) {
    return days_from_civil(c.year, c.month, c.day) * 86400 + c.hour * 3600 + c.minute * 60 +
           c.second;
}

int day_of_year(int64_t t) {
    CivilTime c = civil_from_epoch(t);
    return static_cast<int>(days_from_civil(c.year, c.month, c.day) -
                            days_from_civil(c.year, 1, 1)) +
           1;
}

double utc_hour(int64_t t) {
    int64_t rem = t % 86400;
    if (rem < 0) rem += 86400;
    return static_cast<double>(rem) / 3600.0;
}

static bool is_leap(int y) { return y % 4 == 0 && (y % 100 != 0 || y % 400 == 0); }

static int days_in_month(int y, int m) {
    static const int table[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && is_leap(y)) return 29;
    return table[m - 1];
}

int64_t parse_iso8601(const std::string& s) {
    CivilTime c;
    int n = 0;
    int got = std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%d%n", &c.year, &c.month, &c.day, &c.hour,
                          &c.minute, &c.second, &n);
    if (got < 5) throw std::invalid_argument("cannot parse timestamp '" + s + "'");
    if (got == 5) {
        // Re-scan without seconds to find where the minutes field ended.
        c.second = 0;
        std::sscanf(s.c_str(), "%d-%d-%dT%d:%d%n", &c.year, &c.month, &c.day, &c.hour, &c.minute,
                    &n);
    }
    if (s.substr(static_cast<size_t>(n)) != "Z") {
        throw std::invalid_argument("timestamp '" + s + "' must be UTC with a trailing 'Z'");
    }
    if (c.month < 1 || c.month > 12 || c.day < 1 || c.day > days_in_month(c.year, c.month) ||
        c.hour < 0 || c.hour > 23 || c.minute < 0 || c.minute > 59 || c.second < 0 ||
        c.second > 60) {
        throw std::invalid_argument("timestamp '" + s + "' has out-of-range fields");
    }
    return epoch_from_civil(c);
}

std::string format_iso8601(int64_t t) {
    CivilTime c = civil_from_epoch(t);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", c.year, c.month, c.day,
                  c.hour, c.minute, c.second);
    return std::string(buf);
}

}  // namespace wxlab
