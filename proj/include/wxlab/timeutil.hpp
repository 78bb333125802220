// SPDX-License-Identifier: Apache-2.0
//
// Calendar helpers for UTC timestamps. Timestamps travel through the library
// as int64 seconds since the Unix epoch; these routines convert to and from
// "YYYY-MM-DDThh:mm:ssZ" strings and expose the pieces the zenith-angle code
// needs (day of year, fractional UTC hour).

#pragma once

#include <cstdint>
#include <string>

namespace wxlab {

struct CivilTime {
    int year = 1970;
    int month = 1;  // 1..12
    int day = 1;    // 1..31
    int hour = 0;
    int minute = 0;
    int second = 0;
};

// Days from 1970-01-01 for a proleptic Gregorian civil date (Hinnant's
// algorithm; exact over the full int range).
int64_t days_from_civil(int y, int m, int d);
CivilTime civil_from_epoch(int64_t epoch_seconds);
int64_t epoch_from_civil(const CivilTime& c);

// Day of year, 1-based (Jan 1 = 1; Dec 31 = 365 or 366).
int day_of_year(int64_t epoch_seconds);

// Hour of day in UTC, fractional (0.0 .. 24.0).
double utc_hour(int64_t epoch_seconds);

// Parses "YYYY-MM-DDThh:mm:ssZ" (seconds optional: "YYYY-MM-DDThh:mmZ" also
// accepted; trailing 'Z' required). Throws std::invalid_argument on anything
// else; this library only deals in UTC.
int64_t parse_iso8601(const std::string& s);
std::string format_iso8601(int64_t epoch_seconds);

}  // namespace wxlab
