#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

namespace smartalert {

/// UTC instant at one-second resolution. All wire timestamps are RFC-3339 UTC.
using Timestamp = std::chrono::sys_seconds;
using Seconds = std::chrono::seconds;

constexpr Seconds hours(std::int64_t h) { return Seconds{h * 3600}; }
constexpr Seconds minutes(std::int64_t m) { return Seconds{m * 60}; }

Timestamp make_utc(int year, unsigned month, unsigned day, int hour = 0, int minute = 0,
                   int second = 0);

/// Accepts `YYYY-MM-DDTHH:MM:SS[.fff](Z|±HH:MM)`. Fractional seconds are truncated.
/// Throws ParseError.
Timestamp parse_rfc3339(std::string_view text);

/// Always renders UTC with a trailing `Z`.
std::string format_rfc3339(Timestamp t);

double hours_between(Timestamp from, Timestamp to);

/// Parses durations such as "52h", "90m", "2d", "3600s" or a bare number of hours.
Seconds parse_duration(std::string_view text);

/// Pacific time, the default hospital zone.
inline constexpr const char* kDefaultZoneRule = "PST8PDT,M3.2.0,M11.1.0";

/// Hospital-local wall clock, defined by a POSIX TZ rule string such as
/// "PST8PDT,M3.2.0,M11.1.0". Daylight-saving transitions follow the rule.
class HospitalZone {
public:
    HospitalZone();
    explicit HospitalZone(std::string posix_rule);

    const std::string& rule() const { return rule_; }

    /// Minutes since local midnight, in [0, 1440).
    int local_minute_of_day(Timestamp t) const;

    /// Local civil day number (days since 1970-01-01 in local time).
    std::int64_t local_day(Timestamp t) const;

    /// UTC instant of a local wall time on a local day. Nonexistent wall times
    /// (spring-forward gap) resolve one hour later.
    Timestamp from_local(std::int64_t local_day, int minute_of_day) const;

private:
    struct Impl;
    std::string rule_;
    std::shared_ptr<const Impl> impl_;
};

} // namespace smartalert
