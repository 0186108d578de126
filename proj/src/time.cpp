#include "smartalert/time.hpp"

#include "smartalert/errors.hpp"

#include <boost/date_time/local_time/local_time.hpp>
#include <boost/make_shared.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <vector>

namespace smartalert {

namespace {

int parse_int(std::string_view text, std::size_t pos, std::size_t len) {
    if (pos + len > text.size()) {
        throw ParseError("timestamp too short: '" + std::string(text) + "'");
    }
    int value = 0;
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, value);
    if (ec != std::errc{} || ptr != text.data() + pos + len) {
        throw ParseError("bad digits in timestamp: '" + std::string(text) + "'");
    }
    return value;
}

void expect(std::string_view text, std::size_t pos, char c) {
    if (pos >= text.size() || text[pos] != c) {
        throw ParseError("malformed timestamp: '" + std::string(text) + "'");
    }
}

} // namespace

Timestamp make_utc(int year, unsigned month, unsigned day, int hour, int minute, int second) {
    using namespace std::chrono;
    const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
    if (!ymd.ok()) {
        throw ParseError("invalid calendar date");
    }
    return sys_days{ymd} + Seconds{hour * 3600 + minute * 60 + second};
}

Timestamp parse_rfc3339(std::string_view text) {
    const int year = parse_int(text, 0, 4);
    expect(text, 4, '-');
    const int month = parse_int(text, 5, 2);
    expect(text, 7, '-');
    const int day = parse_int(text, 8, 2);
    if (text.size() < 11 || (text[10] != 'T' && text[10] != 't' && text[10] != ' ')) {
        throw ParseError("malformed timestamp: '" + std::string(text) + "'");
    }
    const int hour = parse_int(text, 11, 2);
    expect(text, 13, ':');
    const int minute = parse_int(text, 14, 2);
    expect(text, 16, ':');
    const int second = parse_int(text, 17, 2);
    if (month < 1 || month > 12 || day < 1 || hour > 23 || minute > 59 || second > 60) {
        throw ParseError("timestamp field out of range: '" + std::string(text) + "'");
    }
    std::size_t pos = 19;
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
            ++pos;
        }
    }
    if (pos >= text.size()) {
        throw ParseError("timestamp lacks zone designator: '" + std::string(text) + "'");
    }
    int offset_seconds = 0;
    if (text[pos] == 'Z' || text[pos] == 'z') {
        ++pos;
    } else if (text[pos] == '+' || text[pos] == '-') {
        const int sign = text[pos] == '+' ? 1 : -1;
        const int oh = parse_int(text, pos + 1, 2);
        expect(text, pos + 3, ':');
        const int om = parse_int(text, pos + 4, 2);
        offset_seconds = sign * (oh * 3600 + om * 60);
        pos += 6;
    } else {
        throw ParseError("bad zone designator: '" + std::string(text) + "'");
    }
    if (pos != text.size()) {
        throw ParseError("trailing characters in timestamp: '" + std::string(text) + "'");
    }
    return make_utc(year, static_cast<unsigned>(month), static_cast<unsigned>(day), hour, minute,
                    std::min(second, 59)) -
           Seconds{offset_seconds};
}

std::string format_rfc3339(Timestamp t) {
    using namespace std::chrono;
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    const auto tod = t - day;
    const auto secs = tod.count();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lldZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long long>(secs / 3600), static_cast<long long>((secs / 60) % 60),
                  static_cast<long long>(secs % 60));
    return buf;
}

double hours_between(Timestamp from, Timestamp to) {
    return static_cast<double>((to - from).count()) / 3600.0;
}

Seconds parse_duration(std::string_view text) {
    if (text.empty()) {
        throw ParseError("empty duration");
    }
    double scale = 3600.0;
    std::string_view number = text;
    switch (text.back()) {
    case 's': scale = 1.0; number.remove_suffix(1); break;
    case 'm': scale = 60.0; number.remove_suffix(1); break;
    case 'h': scale = 3600.0; number.remove_suffix(1); break;
    case 'd': scale = 86400.0; number.remove_suffix(1); break;
    default: break;
    }
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(number.data(), number.data() + number.size(), value);
    if (ec != std::errc{} || ptr != number.data() + number.size() || value < 0.0 ||
        !std::isfinite(value)) {
        throw ParseError("bad duration: '" + std::string(text) + "'");
    }
    return Seconds{static_cast<std::int64_t>(std::llround(value * scale))};
}

struct HospitalZone::Impl {
    boost::local_time::time_zone_ptr tz;
    std::int64_t std_offset = 0;
    std::int64_t dst_offset = 0;

    std::int64_t offset_at(Timestamp t) const {
        namespace pt = boost::posix_time;
        const pt::ptime epoch(boost::gregorian::date(1970, 1, 1));
        const pt::ptime utc = epoch + pt::seconds(static_cast<long>(t.time_since_epoch().count()));
        const boost::local_time::local_date_time ldt(utc, tz);
        return (ldt.local_time() - utc).total_seconds();
    }
};

HospitalZone::HospitalZone() : HospitalZone(kDefaultZoneRule) {}

namespace {

// POSIX TZ offsets are hours west of UTC ("PST8"); Boost reads them as hours
// east ("PST-8"). Flip the sign of each offset that follows a zone name.
std::string to_boost_rule(const std::string& rule) {
    std::string out;
    std::size_t i = 0;
    auto copy_name = [&]() {
        if (i < rule.size() && rule[i] == '<') {
            while (i < rule.size() && rule[i] != '>') out += rule[i++];
            if (i < rule.size()) out += rule[i++];
        } else {
            while (i < rule.size() && std::isalpha(static_cast<unsigned char>(rule[i]))) out += rule[i++];
        }
    };
    auto copy_offset = [&]() {
        if (i >= rule.size() || rule[i] == ',') return false;
        bool negative = false;
        if (rule[i] == '+' || rule[i] == '-') negative = rule[i++] == '-';
        if (i >= rule.size() || !std::isdigit(static_cast<unsigned char>(rule[i]))) {
            throw ConfigError("invalid time zone rule '" + rule + "'");
        }
        out += negative ? '+' : '-';
        while (i < rule.size() && (std::isdigit(static_cast<unsigned char>(rule[i])) || rule[i] == ':')) out += rule[i++];
        return true;
    };
    copy_name();
    if (!copy_offset()) throw ConfigError("time zone rule '" + rule + "' lacks a UTC offset");
    copy_name();
    copy_offset();
    out += rule.substr(i);
    return out;
}

} // namespace

HospitalZone::HospitalZone(std::string posix_rule) : rule_(std::move(posix_rule)) {
    auto impl = std::make_shared<Impl>();
    try {
        auto zone = boost::make_shared<boost::local_time::posix_time_zone>(to_boost_rule(rule_));
        impl->std_offset = zone->base_utc_offset().total_seconds();
        impl->dst_offset = impl->std_offset + zone->dst_offset().total_seconds();
        impl->tz = zone;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("invalid time zone rule '" + rule_ + "': " + e.what());
    }
    impl_ = std::move(impl);
}

int HospitalZone::local_minute_of_day(Timestamp t) const {
    const std::int64_t local = t.time_since_epoch().count() + impl_->offset_at(t);
    const std::int64_t in_day = ((local % 86400) + 86400) % 86400;
    return static_cast<int>(in_day / 60);
}

std::int64_t HospitalZone::local_day(Timestamp t) const {
    const std::int64_t local = t.time_since_epoch().count() + impl_->offset_at(t);
    return local >= 0 ? local / 86400 : -((-local + 86399) / 86400);
}

Timestamp HospitalZone::from_local(std::int64_t local_day, int minute_of_day) const {
    const std::int64_t wall = local_day * 86400 + static_cast<std::int64_t>(minute_of_day) * 60;
    std::vector<std::int64_t> matches;
    for (const std::int64_t off : {impl_->dst_offset, impl_->std_offset}) {
        const Timestamp candidate{Seconds{wall - off}};
        if (candidate.time_since_epoch().count() + impl_->offset_at(candidate) == wall) {
            matches.push_back(wall - off);
        }
    }
    if (matches.empty()) {
        return Timestamp{Seconds{wall - impl_->std_offset}};
    }
    return Timestamp{Seconds{*std::min_element(matches.begin(), matches.end())}};
}

} // namespace smartalert
