#include "fixtures.hpp"

#include "smartalert/domain.hpp"
#include "smartalert/errors.hpp"
#include "smartalert/time.hpp"

#include <doctest.h>

#include <random>

using namespace smartalert;
using fixtures::lab;

TEST_CASE("rfc3339 parse and format") {
    CHECK(parse_rfc3339("2024-08-25T17:00:00Z") == make_utc(2024, 8, 25, 17));
    CHECK(parse_rfc3339("2024-08-25T10:00:00-07:00") == make_utc(2024, 8, 25, 17));
    CHECK(parse_rfc3339("2024-08-25T17:00:00.987Z") == make_utc(2024, 8, 25, 17));
    CHECK(format_rfc3339(make_utc(2024, 3, 8, 5, 6, 7)) == "2024-03-08T05:06:07Z");
    CHECK_THROWS_AS(parse_rfc3339("2024-08-25 17:00"), ParseError);
    CHECK_THROWS_AS(parse_rfc3339("not a time"), ParseError);
}

TEST_CASE("durations") {
    CHECK(parse_duration("52h") == hours(52));
    CHECK(parse_duration("90m") == minutes(90));
    CHECK(parse_duration("2d") == hours(48));
    CHECK(parse_duration("3600s") == hours(1));
    CHECK(parse_duration("6") == hours(6));
    CHECK_THROWS(parse_duration("-1h"));
    CHECK_THROWS(parse_duration("abc"));
}

TEST_CASE("hospital zone follows daylight saving") {
    const HospitalZone zone;
    // 17:00Z in August is 10:00 PDT.
    CHECK(zone.local_minute_of_day(make_utc(2024, 8, 25, 17)) == 600);
    // 17:00Z in January is 09:00 PST.
    CHECK(zone.local_minute_of_day(make_utc(2024, 1, 15, 17)) == 540);
    const auto aug = zone.local_day(make_utc(2024, 8, 25, 17));
    CHECK(zone.from_local(aug, 5 * 60) == make_utc(2024, 8, 25, 12));
    const auto jan = zone.local_day(make_utc(2024, 1, 15, 17));
    CHECK(zone.from_local(jan, 5 * 60) == make_utc(2024, 1, 15, 13));
    // 03:00Z on Aug 26 is still Aug 25 locally.
    CHECK(zone.local_day(make_utc(2024, 8, 26, 3)) == aug);
    CHECK_THROWS(HospitalZone("not a rule"));
}

TEST_CASE("labeler examples") {
    const auto reg = ThresholdRegistry::defaults();
    const Timestamp t0 = make_utc(2024, 8, 20, 5), t1 = t0 + hours(24);

    auto wbc = label_stability(lab(LabComponent::WBC, 8.0, t0), lab(LabComponent::WBC, 9.5, t1),
                               reg.thresholds(LabComponent::WBC));
    CHECK(wbc.stable);
    CHECK(wbc.reasons.empty());
    CHECK(wbc.delta == doctest::Approx(1.5));

    // 8.9 is below the 9.5 absolute minimum as well as past the -0.99 delta.
    auto hgb = label_stability(lab(LabComponent::HGB, 10.0, t0), lab(LabComponent::HGB, 8.9, t1),
                               reg.thresholds(LabComponent::HGB));
    CHECK_FALSE(hgb.stable);
    CHECK(hgb.reasons == std::vector{StabilityReason::delta_below, StabilityReason::below_min});

    auto plt = label_stability(lab(LabComponent::PLT, 130, t0), lab(LabComponent::PLT, 120, t1),
                               reg.thresholds(LabComponent::PLT));
    CHECK_FALSE(plt.stable);
    CHECK(plt.reasons == std::vector{StabilityReason::below_min});
}

TEST_CASE("labeler contract errors") {
    const auto reg = ThresholdRegistry::defaults();
    const Timestamp t0 = make_utc(2024, 8, 20, 5);
    const auto& th = reg.thresholds(LabComponent::WBC);
    CHECK_THROWS_AS(label_stability(lab(LabComponent::WBC, 8, t0), lab(LabComponent::HGB, 8, t0 + hours(1)), th),
                    ContractError);
    CHECK_THROWS_AS(label_stability(lab(LabComponent::WBC, 8, t0), lab(LabComponent::WBC, 8, t0), th), ContractError);
    CHECK_THROWS_AS(label_stability(lab(LabComponent::WBC, 8, t0), lab(LabComponent::WBC, NAN, t0 + hours(1)), th),
                    ContractError);
}

TEST_CASE("labeler bounds are closed") {
    const auto reg = ThresholdRegistry::defaults();
    const Timestamp t0 = make_utc(2024, 8, 20, 5), t1 = t0 + hours(24);
    for (LabComponent c : kAllComponents) {
        const auto& th = reg.thresholds(c);
        const double prev = (th.stop_min + th.stop_max) / 2.0;
        CAPTURE(to_string(c));
        // Delta exactly at each acceptable change.
        auto up = label_stability(lab(c, prev, t0), lab(c, prev + th.acceptable_increase, t1), th);
        CHECK(std::find(up.reasons.begin(), up.reasons.end(), StabilityReason::delta_above) == up.reasons.end());
        auto down = label_stability(lab(c, prev, t0), lab(c, prev + th.acceptable_decrease, t1), th);
        CHECK(std::find(down.reasons.begin(), down.reasons.end(), StabilityReason::delta_below) == down.reasons.end());
        // Value exactly at each absolute bound, reached by a small step.
        auto at_max = label_stability(lab(c, th.stop_max, t0), lab(c, th.stop_max, t1), th);
        CHECK(at_max.stable);
        auto at_min = label_stability(lab(c, th.stop_min, t0), lab(c, th.stop_min, t1), th);
        CHECK(at_min.stable);
    }
    // Decimal inputs that land on the bound.
    auto wbc = label_stability(lab(LabComponent::WBC, 8.0, t0), lab(LabComponent::WBC, 9.8, t1),
                               reg.thresholds(LabComponent::WBC));
    CHECK(wbc.stable);
    auto wbc_over = label_stability(lab(LabComponent::WBC, 8.0, t0), lab(LabComponent::WBC, 9.9, t1),
                                    reg.thresholds(LabComponent::WBC));
    CHECK_FALSE(wbc_over.stable);
}

TEST_CASE("labeler is pure and toggles at most twice along a sweep") {
    const auto reg = ThresholdRegistry::defaults();
    const Timestamp t0 = make_utc(2024, 8, 20, 5), t1 = t0 + hours(24);
    for (LabComponent c : kAllComponents) {
        const auto& th = reg.thresholds(c);
        const double prev = (th.stop_min + th.stop_max) / 2.0;
        const double lo = th.stop_min - (th.stop_max - th.stop_min), hi = th.stop_max + (th.stop_max - th.stop_min);
        int toggles = 0;
        bool last = label_stability(lab(c, prev, t0), lab(c, std::max(0.0, lo), t1), th).stable;
        for (int i = 1; i <= 2000; ++i) {
            const double next = std::max(0.0, lo + (hi - lo) * i / 2000.0);
            const auto a = label_stability(lab(c, prev, t0), lab(c, next, t1), th);
            const auto b = label_stability(lab(c, prev, t0), lab(c, next, t1), th);
            CHECK(a.stable == b.stable);
            CHECK(a.reasons == b.reasons);
            if (a.stable != last) ++toggles;
            last = a.stable;
        }
        CHECK(toggles <= 2);
    }
}

TEST_CASE("panel labels") {
    const auto reg = ThresholdRegistry::defaults();
    const Timestamp t0 = make_utc(2024, 8, 20, 5), t1 = t0 + hours(24);
    LabSeries s("E1", {lab(LabComponent::WBC, 8.0, t0), lab(LabComponent::WBC, 8.5, t1),
                       lab(LabComponent::HGB, 12.0, t0), lab(LabComponent::HGB, 12.2, t1),
                       lab(LabComponent::PLT, 140, t0), lab(LabComponent::PLT, 130, t1)});
    auto p = label_panel(s, kCbcPanel, reg);
    CHECK(p.stable);
    CHECK(p.components.size() == 3);

    s.add(lab(LabComponent::PLT, 120, t1 + hours(24)));
    s.add(lab(LabComponent::WBC, 8.4, t1 + hours(24)));
    s.add(lab(LabComponent::HGB, 12.1, t1 + hours(24)));
    p = label_panel(s, kCbcPanel, reg);
    CHECK_FALSE(p.stable);
    CHECK(p.components.at(LabComponent::WBC).stable);
    CHECK(p.components.at(LabComponent::HGB).stable);
    CHECK(p.components.at(LabComponent::PLT).reasons == std::vector{StabilityReason::below_min});

    LabSeries thin("E2", {lab(LabComponent::WBC, 8.0, t0), lab(LabComponent::WBC, 8.5, t1),
                          lab(LabComponent::HGB, 12.0, t0), lab(LabComponent::HGB, 12.2, t1),
                          lab(LabComponent::PLT, 200, t0)});
    try {
        label_panel(thin, kCbcPanel, reg);
        FAIL("expected insufficient history");
    } catch (const InsufficientHistory& e) {
        CHECK(e.component() == LabComponent::PLT);
    }
}

TEST_CASE("panel stable implies every component stable") {
    const auto reg = ThresholdRegistry::defaults();
    std::mt19937_64 rng(42);
    const Timestamp t0 = make_utc(2024, 8, 20, 5);
    for (int trial = 0; trial < 500; ++trial) {
        LabSeries s("E");
        for (LabComponent c : kCbcPanel) {
            const auto& th = reg.thresholds(c);
            std::uniform_real_distribution<double> v(th.stop_min * 0.8, th.stop_max * 1.1);
            const int n = 2 + static_cast<int>(rng() % 4);
            for (int k = 0; k < n; ++k) s.add(lab(c, v(rng), t0 + hours(24 * k)));
        }
        const auto p = label_panel(s, kCbcPanel, reg);
        bool all = true;
        for (const auto& [c, l] : p.components) all = all && l.stable;
        CHECK(p.stable == all);
    }
}

TEST_CASE("lab series supersedes by correction") {
    const Timestamp t0 = make_utc(2024, 8, 20, 5);
    LabSeries s("E1");
    s.add(lab(LabComponent::HGB, 9.0, t0));
    s.add(LabResult{LabComponent::HGB, 9.4, t0, ResultStatus::corrected});
    s.add(lab(LabComponent::HGB, 9.9, t0));
    REQUIRE(s.size() == 1);
    CHECK(s.results()[0].value == 9.4);
    CHECK_THROWS_AS(s.add(lab(LabComponent::HGB, -1.0, t0 + hours(1))), ContractError);
    CHECK(s.until(t0 - Seconds{1}).empty());
}

TEST_CASE("threshold registry round trip") {
    const auto reg = ThresholdRegistry::defaults();
    const auto back = ThresholdRegistry::from_json(reg.to_json());
    CHECK(back.to_json() == reg.to_json());
    CHECK(back.panel("CBC") == std::vector<LabComponent>(kCbcPanel.begin(), kCbcPanel.end()));
    Json bad = reg.to_json();
    bad["components"]["WBC"]["acceptable_decrease"] = 1.0;
    CHECK_THROWS(ThresholdRegistry::from_json(bad));
}
