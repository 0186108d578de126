#include "smartalert/analytics.hpp"

#include "smartalert/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace smartalert {

namespace {

const char* const kEncounters = "Encounters";
const char* const kPatients = "Unique patients";
const char* const kAlerts = "Alerts";
const char* const kAge = "Median Age [IQR]";
const char* const kFemale = "% Female";
const char* const kRace = "Race (%)";
const char* const kIcuAdmission = "% ICU on admission (Encounter level)";
const char* const kCbc52 = "Mean number of CBC results within 52 hrs of alert";
const char* const kCbc28 = "Mean number of CBC results within 28 hrs of alert";
const char* const kIcu52 = "Rate of ICU transfer within 52 hrs of alert (%)";
const char* const kLos = "Length of stay (hours)";
const char* const kIcuEncounter = "ICU transfer during encounter (%)";
const char* const kReadmit = "30-day readmission rate (%)";
const char* const kMortality = "Encounter mortality rate (%)";

const std::array<std::pair<Race, const char*>, 7> kRaceRows{{{Race::white, "White"},
                                                             {Race::black, "Black or African American"},
                                                             {Race::asian, "Asian"},
                                                             {Race::pacific_islander, "Pacific Islander"},
                                                             {Race::native_american, "Native American"},
                                                             {Race::other, "Other"},
                                                             {Race::unknown, "Unknown"}}};

std::int64_t count_in(const std::vector<Timestamp>& sorted, Timestamp from, Timestamp to) {
    // (from, to]
    auto lo = std::upper_bound(sorted.begin(), sorted.end(), from);
    auto hi = std::upper_bound(sorted.begin(), sorted.end(), to);
    return static_cast<std::int64_t>(hi - lo);
}

// Linear-interpolated quantile of sorted data.
double quantile(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(i);
    if (i + 1 >= sorted.size()) return sorted.back();
    return sorted[i] + frac * (sorted[i + 1] - sorted[i]);
}

std::string format_int(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f", v);
    return buf;
}

double percent(std::size_t k, std::size_t n) { return n ? 100.0 * static_cast<double>(k) / static_cast<double>(n) : 0.0; }

OutcomeRow fisher_row(const char* label, std::size_t kt, std::size_t nt, std::size_t kc, std::size_t nc) {
    OutcomeRow r;
    r.label = label;
    r.test_name = "fisher_exact";
    if (nt == 0 || nc == 0) {
        r.treatment = nt ? format_rate(percent(kt, nt)) : "n/a";
        r.control = nc ? format_rate(percent(kc, nc)) : "n/a";
        return r;
    }
    r.value_treatment = percent(kt, nt);
    r.value_control = percent(kc, nc);
    r.treatment = format_rate(*r.value_treatment);
    r.control = format_rate(*r.value_control);
    r.effect = *r.value_treatment - *r.value_control;
    r.p_value = fisher_exact(kt, nt - kt, kc, nc - kc).p;
    return r;
}

OutcomeRow poisson_row(const char* label, const std::vector<std::int64_t>& t, const std::vector<std::int64_t>& c) {
    OutcomeRow r;
    r.label = label;
    r.test_name = "poisson_rate_ratio";
    if (t.empty() || c.empty()) {
        r.treatment = "n/a";
        r.control = "n/a";
        return r;
    }
    const auto cmp = poisson_rate_compare(t, c);
    r.value_treatment = cmp.mean_treatment;
    r.value_control = cmp.mean_control;
    r.treatment = format_mean(cmp.mean_treatment);
    r.control = format_mean(cmp.mean_control);
    if (std::isfinite(cmp.rate_ratio)) r.effect = cmp.rate_ratio;
    r.p_value = cmp.p;
    return r;
}

OutcomeRow text_row(const std::string& label, std::string t, std::string c) {
    OutcomeRow r;
    r.label = label;
    r.treatment = std::move(t);
    r.control = std::move(c);
    return r;
}

Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(); }

} // namespace

// ---------------------------------------------------------------------------
// Formatting

std::string format_mean(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string format_rate(double v) {
    if (v == 0.0 || !std::isfinite(v)) return v == 0.0 ? "0.0" : "n/a";
    const int magnitude = static_cast<int>(std::floor(std::log10(std::fabs(v))));
    const double scale = std::pow(10.0, 1 - magnitude);
    const double rounded = std::round(v * scale) / scale;
    // Rounding can carry into the next decade (9.96 -> 10).
    const int mag2 = static_cast<int>(std::floor(std::log10(std::fabs(rounded))));
    const int decimals = std::max(0, 1 - mag2);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, rounded);
    return buf;
}

std::string format_p(const std::optional<double>& p) {
    if (!p) return "n/a";
    if (*p < 0.01) return "< 0.01";
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", *p);
    return buf;
}

const std::vector<std::string>& report_row_labels() {
    static const std::vector<std::string> labels = [] {
        std::vector<std::string> v{kEncounters, kPatients, kAlerts, kAge, kFemale, kRace};
        for (const auto& [race, label] : kRaceRows) v.emplace_back(label);
        for (const char* l : {kIcuAdmission, kCbc52, kCbc28, kIcu52, kLos, kIcuEncounter, kReadmit, kMortality}) {
            v.emplace_back(l);
        }
        return v;
    }();
    return labels;
}

// ---------------------------------------------------------------------------
// Windows

WindowCounts compute_windows(std::span<const AlertEvent> events,
                             const std::map<std::string, std::vector<Timestamp>>& panel_draws,
                             const std::map<std::string, std::vector<Timestamp>>& icu_transfers,
                             const WindowOptions& options) {
    WindowCounts out;
    for (const auto& e : events) {
        if (!e.triggered()) continue;
        auto draws = panel_draws.find(e.encounter_id);
        if (draws == panel_draws.end()) {
            ++out.excluded;
            continue;
        }
        std::vector<Timestamp> sorted = draws->second;
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        OutcomeWindowCounts c;
        c.event_id = e.event_id;
        c.encounter_id = e.encounter_id;
        c.arm = e.arm;
        c.triggered_at = e.triggered_at;
        c.n_cbc_52h = count_in(sorted, e.triggered_at, e.triggered_at + options.long_window);
        c.n_cbc_28h = count_in(sorted, e.triggered_at, e.triggered_at + options.short_window);
        if (auto icu = icu_transfers.find(e.encounter_id); icu != icu_transfers.end()) {
            c.icu_transfer_52h = std::any_of(icu->second.begin(), icu->second.end(), [&](Timestamp t) {
                return t > e.triggered_at && t <= e.triggered_at + options.long_window;
            });
        }
        out.counts.push_back(std::move(c));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report

const OutcomeRow* TrialReport::row(std::string_view label) const {
    for (const auto& r : rows) {
        if (r.label == label) return &r;
    }
    return nullptr;
}

TrialReport build_report(std::span<const AlertEvent> events, std::span<const EncounterRecord> encounters,
                         const WindowOptions& options) {
    TrialReport rep;
    std::map<std::string, const EncounterRecord*> by_id;
    std::vector<const EncounterRecord*> arm_t, arm_c;
    for (const auto& r : encounters) {
        by_id[r.encounter_id] = &r;
        if (!r.eligible) continue;
        (r.arm == Arm::treatment ? arm_t : arm_c).push_back(&r);
    }
    rep.encounters_treatment = arm_t.size();
    rep.encounters_control = arm_c.size();
    auto patients = [](const std::vector<const EncounterRecord*>& v) {
        std::set<std::string> ids;
        for (const auto* r : v) ids.insert(r->patient_id.empty() ? r->encounter_id : r->patient_id);
        return ids.size();
    };
    rep.patients_treatment = patients(arm_t);
    rep.patients_control = patients(arm_c);

    std::map<std::string, std::vector<Timestamp>> draws, icu;
    for (const auto& r : encounters) {
        draws[r.encounter_id] = r.cbc_draws;
        icu[r.encounter_id] = r.icu_transfer_times;
    }
    std::size_t missing_records = 0;
    for (const auto& e : events) {
        if (e.triggered()) {
            (e.arm == Arm::treatment ? rep.alerts_displayed : rep.alerts_silent) += 1;
            if (!by_id.count(e.encounter_id)) ++missing_records;
        }
    }
    if (missing_records) {
        rep.warnings.push_back(std::to_string(missing_records) +
                               " triggered events have no encounter record and were excluded");
    }
    const WindowCounts windows = compute_windows(events, draws, icu, options);
    rep.events_excluded = windows.excluded;

    rep.rows.push_back(text_row(kEncounters, std::to_string(rep.encounters_treatment),
                                std::to_string(rep.encounters_control)));
    rep.rows.push_back(
        text_row(kPatients, std::to_string(rep.patients_treatment), std::to_string(rep.patients_control)));
    rep.rows.push_back(text_row(kAlerts, std::to_string(rep.alerts_displayed) + " (displayed)",
                                std::to_string(rep.alerts_silent) + " (triggered)"));

    auto age_summary = [](const std::vector<const EncounterRecord*>& v) -> std::string {
        if (v.empty()) return "n/a";
        std::vector<double> ages;
        for (const auto* r : v) ages.push_back(r->demographics.age_years);
        std::sort(ages.begin(), ages.end());
        return format_int(quantile(ages, 0.5)) + " [" + format_int(quantile(ages, 0.25)) + "-" +
               format_int(quantile(ages, 0.75)) + "]";
    };
    rep.rows.push_back(text_row(kAge, age_summary(arm_t), age_summary(arm_c)));

    auto share = [](const std::vector<const EncounterRecord*>& v, auto pred) -> std::string {
        if (v.empty()) return "n/a";
        std::size_t k = 0;
        for (const auto* r : v) k += pred(*r) ? 1 : 0;
        return format_rate(percent(k, v.size()));
    };
    rep.rows.push_back(text_row(kFemale, share(arm_t, [](const auto& r) { return r.demographics.sex == Sex::female; }),
                                share(arm_c, [](const auto& r) { return r.demographics.sex == Sex::female; })));
    rep.rows.push_back(text_row(kRace, "", ""));
    for (const auto& [race, label] : kRaceRows) {
        const Race want = race;
        rep.rows.push_back(text_row(label, share(arm_t, [&](const auto& r) { return r.demographics.race == want; }),
                                    share(arm_c, [&](const auto& r) { return r.demographics.race == want; })));
    }
    rep.rows.push_back(text_row(kIcuAdmission, share(arm_t, [](const auto& r) { return r.icu_on_admission; }),
                                share(arm_c, [](const auto& r) { return r.icu_on_admission; })));

    std::vector<std::int64_t> n52_t, n52_c, n28_t, n28_c;
    std::size_t icu52_t = 0, icu52_c = 0;
    for (const auto& c : windows.counts) {
        const bool t = c.arm == Arm::treatment;
        (t ? n52_t : n52_c).push_back(c.n_cbc_52h);
        (t ? n28_t : n28_c).push_back(c.n_cbc_28h);
        if (c.icu_transfer_52h) (t ? icu52_t : icu52_c) += 1;
    }
    rep.rows.push_back(poisson_row(kCbc52, n52_t, n52_c));
    rep.rows.push_back(poisson_row(kCbc28, n28_t, n28_c));
    rep.rows.push_back(fisher_row(kIcu52, icu52_t, n52_t.size(), icu52_c, n52_c.size()));
    if (const auto* r = rep.row(kCbc52); r->value_treatment && r->value_control && *r->value_control > 0.0) {
        rep.relative_reduction_52h = relative_reduction(*r->value_treatment, *r->value_control);
    }

    std::vector<double> los_t, los_c;
    for (const auto* r : arm_t) {
        if (auto h = r->length_of_stay_hours()) los_t.push_back(*h);
    }
    for (const auto* r : arm_c) {
        if (auto h = r->length_of_stay_hours()) los_c.push_back(*h);
    }
    OutcomeRow los;
    los.label = kLos;
    los.test_name = "mann_whitney_u";
    if (!los_t.empty() && !los_c.empty()) {
        auto mean = [](const std::vector<double>& v) {
            double s = 0.0;
            for (double x : v) s += x;
            return s / static_cast<double>(v.size());
        };
        los.value_treatment = mean(los_t);
        los.value_control = mean(los_c);
        los.treatment = format_mean(*los.value_treatment);
        los.control = format_mean(*los.value_control);
        los.effect = *los.value_treatment - *los.value_control;
        los.p_value = mann_whitney_u(los_t, los_c).p;
    } else {
        los.treatment = los_t.empty() ? "n/a" : format_mean(los_t.front());
        los.control = los_c.empty() ? "n/a" : format_mean(los_c.front());
    }
    rep.rows.push_back(los);

    auto count_if = [](const std::vector<const EncounterRecord*>& v, auto pred) {
        std::size_t k = 0;
        for (const auto* r : v) k += pred(*r) ? 1 : 0;
        return k;
    };
    auto icu_any = [](const EncounterRecord& r) { return !r.icu_transfer_times.empty(); };
    auto readmit = [](const EncounterRecord& r) { return r.readmitted_within_30d; };
    auto died = [](const EncounterRecord& r) { return r.died_in_hospital; };
    rep.rows.push_back(fisher_row(kIcuEncounter, count_if(arm_t, icu_any), arm_t.size(), count_if(arm_c, icu_any),
                                  arm_c.size()));
    rep.rows.push_back(
        fisher_row(kReadmit, count_if(arm_t, readmit), arm_t.size(), count_if(arm_c, readmit), arm_c.size()));
    rep.rows.push_back(
        fisher_row(kMortality, count_if(arm_t, died), arm_t.size(), count_if(arm_c, died), arm_c.size()));
    return rep;
}

Json TrialReport::to_json() const {
    Json rows_json = Json::array();
    for (const auto& r : rows) {
        rows_json.push_back({{"label", r.label},
                             {"treatment", r.treatment},
                             {"control", r.control},
                             {"estimate_treatment", opt(r.value_treatment)},
                             {"estimate_control", opt(r.value_control)},
                             {"effect", opt(r.effect)},
                             {"p_value", opt(r.p_value)},
                             {"test_name", r.test_name.empty() ? Json() : Json(r.test_name)}});
    }
    return Json{{"schema", "smartalert-report/1"},
                {"arms",
                 {{"treatment", {{"encounters", encounters_treatment}, {"unique_patients", patients_treatment}}},
                  {"control", {{"encounters", encounters_control}, {"unique_patients", patients_control}}}}},
                {"alerts", {{"displayed", alerts_displayed}, {"silent", alerts_silent}}},
                {"events_excluded", events_excluded},
                {"relative_reduction_52h", opt(relative_reduction_52h)},
                {"rows", rows_json},
                {"warnings", warnings}};
}

std::string TrialReport::render() const {
    std::size_t width = 8;
    for (const auto& r : rows) width = std::max(width, r.label.size());
    std::ostringstream out;
    auto line = [&](const std::string& a, const std::string& b, const std::string& c, const std::string& d) {
        out << a << std::string(width - a.size() + 2, ' ');
        out << b << std::string(b.size() < 18 ? 18 - b.size() : 1, ' ');
        out << c << std::string(c.size() < 18 ? 18 - c.size() : 1, ' ');
        out << d << "\n";
    };
    line("Feature", "Treatment", "Control", "P-values");
    for (const auto& r : rows) line(r.label, r.treatment, r.control, r.test_name.empty() ? "" : format_p(r.p_value));
    if (relative_reduction_52h) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "Relative reduction in CBC results within 52 hrs: %.1f%%\n",
                      *relative_reduction_52h * 100.0);
        out << buf;
    }
    for (const auto& w : warnings) out << "warning: " << w << "\n";
    return out.str();
}

} // namespace smartalert
