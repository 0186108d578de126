#include "smartalert/alert.hpp"

#include "smartalert/errors.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <functional>
#include <mutex>

namespace smartalert {

namespace {

constexpr std::array<std::string_view, 11> kReasonNames{
    "prob_at_or_below_threshold", "outside_display_hours", "no_prediction",    "stale_prediction",
    "recent_procedure",           "recent_transfusion",    "on_iv_heparin",    "excluded_population",
    "not_daily_frequency",        "snoozed",               "gate_error"};

constexpr std::array<std::string_view, 5> kActionNames{"acknowledged_continue", "discontinued",
                                                       "reduced_every_other_day", "reduced_weekly",
                                                       "cancelled_dialog"};

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

bool contains_ci(const std::set<std::string>& set, std::string_view value) {
    const std::string v = lower(value);
    return std::any_of(set.begin(), set.end(), [&](const std::string& s) { return lower(s) == v; });
}

bool within(Timestamp event, Timestamp at, Seconds window) { return event <= at && at - event <= window; }

// Striped locks so actions on one order are serialized.
std::mutex& order_lock(const std::string& order_id) {
    static std::array<std::mutex, 64> stripes;
    return stripes[std::hash<std::string>{}(order_id) % stripes.size()];
}

std::string replacement_id(FhirSource& gateway, const std::string& original, std::string_view suffix) {
    std::string base = original + std::string(suffix);
    std::string id = base;
    for (int n = 2;; ++n) {
        try {
            gateway.read("ServiceRequest", id);
        } catch (const NotFound&) {
            return id;
        }
        id = base + "." + std::to_string(n);
    }
}

} // namespace

std::string_view to_string(GateReason r) { return kReasonNames.at(static_cast<std::size_t>(r)); }

GateReason parse_gate_reason(std::string_view s) {
    for (std::size_t i = 0; i < kReasonNames.size(); ++i) {
        if (kReasonNames[i] == s) return static_cast<GateReason>(i);
    }
    throw ParseError("unknown gate reason '" + std::string(s) + "'");
}

std::string_view to_string(AlertAction a) { return kActionNames.at(static_cast<std::size_t>(a)); }

AlertAction parse_action(std::string_view s) {
    for (std::size_t i = 0; i < kActionNames.size(); ++i) {
        if (kActionNames[i] == s) return static_cast<AlertAction>(i);
    }
    if (s == "acknowledge_continue" || s == "acknowledge") return AlertAction::acknowledged_continue;
    if (s == "discontinue") return AlertAction::discontinued;
    if (s == "every_other_day") return AlertAction::reduced_every_other_day;
    if (s == "weekly") return AlertAction::reduced_weekly;
    if (s == "cancel" || s == "cancel_dialog") return AlertAction::cancelled_dialog;
    throw ValidationError("unknown alert action '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Config

Json AlertConfig::to_json() const {
    auto hhmm = [](int m) {
        const auto two = [](int v) { return (v < 10 ? "0" : "") + std::to_string(v); };
        return two(m / 60) + ":" + two(m % 60);
    };
    return Json{{"display_window", {{"start", hhmm(display_start_minute)}, {"end", hhmm(display_end_minute)}}},
                {"probability_threshold", probability_threshold},
                {"max_staleness_hours", static_cast<double>(max_staleness.count()) / 3600.0},
                {"exclusion_window_hours", static_cast<double>(exclusion_window.count()) / 3600.0},
                {"heparin_codes", heparin_codes},
                {"iv_routes", iv_routes},
                {"excluded_services", excluded_services},
                {"snooze_hours", static_cast<double>(snooze.count()) / 3600.0},
                {"info_link", info_link},
                {"acknowledge_reasons", acknowledge_reasons},
                {"time_zone", zone.rule()}};
}

AlertConfig AlertConfig::from_json(const Json& j) {
    AlertConfig c;
    auto minute = [](const std::string& s) {
        if (s.size() != 5 || s[2] != ':') throw ConfigError("display window times must be HH:MM, got '" + s + "'");
        const int h = std::stoi(s.substr(0, 2));
        const int m = std::stoi(s.substr(3, 2));
        if (h < 0 || h > 24 || m < 0 || m > 59 || h * 60 + m > 1440) throw ConfigError("bad time '" + s + "'");
        return h * 60 + m;
    };
    auto secs = [](double h) { return Seconds{static_cast<std::int64_t>(h * 3600.0)}; };
    try {
        if (auto w = j.find("display_window"); w != j.end()) {
            c.display_start_minute = minute(w->value("start", "07:00"));
            c.display_end_minute = minute(w->value("end", "18:00"));
        }
        c.probability_threshold = j.value("probability_threshold", c.probability_threshold);
        if (j.contains("max_staleness_hours")) c.max_staleness = secs(j.at("max_staleness_hours").get<double>());
        if (j.contains("exclusion_window_hours"))
            c.exclusion_window = secs(j.at("exclusion_window_hours").get<double>());
        if (j.contains("heparin_codes")) c.heparin_codes = j.at("heparin_codes").get<std::set<std::string>>();
        if (j.contains("iv_routes")) c.iv_routes = j.at("iv_routes").get<std::set<std::string>>();
        if (j.contains("excluded_services"))
            c.excluded_services = j.at("excluded_services").get<std::set<std::string>>();
        if (j.contains("snooze_hours")) c.snooze = secs(j.at("snooze_hours").get<double>());
        c.info_link = j.value("info_link", c.info_link);
        if (j.contains("acknowledge_reasons"))
            c.acknowledge_reasons = j.at("acknowledge_reasons").get<std::vector<std::string>>();
        if (j.contains("time_zone")) c.zone = HospitalZone(j.at("time_zone").get<std::string>());
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("alert config: ") + e.what());
    }
    if (!(c.probability_threshold >= 0.0 && c.probability_threshold <= 1.0)) {
        throw ConfigError("probability_threshold must lie in [0, 1]");
    }
    if (c.display_start_minute >= c.display_end_minute) {
        throw ConfigError("display window must start before it ends");
    }
    return c;
}

// ---------------------------------------------------------------------------
// Gate

bool GateDecision::has(GateReason r) const { return std::find(reasons.begin(), reasons.end(), r) != reasons.end(); }

Json GateDecision::to_json() const {
    Json rs = Json::array();
    for (auto r : reasons) rs.push_back(std::string(to_string(r)));
    return Json{{"show", show},
                {"reasons", rs},
                {"prediction_used", prediction_used ? prediction_used->to_json() : Json()},
                {"staleness_hours", staleness_hours ? Json(*staleness_hours) : Json()}};
}

GateDecision GateDecision::from_json(const Json& j) {
    GateDecision d;
    d.show = j.at("show").get<bool>();
    for (const auto& r : j.at("reasons")) d.reasons.push_back(parse_gate_reason(r.get<std::string>()));
    if (auto p = j.find("prediction_used"); p != j.end() && !p->is_null()) {
        d.prediction_used = StabilityPrediction::from_json(*p);
    }
    if (auto s = j.find("staleness_hours"); s != j.end() && !s->is_null()) d.staleness_hours = s->get<double>();
    return d;
}

GateDecision evaluate_gate(const OrderAttempt& attempt, const PatientSnapshot& snapshot,
                           const std::optional<StabilityPrediction>& prediction, const AlertConfig& config,
                           std::optional<Timestamp> last_trigger) {
    GateDecision d;
    try {
        const Timestamp t = attempt.attempted_at;
        auto fail = [&](GateReason r) { d.reasons.push_back(r); };

        if (attempt.order.frequency != OrderFrequency::daily_or_higher) fail(GateReason::not_daily_frequency);

        const int minute = config.zone.local_minute_of_day(t);
        if (minute < config.display_start_minute || minute >= config.display_end_minute) {
            fail(GateReason::outside_display_hours);
        }

        if (!prediction || prediction->encounter_id != attempt.encounter_id || prediction->computed_at > t) {
            fail(GateReason::no_prediction);
        } else {
            d.prediction_used = prediction;
            const Seconds staleness = t - prediction->computed_at;
            d.staleness_hours = static_cast<double>(staleness.count()) / 3600.0;
            if (staleness > config.max_staleness) fail(GateReason::stale_prediction);
            if (!(prediction->panel_probability > config.probability_threshold)) {
                fail(GateReason::prob_at_or_below_threshold);
            }
        }

        if (std::any_of(snapshot.procedures.begin(), snapshot.procedures.end(),
                        [&](const auto& p) { return within(p.performed_at, t, config.exclusion_window); })) {
            fail(GateReason::recent_procedure);
        }
        if (std::any_of(snapshot.transfusions.begin(), snapshot.transfusions.end(),
                        [&](const auto& x) { return within(x.performed_at, t, config.exclusion_window); })) {
            fail(GateReason::recent_transfusion);
        }
        if (std::any_of(snapshot.medications.begin(), snapshot.medications.end(), [&](const Medication& m) {
                return m.active && m.therapeutic && m.started_at <= t && contains_ci(config.heparin_codes, m.code) &&
                       contains_ci(config.iv_routes, m.route);
            })) {
            fail(GateReason::on_iv_heparin);
        }
        if (contains_ci(config.excluded_services, snapshot.service) ||
            contains_ci(config.excluded_services, snapshot.unit)) {
            fail(GateReason::excluded_population);
        }
        if (config.snooze > Seconds{0} && last_trigger && *last_trigger <= t && t - *last_trigger < config.snooze) {
            fail(GateReason::snoozed);
        }
        d.show = d.reasons.empty();
    } catch (const std::exception& e) {
        log(LogLevel::error, std::string("gate evaluation failed closed: ") + e.what());
        d.show = false;
        d.reasons.assign({GateReason::gate_error});
    }
    return d;
}

// ---------------------------------------------------------------------------
// Payload

Json AlertPayload::to_json() const {
    Json rows_json = Json::array();
    for (const auto& r : rows) {
        Json cells = Json::array();
        for (const auto& c : r.cells) {
            cells.push_back({{"value", c.value},
                             {"observed_at", format_rfc3339(c.observed_at)},
                             {"abnormal", c.abnormal},
                             {"flag", c.flag}});
        }
        rows_json.push_back({{"component", std::string(to_string(r.component))},
                             {"display_name", r.display_name},
                             {"unit", r.unit},
                             {"ref_low", r.ref_low},
                             {"ref_high", r.ref_high},
                             {"results", cells}});
    }
    return Json{{"panel_probability", panel_probability},
                {"probability_statement", probability_statement},
                {"recent_results", rows_json},
                {"info_link", info_link},
                {"options", options},
                {"acknowledge_reasons", acknowledge_reasons},
                {"model_version", model_version}};
}

AlertPayload build_payload(const PatientSnapshot& snapshot, const StabilityPrediction& prediction,
                           const ThresholdRegistry& registry, const AlertConfig& config,
                           std::span<const LabComponent> panel) {
    AlertPayload p;
    p.panel_probability = prediction.panel_probability;
    char statement[64];
    std::snprintf(statement, sizeof statement, ">%.0f%% stability", config.probability_threshold * 100.0);
    p.probability_statement = statement;
    p.info_link = config.info_link;
    for (auto o : kAlertOptions) p.options.emplace_back(o);
    p.acknowledge_reasons = config.acknowledge_reasons;
    p.model_version = prediction.model_version;
    const LabSeries labs = snapshot.labs.until(snapshot.as_of);
    for (LabComponent c : panel) {
        ComponentRow row;
        row.component = c;
        const auto& info = registry.info(c);
        const auto& t = registry.thresholds(c);
        row.display_name = info.display_name;
        row.unit = info.unit;
        row.ref_low = t.ref_low;
        row.ref_high = t.ref_high;
        const auto results = labs.for_component(c);
        for (auto it = results.rbegin(); it != results.rend() && row.cells.size() < 3; ++it) {
            ResultCell cell;
            cell.value = it->value;
            cell.observed_at = it->observed_at;
            if (it->value < t.ref_low) cell.flag = "L";
            if (it->value > t.ref_high) cell.flag = "H";
            cell.abnormal = !cell.flag.empty();
            row.cells.push_back(cell);
        }
        p.rows.push_back(std::move(row));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Actions

void AlertOutcome::validate() const {
    if (action == AlertAction::acknowledged_continue &&
        (!acknowledge_reason || acknowledge_reason->find_first_not_of(" \t") == std::string::npos)) {
        throw ValidationError("acknowledging an alert requires a reason");
    }
}

Json AlertOutcome::to_json() const {
    return Json{{"alert_event_id", alert_event_id},
                {"action", std::string(to_string(action))},
                {"acknowledge_reason", acknowledge_reason ? Json(*acknowledge_reason) : Json()},
                {"acted_at", format_rfc3339(acted_at)}};
}

AlertOutcome AlertOutcome::from_json(const Json& j) {
    AlertOutcome o;
    o.alert_event_id = j.value("alert_event_id", "");
    o.action = parse_action(require<std::string>(j, "action", "alert outcome"));
    if (auto r = j.find("acknowledge_reason"); r != j.end() && !r->is_null()) o.acknowledge_reason = r->get<std::string>();
    o.acted_at = parse_rfc3339(require<std::string>(j, "acted_at", "alert outcome"));
    return o;
}

namespace {

Json order_summary(const StandingOrder& o) {
    return Json{{"order_id", o.order_id},
                {"encounter_id", o.encounter_id},
                {"panel", o.panel},
                {"frequency", std::string(to_string(o.frequency))},
                {"status", std::string(to_string(o.status))},
                {"start_at", format_rfc3339(o.start_at)},
                {"end_at", format_rfc3339(o.end_at)},
                {"replaces", o.replaces ? Json(*o.replaces) : Json()}};
}

} // namespace

Json ActionResult::to_json() const {
    return Json{{"original", order_summary(original)},
                {"replacement", replacement ? order_summary(*replacement) : Json()}};
}

ActionResult apply_action(const AlertOutcome& outcome, const std::string& order_id, FhirSource& gateway) {
    outcome.validate();
    std::lock_guard lock(order_lock(order_id));
    StandingOrder order = gateway.get_order(order_id);
    if (order.status != OrderStatus::active) {
        throw ConflictError("order " + order_id + " is " + std::string(to_string(order.status)));
    }
    ActionResult result;
    switch (outcome.action) {
    case AlertAction::acknowledged_continue:
    case AlertAction::cancelled_dialog:
        result.original = order;
        break;
    case AlertAction::discontinued:
        order.status = OrderStatus::discontinued;
        result.original = gateway.put_order(order);
        break;
    case AlertAction::reduced_every_other_day:
    case AlertAction::reduced_weekly: {
        const bool eod = outcome.action == AlertAction::reduced_every_other_day;
        StandingOrder replacement = order;
        replacement.order_id = replacement_id(gateway, order.order_id, eod ? ".eod" : ".wk");
        replacement.frequency = eod ? OrderFrequency::every_other_day : OrderFrequency::weekly;
        replacement.start_at = outcome.acted_at;
        replacement.end_at = std::max(order.end_at, outcome.acted_at + hours(72));
        replacement.status = OrderStatus::active;
        replacement.replaces = order.order_id;
        order.status = OrderStatus::discontinued;
        result.original = gateway.put_order(order);
        result.replacement = gateway.put_order(replacement);
        break;
    }
    }
    std::string msg = "order " + order_id + ": " + std::string(to_string(outcome.action));
    if (outcome.acknowledge_reason) msg += " (" + *outcome.acknowledge_reason + ")";
    log(LogLevel::info, msg);
    return result;
}

} // namespace smartalert
