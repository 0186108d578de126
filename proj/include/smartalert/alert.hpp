#pragma once

#include "smartalert/fhir.hpp"
#include "smartalert/predictor.hpp"

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace smartalert {

struct OrderAttempt {
    std::string encounter_id;
    StandingOrder order;
    Timestamp attempted_at{};
    std::string clinician_id;
};

enum class GateReason {
    prob_at_or_below_threshold,
    outside_display_hours,
    no_prediction,
    stale_prediction,
    recent_procedure,
    recent_transfusion,
    on_iv_heparin,
    excluded_population,
    not_daily_frequency,
    snoozed,
    gate_error,
};

std::string_view to_string(GateReason r);
GateReason parse_gate_reason(std::string_view s);

struct AlertConfig {
    int display_start_minute = 7 * 60;
    int display_end_minute = 18 * 60; // exclusive
    double probability_threshold = 0.90; // strict
    Seconds max_staleness = hours(8);
    Seconds exclusion_window = hours(48);
    std::set<std::string> heparin_codes{"heparin"};
    std::set<std::string> iv_routes{"IV", "intravenous"};
    std::set<std::string> excluded_services{"BMT", "HEME"};
    // One trigger per encounter per window; zero disables.
    Seconds snooze = hours(24);
    std::string info_link = "/docs/cbc-stability";
    std::vector<std::string> acknowledge_reasons{
        "Medical Necessity (TPN, diuresis)", "Active bleeding or transfusion planned",
        "Recent or planned procedure", "Patient is clinically unstable", "Other"};
    HospitalZone zone{kDefaultZoneRule};

    Json to_json() const;
    static AlertConfig from_json(const Json& j);
};

struct GateDecision {
    bool show = false;
    std::vector<GateReason> reasons;
    std::optional<StabilityPrediction> prediction_used;
    std::optional<double> staleness_hours;

    bool has(GateReason r) const;
    Json to_json() const;
    static GateDecision from_json(const Json& j);
    friend bool operator==(const GateDecision&, const GateDecision&) = default;
};

/// Every clause is checked and every failed one is reported. `prediction` is
/// the latest stored prediction at the attempt time, if any. `last_trigger`
/// is the encounter's most recent gate pass in either arm. Never throws: an
/// internal failure yields show = false with gate_error.
GateDecision evaluate_gate(const OrderAttempt& attempt, const PatientSnapshot& snapshot,
                           const std::optional<StabilityPrediction>& prediction, const AlertConfig& config,
                           std::optional<Timestamp> last_trigger = std::nullopt);

struct ResultCell {
    double value = 0.0;
    Timestamp observed_at{};
    bool abnormal = false;
    // "L", "H" or empty.
    std::string flag;
};

struct ComponentRow {
    LabComponent component = LabComponent::WBC;
    std::string display_name;
    std::string unit;
    double ref_low = 0.0;
    double ref_high = 0.0;
    std::vector<ResultCell> cells; // newest first, at most 3
};

struct AlertPayload {
    double panel_probability = 0.0;
    std::string probability_statement;
    std::vector<ComponentRow> rows;
    std::string info_link;
    std::vector<std::string> options;
    std::vector<std::string> acknowledge_reasons;
    std::string model_version;

    Json to_json() const;
};

inline constexpr std::array<std::string_view, 4> kAlertOptions{"acknowledge_continue", "discontinue",
                                                               "every_other_day", "weekly"};

AlertPayload build_payload(const PatientSnapshot& snapshot, const StabilityPrediction& prediction,
                           const ThresholdRegistry& registry, const AlertConfig& config,
                           std::span<const LabComponent> panel = kCbcPanel);

enum class AlertAction {
    acknowledged_continue,
    discontinued,
    reduced_every_other_day,
    reduced_weekly,
    cancelled_dialog,
};

std::string_view to_string(AlertAction a);
/// Accepts the action names and the payload option names.
AlertAction parse_action(std::string_view s);

struct AlertOutcome {
    std::string alert_event_id;
    AlertAction action = AlertAction::acknowledged_continue;
    std::optional<std::string> acknowledge_reason;
    Timestamp acted_at{};

    /// Throws ValidationError when an acknowledgement lacks a reason.
    void validate() const;
    Json to_json() const;
    static AlertOutcome from_json(const Json& j);
    friend bool operator==(const AlertOutcome&, const AlertOutcome&) = default;
};

struct ActionResult {
    StandingOrder original;
    std::optional<StandingOrder> replacement;
    Json to_json() const;
};

/// Applies a clinician action to the current state of `order_id` on the
/// gateway. Discontinue ends the order; a reduction ends it and creates a
/// replacement at the reduced frequency; acknowledge and cancel leave it
/// unchanged. Serialized per order id. Throws ConflictError when the order is
/// not active, ValidationError on a missing acknowledge reason.
ActionResult apply_action(const AlertOutcome& outcome, const std::string& order_id, FhirSource& gateway);

} // namespace smartalert
