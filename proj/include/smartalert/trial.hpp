#pragma once

#include "smartalert/alert.hpp"

#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace smartalert {

enum class Arm { treatment = 1, control = 2 };

std::string_view to_string(Arm a);
Arm parse_arm(std::string_view s);

struct ArmAssignment {
    std::string encounter_id;
    Arm arm = Arm::treatment;
    Timestamp assigned_at{};
    bool eligible = true;

    Json to_json() const;
    static ArmAssignment from_json(const Json& j);
    friend bool operator==(const ArmAssignment&, const ArmAssignment&) = default;
};

/// Fair coin keyed on (seed, encounter id): independent of call order.
Arm draw_arm(std::uint64_t seed, const std::string& encounter_id);

/// Create-if-absent arm store, optionally persisted as JSON lines.
class ArmRegistry {
public:
    explicit ArmRegistry(std::uint64_t seed, std::optional<std::filesystem::path> path = std::nullopt);

    /// The first call draws and persists; later calls return the stored
    /// assignment unchanged. Throws TransportError if persisting fails, in
    /// which case nothing is recorded.
    ArmAssignment assign(const std::string& encounter_id, Timestamp at, bool eligible = true);
    std::optional<ArmAssignment> find(const std::string& encounter_id) const;
    std::vector<ArmAssignment> all() const;
    std::size_t size() const;
    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::optional<std::filesystem::path> path_;
    mutable std::shared_mutex mu_;
    std::map<std::string, ArmAssignment> assignments_;
};

struct AlertEvent {
    std::string event_id;
    std::string encounter_id;
    Arm arm = Arm::treatment;
    Timestamp triggered_at{};
    bool displayed = false;
    GateDecision gate;
    std::optional<AlertOutcome> outcome;
    std::string order_id;
    std::string clinician_id;

    /// Gate passed (displayed or silent).
    bool triggered() const { return gate.show; }
    Json to_json() const;
    static AlertEvent from_json(const Json& j);
    friend bool operator==(const AlertEvent&, const AlertEvent&) = default;
};

/// Append-only alert log. Outcomes are appended as their own entries and
/// merged into the event view.
class EventLog {
public:
    explicit EventLog(std::optional<std::filesystem::path> path = std::nullopt);
    ~EventLog();
    EventLog(const EventLog&) = delete;
    EventLog& operator=(const EventLog&) = delete;

    /// Treatment + show displays; control + show is logged silently;
    /// suppressed attempts are logged with their reasons.
    AlertEvent record_alert(const OrderAttempt& attempt, const GateDecision& gate, Arm arm);
    /// Throws NotFound for an unknown event, ConflictError if the event was
    /// not displayed or already has an outcome.
    void record_outcome(const AlertOutcome& outcome);

    std::optional<AlertEvent> find(const std::string& event_id) const;
    std::vector<AlertEvent> events() const;
    /// Latest gate pass for an encounter at or before `at`.
    std::optional<Timestamp> last_trigger(const std::string& encounter_id, Timestamp at) const;
    std::size_t size() const;

private:
    void persist(const Json& entry);

    mutable std::shared_mutex mu_;
    std::vector<AlertEvent> events_;
    std::map<std::string, std::size_t> by_id_;
    std::map<std::string, std::vector<Timestamp>> triggers_;
    std::uint64_t next_id_ = 1;
    std::FILE* file_ = nullptr;
};

/// Newline-delimited export: a header line
///   {"schema":"smartalert-events/1","window":{...},"count":n}
/// then one event per line ordered by triggered_at, then event_id.
std::string export_events(std::span<const AlertEvent> events, std::optional<Timestamp> from = std::nullopt,
                          std::optional<Timestamp> to = std::nullopt);
std::vector<AlertEvent> import_events(std::string_view text);

struct EncounterRecord {
    std::string encounter_id;
    std::string patient_id;
    Arm arm = Arm::treatment;
    bool eligible = true;
    Timestamp admitted_at{};
    std::optional<Timestamp> discharged_at;
    bool icu_on_admission = false;
    std::vector<Timestamp> icu_transfer_times;
    bool died_in_hospital = false;
    bool readmitted_within_30d = false;
    Demographics demographics;
    // Panel draw times during the stay.
    std::vector<Timestamp> cbc_draws;

    /// Throws ValidationError when discharge does not follow admission.
    void validate() const;
    std::optional<double> length_of_stay_hours() const;
    Json to_json() const;
    static EncounterRecord from_json(const Json& j);
    friend bool operator==(const EncounterRecord&, const EncounterRecord&) = default;
};

/// Header `{"schema":"smartalert-encounters/1","count":n}` then one record
/// per line ordered by encounter id.
std::string export_encounters(std::span<const EncounterRecord> records);
std::vector<EncounterRecord> import_encounters(std::string_view text);

/// Distinct panel draw instants in a series (any panel component resulted).
std::vector<Timestamp> panel_draw_times(const LabSeries& labs, std::span<const LabComponent> panel = kCbcPanel);

} // namespace smartalert
