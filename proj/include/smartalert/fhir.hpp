#pragma once

#include "smartalert/domain.hpp"
#include "smartalert/json_io.hpp"
#include "smartalert/time.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

namespace smartalert {

// ---------------------------------------------------------------------------
// Normalized snapshot types

enum class Sex { female, male, other, unknown };
enum class Race { white, black, asian, pacific_islander, native_american, other, unknown };

std::string_view to_string(Sex s);
std::string_view to_string(Race r);
Sex parse_sex(std::string_view s);
Race parse_race(std::string_view s);

struct Demographics {
    double age_years = 0.0;
    Sex sex = Sex::unknown;
    Race race = Race::unknown;

    friend bool operator==(const Demographics&, const Demographics&) = default;
};

struct VitalSign {
    std::string code;
    double value = 0.0;
    Timestamp observed_at{};
};

struct Medication {
    std::string code;
    std::string route;
    bool active = false;
    bool therapeutic = false;
    Timestamp started_at{};
};

struct ConditionRecord {
    std::string code;
    Timestamp onset_at{};
};

struct ProcedureRecord {
    std::string code;
    Timestamp performed_at{};
};

struct TransfusionRecord {
    Timestamp performed_at{};
};

enum class OrderFrequency { daily_or_higher, every_other_day, weekly };
enum class OrderStatus { active, discontinued, modified };

std::string_view to_string(OrderFrequency f);
std::string_view to_string(OrderStatus s);
OrderFrequency parse_frequency(std::string_view s);
OrderStatus parse_order_status(std::string_view s);

/// A recurring lab order. Status only moves active -> {discontinued, modified}.
struct StandingOrder {
    std::string order_id;
    std::string encounter_id;
    std::string panel = "CBC";
    OrderFrequency frequency = OrderFrequency::daily_or_higher;
    Timestamp start_at{};
    Timestamp end_at{};
    OrderStatus status = OrderStatus::active;
    std::optional<std::string> replaces;

    bool is_active_at(Timestamp t) const {
        return status == OrderStatus::active && start_at <= t && t < end_at;
    }
    friend bool operator==(const StandingOrder&, const StandingOrder&) = default;
};

struct PatientSnapshot {
    std::string patient_id;
    std::string encounter_id;
    Timestamp as_of{};
    Demographics demographics;
    Timestamp admission_at{};
    std::optional<Timestamp> discharge_at;
    std::string unit;
    std::string service;
    LabSeries labs;
    std::vector<VitalSign> vitals;
    std::vector<Medication> medications;
    std::vector<ConditionRecord> conditions;
    std::vector<ProcedureRecord> procedures;
    std::vector<TransfusionRecord> transfusions;
    std::vector<StandingOrder> orders;
    std::size_t unmapped_observations = 0;
    std::size_t skipped_resources = 0;
};

/// Canonical JSON for a snapshot; identical stores and as_of give identical bytes.
Json snapshot_to_json(const PatientSnapshot& s);
std::string snapshot_hash(const PatientSnapshot& s);

// ---------------------------------------------------------------------------
// Resource mapping

/// Maps laboratory Observation codes (e.g. LOINC) to registry components.
class LabCodeMap {
public:
    /// Conventional LOINC codes for the CBC components plus the chemistry rows.
    static LabCodeMap defaults();
    static LabCodeMap from_json(const Json& doc);
    static LabCodeMap load(const std::filesystem::path& path);
    Json to_json() const;

    std::optional<LabComponent> lookup(std::string_view code) const;
    /// The code written for a component when generating resources.
    std::string code_for(LabComponent c) const;
    void set(std::string code, LabComponent c);

private:
    std::map<std::string, LabComponent, std::less<>> map_;
};

namespace fhir {

/// Resource kinds served by the gateway.
inline constexpr std::array<std::string_view, 7> kResourceTypes{
    "Patient", "Encounter", "Observation", "MedicationRequest", "Condition", "Procedure", "ServiceRequest"};

/// Per-encounter kinds fetched into a snapshot.
inline constexpr std::array<std::string_view, 5> kEncounterScoped{
    "Observation", "MedicationRequest", "Condition", "Procedure", "ServiceRequest"};

Json make_patient(const std::string& id, Sex sex, Race race, Timestamp birth);
Json make_encounter(const std::string& id, const std::string& patient_id, Timestamp start,
                    std::optional<Timestamp> end, const std::string& unit, const std::string& service);
Json make_lab_observation(const std::string& id, const std::string& encounter_id, const std::string& code,
                          double value, const std::string& unit, Timestamp at,
                          ResultStatus status = ResultStatus::final);
Json make_vital_observation(const std::string& id, const std::string& encounter_id, const std::string& code,
                            double value, Timestamp at);
Json make_medication_request(const std::string& id, const std::string& encounter_id, const std::string& code,
                             const std::string& route, bool therapeutic, bool active, Timestamp authored);
Json make_condition(const std::string& id, const std::string& encounter_id, const std::string& code,
                    Timestamp onset);
/// `transfusion = true` tags the Procedure with the transfusion category.
Json make_procedure(const std::string& id, const std::string& encounter_id, const std::string& code,
                    Timestamp performed, bool transfusion = false);
Json order_to_service_request(const StandingOrder& order);
StandingOrder service_request_to_order(const Json& resource);

std::optional<std::string> encounter_reference(const Json& resource);
std::optional<std::string> patient_reference(const Json& encounter);

/// Encounter.period as (start, end).
std::pair<Timestamp, std::optional<Timestamp>> encounter_period(const Json& encounter);

/// Assembles a snapshot from raw resources. Resources that fail to parse are
/// skipped, counted and logged; they never fail the snapshot.
PatientSnapshot build_snapshot(const Json& encounter, const Json& patient, const std::vector<Json>& resources,
                               Timestamp as_of, const LabCodeMap& codes);

Json make_bundle(const std::vector<Json>& resources, std::string_view type = "collection");

} // namespace fhir

// ---------------------------------------------------------------------------
// Gateway interface

/// Raw read/write access to a FHIR-shaped endpoint plus the normalized
/// operations built on top. Implementations: in-process store and HTTP client.
class FhirSource {
public:
    explicit FhirSource(LabCodeMap codes = LabCodeMap::defaults()) : codes_(std::move(codes)) {}
    virtual ~FhirSource() = default;

    // Raw access. Throw NotFound / TransportError.
    virtual Json read(std::string_view type, const std::string& id) = 0;
    virtual std::vector<Json> search_encounter(std::string_view type, const std::string& encounter_id) = 0;
    virtual std::vector<Json> all_encounters() = 0;
    virtual Json put(const Json& resource) = 0;

    /// Encounters with admission <= as_of and no discharge <= as_of.
    std::vector<std::string> list_admitted_encounters(Timestamp as_of);
    PatientSnapshot fetch_snapshot(const std::string& encounter_id, Timestamp as_of);

    StandingOrder get_order(const std::string& order_id);
    StandingOrder put_order(const StandingOrder& order);

    const LabCodeMap& codes() const { return codes_; }

private:
    LabCodeMap codes_;
};

/// Dataset-backed resource store. Single logical writer: mutations are
/// serialized, reads see a consistent state.
class FhirStore {
public:
    FhirStore() = default;

    /// Accepts `{"bundles": [Bundle...]}` or a single Bundle. Throws ParseError.
    void load_dataset(const Json& dataset);
    void load_file(const std::filesystem::path& path);
    Json to_dataset() const;

    /// Inserts or replaces by (resourceType, id).
    Json put(const Json& resource);
    std::optional<Json> get(std::string_view type, const std::string& id) const;
    std::vector<Json> by_encounter(std::string_view type, const std::string& encounter_id) const;
    std::vector<Json> of_type(std::string_view type) const;
    bool has_encounter(const std::string& id) const;
    std::size_t size() const;

private:
    using Key = std::pair<std::string, std::string>;
    void put_locked(const Json& resource);

    mutable std::shared_mutex mu_;
    std::map<Key, Json> resources_;
    std::map<std::string, std::vector<Key>> by_encounter_;
};

class LocalFhirSource : public FhirSource {
public:
    explicit LocalFhirSource(FhirStore& store, LabCodeMap codes = LabCodeMap::defaults())
        : FhirSource(std::move(codes)), store_(store) {}

    Json read(std::string_view type, const std::string& id) override;
    std::vector<Json> search_encounter(std::string_view type, const std::string& encounter_id) override;
    std::vector<Json> all_encounters() override;
    Json put(const Json& resource) override;

private:
    FhirStore& store_;
};

/// Serves a FhirStore over HTTP:
///   GET  /fhir/metadata
///   GET  /fhir/{type}/{id}
///   GET  /fhir/{type}?encounter={id}[&_elements=id]
///   GET  /fhir/Encounter
///   PUT  /fhir/{type}/{id}
///   POST /fhir/{type}
/// Every request is delayed by the configured latency.
class FixtureServer {
public:
    explicit FixtureServer(FhirStore& store, std::chrono::milliseconds latency = {});
    ~FixtureServer();
    FixtureServer(const FixtureServer&) = delete;
    FixtureServer& operator=(const FixtureServer&) = delete;

    /// Binds and serves on a background thread. Port 0 picks a free port.
    /// Throws TransportError on bind failure.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    void stop();
    std::string base_url() const;
    std::uint64_t requests_served() const { return requests_.load(); }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::atomic<std::uint64_t> requests_{0};
};

/// HTTP client for a FixtureServer-compatible endpoint.
class HttpFhirClient : public FhirSource {
public:
    enum class FetchMode {
        search,      // one searchset request per resource kind
        per_resource // id-only search, then one read per resource
    };

    HttpFhirClient(std::string base_url, LabCodeMap codes = LabCodeMap::defaults(),
                   FetchMode mode = FetchMode::search);
    ~HttpFhirClient() override;

    Json read(std::string_view type, const std::string& id) override;
    std::vector<Json> search_encounter(std::string_view type, const std::string& encounter_id) override;
    std::vector<Json> all_encounters() override;
    Json put(const Json& resource) override;

private:
    Json get_json(const std::string& path);
    struct Impl;
    std::unique_ptr<Impl> impl_;
    FetchMode mode_;
};

} // namespace smartalert
