#pragma once

#include "smartalert/alert.hpp"
#include "smartalert/analytics.hpp"
#include "smartalert/pipeline.hpp"
#include "smartalert/trial.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace smartalert {

/// Independent RNG stream seed for a (seed, key) pair.
std::uint64_t stream_seed(std::uint64_t seed, std::string_view key);

/// Mean-reverting lab trajectory with Poisson-timed shocks. Steps without a
/// shock are kept inside the component's acceptable delta band.
struct TrajectoryParams {
    double baseline_mean = 0.0;
    double baseline_sd = 0.0;
    double reversion_per_day = 0.5;
    double noise_sd = 0.0;
    double shock_rate_per_day = 0.0;
    double shock_mean = 0.0;
    double shock_sd = 0.0;
    // Reporting resolution (0.1 g/dL, 1 K/uL, ...).
    double resolution = 0.1;

    Json to_json() const;
    static TrajectoryParams from_json(const Json& j);
};

struct BehaviorConfig {
    double renewal_probability = 0.9;
    double reorder_probability = 0.25;
    // Per displayed alert; acknowledge-and-continue takes the remainder.
    double p_discontinue = 0.0;
    double p_every_other_day = 0.0;
    double p_weekly = 0.0;
    double p_cancel_dialog = 0.0;
    // Share of renewal attempts placed outside the day shift.
    double off_hours_fraction = 0.1;
    int draw_minute = 5 * 60;
    double draw_jitter_minutes = 20.0;
    Seconds order_duration = hours(72);

    double p_acknowledge() const { return 1.0 - p_discontinue - p_every_other_day - p_weekly - p_cancel_dialog; }
    Json to_json() const;
    static BehaviorConfig from_json(const Json& j);
};

struct CohortConfig {
    std::size_t n_encounters = 500;
    Timestamp start = make_utc(2024, 8, 15, 7, 0, 0);
    int duration_days = 60;
    // Admissions arrive uniformly over this leading share of the run.
    double admission_window_fraction = 0.9;
    double los_median_hours = 100.0;
    double los_log_sd = 0.55;
    std::map<LabComponent, TrajectoryParams> trajectories;
    // Per-encounter multiplier on noise and shock rate (log-normal sd).
    double volatility_log_sd = 0.6;
    double procedure_rate_per_day = 0.04;
    double transfusion_rate_per_day = 0.03;
    // Shock rate multiplier within 48 h of a procedure or transfusion.
    double exposure_shock_multiplier = 5.0;
    double heparin_fraction = 0.05;
    double excluded_fraction = 0.06;
    double icu_on_admission_probability = 0.01;
    double icu_transfer_rate_per_day = 0.0015;
    double mortality_probability = 0.006;
    double readmission_probability = 0.12;
    double repeat_patient_fraction = 0.08;
    BehaviorConfig behavior;
    std::string time_zone = kDefaultZoneRule;
    std::uint64_t seed = 1;
    std::uint64_t trial_seed = 0; // 0: derived from seed
    std::uint64_t training_seed = 1001;
    std::uint64_t validation_seed = 2002;
    std::size_t training_encounters = 600;
    std::size_t validation_encounters = 400;

    /// Default trajectories for the CBC panel.
    static CohortConfig defaults();
    /// Throws ValidationError.
    void validate() const;
    Json to_json() const;
    static CohortConfig from_json(const Json& j);
    static CohortConfig load(const std::filesystem::path& path);
};

/// Static description of one simulated stay.
struct EncounterPlan {
    std::string encounter_id;
    std::string patient_id;
    Demographics demographics;
    Timestamp birth{};
    Timestamp admitted_at{};
    std::optional<Timestamp> discharged_at; // absent when past the run end
    std::string unit;
    std::string service;
    bool excluded_population = false;
    double volatility = 1.0;
    std::map<LabComponent, double> baseline;
    std::vector<Timestamp> procedures;
    std::vector<Timestamp> transfusions;
    std::optional<Timestamp> heparin_start;
    bool icu_on_admission = false;
    std::vector<Timestamp> icu_transfers;
    bool died = false;
    bool readmitted = false;

    bool admitted_at_time(Timestamp t) const { return admitted_at <= t && (!discharged_at || t < *discharged_at); }
};

/// Per-encounter lab generator. Draws must be requested in time order.
class LabProcess {
public:
    LabProcess(const EncounterPlan& plan, const CohortConfig& config, const ThresholdRegistry& registry,
               std::uint64_t seed);
    std::vector<LabResult> draw(Timestamp t);

private:
    const EncounterPlan* plan_;
    const CohortConfig* config_;
    const ThresholdRegistry* registry_;
    std::mt19937_64 rng_;
    std::map<LabComponent, double> value_;
    std::optional<Timestamp> last_;
};

std::vector<EncounterPlan> make_plans(const CohortConfig& config, std::uint64_t seed, std::size_t n);

/// Static FHIR resources (patient, encounter, procedures, medications) of a plan.
std::vector<Json> plan_resources(const EncounterPlan& plan);
std::vector<Json> lab_resources(const std::string& encounter_id, std::span<const LabResult> results,
                                const LabCodeMap& codes, const ThresholdRegistry& registry);

struct GeneratedCohort {
    std::vector<EncounterPlan> plans;
    // Natural history: a daily standing order through each stay.
    std::map<std::string, LabSeries> labs;
    Json dataset;
};

/// Deterministic in the seed. Throws ValidationError on an infeasible config.
GeneratedCohort generate_cohort(const CohortConfig& config, std::uint64_t seed, std::size_t n);
GeneratedCohort generate_cohort(const CohortConfig& config);

/// Labeled rows from a natural-history cohort: for each consecutive pair of
/// draws, features at a uniformly drawn instant between them and the label
/// of the pair.
std::vector<TrainingRow> training_rows(const CohortConfig& config, std::uint64_t seed, std::size_t n,
                                       const FeatureConfig& features = {});

struct TrainedModel {
    ModelArtifact artifact;
    std::size_t training_rows = 0;
    std::size_t validation_rows = 0;
};

/// Trains on the training cohort and calibrates on the validation cohort.
TrainedModel train_reference_model(const CohortConfig& config, double target_ppv = 0.90);

struct PilotResult {
    std::vector<AlertEvent> events;
    std::vector<EncounterRecord> encounters;
    std::vector<StandingOrder> orders;
    std::vector<ScheduleTick> ticks;
    std::vector<StabilityPrediction> predictions;
    std::map<std::string, LabSeries> labs;
    std::size_t order_attempts = 0;
    std::size_t draws_after_discontinue = 0;
    std::string event_log_hash;
};

/// Runs the pilot under a simulated clock: 6-hourly prediction ticks,
/// daily draws and renewal attempts, gating, arm-dependent display, the
/// behavior model and the resulting order changes.
PilotResult run_pilot(const CohortConfig& config, const ModelArtifact& artifact, const AlertConfig& alert = {},
                      const ThresholdRegistry& registry = ThresholdRegistry::defaults());

/// Synthetic prediction log plus realized results with a known positive-call
/// precision per component.
struct SilentEvalSpec {
    std::map<LabComponent, double> target_ppv;
    std::map<LabComponent, double> thresholds;
    std::size_t encounters = 3000;
    double positive_share = 0.6;
    double negative_stable_rate = 0.4;
    Timestamp start = make_utc(2024, 3, 1);
    std::uint64_t seed = 7;
};

struct SilentEvalCohort {
    std::vector<StabilityPrediction> log;
    std::map<std::string, LabSeries> realized;
    // Share of positive calls the generator made stable.
    std::map<LabComponent, double> generator_ppv;
    Timestamp from{}, to{};
};

SilentEvalCohort make_silent_eval_cohort(const SilentEvalSpec& spec,
                                         const ThresholdRegistry& registry = ThresholdRegistry::defaults());

} // namespace smartalert
