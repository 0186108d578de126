#pragma once

#include "smartalert/domain.hpp"
#include "smartalert/fhir.hpp"
#include "smartalert/json_io.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace smartalert {

// ---------------------------------------------------------------------------
// Features

enum class GlobalFeature {
    hours_since_admission,
    recent_transfusion,
    recent_procedure,
    active_anticoagulant,
    age_years,
    sex_female,
};
inline constexpr std::size_t kGlobalFeatureCount = 6;

/// Fixed feature ordering. For each panel component, in panel order:
///   value_1 (newest) .. value_k, last_delta, hours_since_last
/// followed by the global block in GlobalFeature order.
struct FeatureLayout {
    std::size_t history_depth = 3;
    std::vector<LabComponent> panel{kCbcPanel.begin(), kCbcPanel.end()};

    std::size_t per_component() const { return history_depth + 2; }
    std::size_t size() const { return panel.size() * per_component() + kGlobalFeatureCount; }
    std::vector<std::string> names() const;

    std::size_t component_offset(LabComponent c) const;
    std::size_t value_index(LabComponent c, std::size_t k) const { return component_offset(c) + k; }
    std::size_t delta_index(LabComponent c) const { return component_offset(c) + history_depth; }
    std::size_t hours_since_last_index(LabComponent c) const { return component_offset(c) + history_depth + 1; }
    std::size_t global_index(GlobalFeature g) const {
        return panel.size() * per_component() + static_cast<std::size_t>(g);
    }

    /// Recovers a layout from feature names. Throws ParseError.
    static FeatureLayout from_names(std::span<const std::string> names);

    friend bool operator==(const FeatureLayout&, const FeatureLayout&) = default;
};

struct FeatureConfig {
    FeatureLayout layout;
    Seconds recent_window = hours(48);
    std::set<std::string> anticoagulant_codes{"heparin", "enoxaparin", "warfarin", "apixaban", "rivaroxaban"};
};

/// Missing entries are std::nullopt, never zero-filled.
struct FeatureVector {
    FeatureLayout layout;
    std::vector<std::optional<double>> slots;
    std::vector<LabComponent> not_predictable;

    bool predictable(LabComponent c) const;
    std::optional<double> at(std::size_t i) const { return slots.at(i); }
    std::optional<double> global(GlobalFeature g) const { return slots.at(layout.global_index(g)); }

    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Deterministic and restricted to data at or before as_of. A component with
/// no prior result is marked not-predictable. Throws ContractError when the
/// snapshot was taken at a different instant.
FeatureVector extract_features(const PatientSnapshot& snapshot, Timestamp as_of, const FeatureConfig& config = {});

// ---------------------------------------------------------------------------
// Model artifact

struct ComponentModel {
    LabComponent component = LabComponent::WBC;
    bool trainable = false;
    std::string untrainable_reason;
    std::vector<double> coefficients;
    double value_center = 0.0;
    double value_scale = 1.0;
    double delta_scale = 1.0;
    std::size_t training_rows = 0;
    std::size_t training_positives = 0;
    double threshold = 1.0;
    bool threshold_unattainable = true;
    std::optional<double> validation_ppv;
    std::optional<double> validation_recall;
};

/// Column names of the per-component design row.
const std::vector<std::string>& design_names();

/// Per-component design row: intercept, standardized value and its square,
/// standardized delta and its square, delta-missing indicator, hours since
/// last result, exclusion flags, age and sex with a sex-missing indicator.
std::vector<double> design_row(const ComponentModel& model, const FeatureVector& features);

struct ModelArtifact {
    std::string model_version;
    FeatureLayout layout;
    std::map<LabComponent, ComponentModel> components;
    std::string dataset_hash;
    std::string trained_at;
    double l2 = 0.0;
    std::string content_hash;

    Json to_json() const;
    static ModelArtifact from_json(const Json& doc);
    static ModelArtifact load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    /// Hash over everything except `content_hash` and `trained_at`.
    std::string compute_hash() const;
    void rehash() { content_hash = compute_hash(); }
    std::map<LabComponent, double> thresholds() const;
};

/// "lr.<n>" numbering; returns "lr.1" for an empty previous version.
std::string next_model_version(const std::string& previous);

// ---------------------------------------------------------------------------
// Prediction

struct Prediction {
    std::map<LabComponent, std::optional<double>> probability;
    double panel_probability = 0.0;
    std::vector<LabComponent> not_predictable;
};

class Predictor {
public:
    Predictor() = default;
    explicit Predictor(std::shared_ptr<const ModelArtifact> artifact);

    bool loaded() const { return artifact_ != nullptr; }
    const ModelArtifact& artifact() const;

    /// Panel probability is the minimum over panel components and 0 when any
    /// component is not predictable. Throws ConfigError without an artifact.
    Prediction predict(const FeatureVector& features) const;

private:
    std::shared_ptr<const ModelArtifact> artifact_;
};

/// Stored per-encounter prediction (the flowsheet row).
struct StabilityPrediction {
    std::string encounter_id;
    Timestamp computed_at{};
    std::map<LabComponent, std::optional<double>> component_probability;
    double panel_probability = 0.0;
    std::string model_version;
    std::string input_snapshot_hash;

    Json to_json() const;
    static StabilityPrediction from_json(const Json& j);
    friend bool operator==(const StabilityPrediction&, const StabilityPrediction&) = default;
};

// ---------------------------------------------------------------------------
// Training

struct TrainingRow {
    LabComponent component = LabComponent::WBC;
    FeatureVector features;
    bool stable = false;
};

struct TrainOptions {
    double l2 = 1e-3;
    std::size_t min_per_class = 5;
    double tolerance = 1e-8;
    int max_iterations = 500;
    std::string previous_version;
    std::string trained_at = "1970-01-01T00:00:00Z";
};

/// Per-component L2-regularized logistic regression by Newton iterations.
/// Components below the class minimum are flagged untrainable.
ModelArtifact train(std::span<const TrainingRow> rows, const TrainOptions& options = {});

/// CSV with header `component,stable,<feature names>` and `NA` for missing.
std::vector<TrainingRow> read_training_csv(const std::filesystem::path& path);
std::string training_csv(std::span<const TrainingRow> rows);
std::string dataset_hash(std::span<const TrainingRow> rows);

// ---------------------------------------------------------------------------
// Calibration and evaluation

struct ScoredLabel {
    double score = 0.0;
    bool stable = false;
};

struct ThresholdChoice {
    double threshold = 1.0;
    bool unattainable = true;
    std::optional<double> ppv;
    double recall = 0.0;
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Smallest cut-point (midpoints between adjacent distinct sorted scores, the
/// lowest being half the minimum score) whose PPV of `score > threshold`
/// reaches the target. Unattainable gives threshold 1.0. Throws ContractError
/// on an empty set.
ThresholdChoice calibrate_threshold(std::span<const ScoredLabel> scored, double target_ppv = 0.90);

/// Scores the validation rows with the artifact and records a threshold per
/// trainable component.
ModelArtifact calibrate(ModelArtifact artifact, std::span<const TrainingRow> validation, double target_ppv = 0.90);

enum class EvalMode { retrospective, silent_prospective };

struct ComponentEval {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::size_t censored = 0;
    std::optional<double> ppv;
    std::optional<double> recall;
};

struct EvalReport {
    Timestamp window_start{};
    Timestamp window_end{};
    EvalMode mode = EvalMode::silent_prospective;
    std::size_t predictions = 0;
    std::map<LabComponent, ComponentEval> components;

    Json to_json() const;
    std::string render() const;
};

/// Each logged p_c above τ_c is a positive call. Ground truth is the label of
/// (latest result at or before computed_at, first result after it). Calls
/// without a later result are censored and counted.
EvalReport silent_eval(std::span<const StabilityPrediction> log, const std::map<std::string, LabSeries>& realized,
                       const ThresholdRegistry& registry, const std::map<LabComponent, double>& decision_thresholds,
                       Timestamp from, Timestamp to, EvalMode mode = EvalMode::silent_prospective);

} // namespace smartalert
