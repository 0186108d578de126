#pragma once

#include "smartalert/trial.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace smartalert {

// ---------------------------------------------------------------------------
// Tests

double normal_cdf(double z);
/// Two-sided normal tail probability, 2 * (1 - Phi(|z|)).
double normal_two_sided(double z);

struct PoissonComparison {
    std::size_t n_treatment = 0, n_control = 0;
    std::uint64_t total_treatment = 0, total_control = 0;
    double mean_treatment = 0.0, mean_control = 0.0;
    // mean_t / mean_c; infinite when the control total is zero.
    double rate_ratio = 0.0;
    std::optional<double> z;
    // Absent when both totals are zero.
    std::optional<double> p;
    // "wald", "exact_conditional" or "undefined".
    std::string method;
};

/// Two-group Poisson rate comparison with one event of exposure per entry:
/// the rate ratio and the Wald test of its log with
/// SE = sqrt(1/sum_t + 1/sum_c). When exactly one total is zero the Wald
/// statistic does not exist and the exact conditional binomial test is used.
/// Throws ContractError on an empty list or a negative count.
PoissonComparison poisson_rate_compare(std::span<const std::int64_t> counts_t, std::span<const std::int64_t> counts_c);

/// 1 - mean_t / mean_c.
double relative_reduction(double mean_treatment, double mean_control);

struct MannWhitney {
    // Pairs with x > y, plus half of ties.
    double u = 0.0;
    double p = 1.0;
    // "exact" or "normal".
    std::string method;
    bool all_ties = false;
};

/// Exact two-sided p by enumerating every split of the pooled midranks when
/// n_x + n_y <= 12; normal approximation with tie and continuity
/// corrections otherwise. Throws ContractError on an empty sample.
MannWhitney mann_whitney_u(std::span<const double> xs, std::span<const double> ys);

struct FisherResult {
    double p = 1.0;
    bool degenerate = false;
};

/// Two-sided Fisher exact test for [[a, b], [c, d]]: the total probability
/// of tables with the same margins no more likely than the observed one.
FisherResult fisher_exact(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d);

struct Savings {
    std::int64_t tests_avoided = 0;
    double dollars = 0.0;
};

/// tests = round(annual * repetitive_fraction * relative_reduction);
/// dollars = tests * unit_charge. Throws ValidationError on bad inputs.
Savings savings(double annual_tests, double repetitive_fraction, double relative_reduction, double unit_charge);

// ---------------------------------------------------------------------------
// Outcome windows and the report

struct OutcomeWindowCounts {
    std::string event_id;
    std::string encounter_id;
    Arm arm = Arm::treatment;
    Timestamp triggered_at{};
    std::int64_t n_cbc_52h = 0;
    std::int64_t n_cbc_28h = 0;
    bool icu_transfer_52h = false;
};

struct WindowOptions {
    Seconds long_window = hours(52);
    Seconds short_window = hours(28);
};

struct WindowCounts {
    std::vector<OutcomeWindowCounts> counts;
    // Triggered events whose encounter has no lab history.
    std::size_t excluded = 0;
};

/// Counts panel draws in (t, t + window] after each triggered event.
WindowCounts compute_windows(std::span<const AlertEvent> events,
                             const std::map<std::string, std::vector<Timestamp>>& panel_draws,
                             const std::map<std::string, std::vector<Timestamp>>& icu_transfers,
                             const WindowOptions& options = {});

struct OutcomeRow {
    std::string label;
    std::string treatment;
    std::string control;
    std::optional<double> value_treatment;
    std::optional<double> value_control;
    std::optional<double> effect;
    std::optional<double> p_value;
    // "", "poisson_rate_ratio", "mann_whitney_u" or "fisher_exact".
    std::string test_name;
};

struct TrialReport {
    std::size_t encounters_treatment = 0, encounters_control = 0;
    std::size_t patients_treatment = 0, patients_control = 0;
    std::size_t alerts_displayed = 0, alerts_silent = 0;
    std::size_t events_excluded = 0;
    std::vector<OutcomeRow> rows;
    std::vector<std::string> warnings;
    std::optional<double> relative_reduction_52h;

    const OutcomeRow* row(std::string_view label) const;
    Json to_json() const;
    std::string render() const;
};

/// Row labels the rendered table always carries.
const std::vector<std::string>& report_row_labels();

/// Means to two decimals.
std::string format_mean(double v);
/// Two significant figures.
std::string format_rate(double v);
std::string format_p(const std::optional<double>& p);

TrialReport build_report(std::span<const AlertEvent> events, std::span<const EncounterRecord> encounters,
                         const WindowOptions& options = {});

} // namespace smartalert
