#include "smartalert/errors.hpp"
#include "smartalert/logistic.hpp"
#include "smartalert/predictor.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace smartalert {

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

std::string pct(const std::optional<double>& v) {
    if (!v) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", *v * 100.0);
    return buf;
}

} // namespace

ThresholdChoice calibrate_threshold(std::span<const ScoredLabel> scored, double target_ppv) {
    if (scored.empty()) {
        throw ContractError("calibration needs a non-empty validation set");
    }
    std::vector<ScoredLabel> sorted(scored.begin(), scored.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score < b.score; });

    std::size_t total_pos = 0;
    for (const auto& s : sorted) total_pos += s.stable ? 1 : 0;
    const std::size_t total_neg = sorted.size() - total_pos;

    // Walk candidate cut-points from the lowest upward. Before the cut at
    // index i every score at or above sorted[i] counts as a positive call.
    std::size_t below_pos = 0, below_neg = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        const double lo = sorted[i].score;
        const double tau = i == 0 ? lo / 2.0 : (sorted[i - 1].score + lo) / 2.0;
        const std::size_t tp = total_pos - below_pos;
        const std::size_t fp = total_neg - below_neg;
        // A zero lowest score gives a cut that calls nothing extra; skip it.
        const bool degenerate = i == 0 && lo <= 0.0;
        if (!degenerate && tp + fp > 0 && static_cast<double>(tp) >= target_ppv * static_cast<double>(tp + fp)) {
            ThresholdChoice c;
            c.threshold = tau;
            c.unattainable = false;
            c.tp = tp;
            c.fp = fp;
            c.fn = below_pos;
            c.tn = below_neg;
            c.ppv = ratio(tp, tp + fp);
            c.recall = total_pos ? static_cast<double>(tp) / static_cast<double>(total_pos) : 0.0;
            return c;
        }
        while (i < sorted.size() && sorted[i].score == lo) {
            (sorted[i].stable ? below_pos : below_neg) += 1;
            ++i;
        }
    }
    ThresholdChoice none;
    none.fn = total_pos;
    none.tn = total_neg;
    return none;
}

ModelArtifact calibrate(ModelArtifact artifact, std::span<const TrainingRow> validation, double target_ppv) {
    if (validation.empty()) {
        throw ContractError("calibration needs a non-empty validation set");
    }
    for (auto& [c, m] : artifact.components) {
        m.threshold = 1.0;
        m.threshold_unattainable = true;
        m.validation_ppv.reset();
        m.validation_recall.reset();
        if (!m.trainable) continue;
        std::vector<ScoredLabel> scored;
        for (const auto& row : validation) {
            if (row.component != c || !row.features.predictable(c)) continue;
            if (!(row.features.layout == artifact.layout)) {
                throw ContractError("validation rows disagree with the artifact feature layout");
            }
            const auto x = design_row(m, row.features);
            double z = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) z += x[j] * m.coefficients[j];
            scored.push_back({logistic::sigmoid(z), row.stable});
        }
        if (scored.empty()) continue;
        const auto choice = calibrate_threshold(scored, target_ppv);
        m.threshold = choice.threshold;
        m.threshold_unattainable = choice.unattainable;
        m.validation_ppv = choice.ppv;
        m.validation_recall = choice.recall;
    }
    artifact.rehash();
    return artifact;
}

Json EvalReport::to_json() const {
    Json comps = Json::object();
    for (const auto& [c, e] : components) {
        comps[std::string(to_string(c))] = {{"tp", e.tp},
                                            {"fp", e.fp},
                                            {"fn", e.fn},
                                            {"tn", e.tn},
                                            {"censored", e.censored},
                                            {"ppv", e.ppv ? Json(*e.ppv) : Json()},
                                            {"ppv_undefined", !e.ppv.has_value()},
                                            {"recall", e.recall ? Json(*e.recall) : Json()}};
    }
    return Json{{"window", {{"start", format_rfc3339(window_start)}, {"end", format_rfc3339(window_end)}}},
                {"mode", mode == EvalMode::retrospective ? "retrospective" : "silent_prospective"},
                {"predictions", predictions},
                {"components", comps}};
}

std::string EvalReport::render() const {
    std::ostringstream out;
    out << (mode == EvalMode::retrospective ? "Retrospective" : "Silent prospective") << " evaluation "
        << format_rfc3339(window_start) << " .. " << format_rfc3339(window_end) << "\n";
    out << "predictions: " << predictions << "\n";
    char line[160];
    std::snprintf(line, sizeof line, "%-6s %6s %6s %6s %6s %9s %10s %10s\n", "comp", "TP", "FP", "FN", "TN",
                  "censored", "PPV", "recall");
    out << line;
    for (const auto& [c, e] : components) {
        std::snprintf(line, sizeof line, "%-6s %6zu %6zu %6zu %6zu %9zu %10s %10s\n",
                      std::string(to_string(c)).c_str(), e.tp, e.fp, e.fn, e.tn, e.censored, pct(e.ppv).c_str(),
                      pct(e.recall).c_str());
        out << line;
    }
    return out.str();
}

EvalReport silent_eval(std::span<const StabilityPrediction> log, const std::map<std::string, LabSeries>& realized,
                       const ThresholdRegistry& registry, const std::map<LabComponent, double>& decision_thresholds,
                       Timestamp from, Timestamp to, EvalMode mode) {
    EvalReport report;
    report.window_start = from;
    report.window_end = to;
    report.mode = mode;
    for (const auto& [c, tau] : decision_thresholds) report.components[c];

    std::map<std::pair<std::string, LabComponent>, std::vector<LabResult>> cache;
    auto results_for = [&](const std::string& enc, LabComponent c) -> const std::vector<LabResult>* {
        auto key = std::make_pair(enc, c);
        auto it = cache.find(key);
        if (it == cache.end()) {
            auto series = realized.find(enc);
            if (series == realized.end()) return nullptr;
            it = cache.emplace(key, series->second.for_component(c)).first;
        }
        return &it->second;
    };

    for (const auto& p : log) {
        if (p.computed_at < from || p.computed_at >= to) continue;
        ++report.predictions;
        for (const auto& [c, tau] : decision_thresholds) {
            auto pc = p.component_probability.find(c);
            if (pc == p.component_probability.end() || !pc->second) continue;
            auto& e = report.components[c];
            const auto* results = results_for(p.encounter_id, c);
            if (!results) {
                ++e.censored;
                continue;
            }
            auto next = std::upper_bound(results->begin(), results->end(), p.computed_at,
                                         [](Timestamp t, const LabResult& r) { return t < r.observed_at; });
            if (next == results->end() || next == results->begin()) {
                ++e.censored;
                continue;
            }
            const LabResult& prev = *(next - 1);
            const bool stable = label_stability(prev, *next, registry.thresholds(c)).stable;
            const bool call = *pc->second > tau;
            if (call) (stable ? e.tp : e.fp) += 1;
            else (stable ? e.fn : e.tn) += 1;
        }
    }
    for (auto& [c, e] : report.components) {
        e.ppv = ratio(e.tp, e.tp + e.fp);
        e.recall = ratio(e.tp, e.tp + e.fn);
    }
    return report;
}

} // namespace smartalert
