#include "smartalert/domain.hpp"

#include "smartalert/errors.hpp"

#include <algorithm>
#include <cmath>

namespace smartalert {

namespace {

constexpr std::array<std::string_view, 13> kCodes{"WBC", "HGB", "PLT",  "NA",  "K",     "CR",     "CA",
                                                  "MG",  "PHOS", "AST", "ALT", "TBILI", "ALKPHOS"};

} // namespace

std::string_view to_string(LabComponent c) { return kCodes[static_cast<std::size_t>(c)]; }

std::optional<LabComponent> parse_component(std::string_view code) {
    for (std::size_t i = 0; i < kCodes.size(); ++i) {
        if (kCodes[i] == code) {
            return static_cast<LabComponent>(i);
        }
    }
    return std::nullopt;
}

LabComponent require_component(std::string_view code) {
    if (auto c = parse_component(code)) {
        return *c;
    }
    throw ParseError("unknown lab component '" + std::string(code) + "'");
}

std::string_view to_string(ResultStatus s) { return s == ResultStatus::final ? "final" : "corrected"; }

ResultStatus parse_result_status(std::string_view s) {
    if (s == "final" || s == "amended") return ResultStatus::final;
    if (s == "corrected") return ResultStatus::corrected;
    throw ParseError("unsupported result status '" + std::string(s) + "'");
}

std::string_view to_string(StabilityReason r) {
    switch (r) {
    case StabilityReason::delta_below: return "delta_below";
    case StabilityReason::delta_above: return "delta_above";
    case StabilityReason::below_min: return "below_min";
    case StabilityReason::above_max: return "above_max";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// LabSeries

LabSeries::LabSeries(std::string encounter_id, std::vector<LabResult> results)
    : encounter_id_(std::move(encounter_id)) {
    std::stable_sort(results.begin(), results.end(),
                     [](const LabResult& a, const LabResult& b) { return a.observed_at < b.observed_at; });
    results_.reserve(results.size());
    for (const auto& r : results) {
        add(r);
    }
}

void LabSeries::add(const LabResult& result) {
    if (!std::isfinite(result.value) || result.value < 0.0) {
        throw ContractError("lab value must be finite and non-negative");
    }
    auto first_after = std::upper_bound(
        results_.begin(), results_.end(), result.observed_at,
        [](Timestamp t, const LabResult& r) { return t < r.observed_at; });
    for (auto it = first_after; it != results_.begin();) {
        --it;
        if (it->observed_at != result.observed_at) {
            break;
        }
        if (it->component == result.component) {
            if (it->status == ResultStatus::corrected && result.status == ResultStatus::final) {
                return;
            }
            *it = result;
            return;
        }
    }
    results_.insert(first_after, result);
}

std::vector<LabResult> LabSeries::for_component(LabComponent c) const {
    std::vector<LabResult> out;
    for (const auto& r : results_) {
        if (r.component == c) {
            out.push_back(r);
        }
    }
    return out;
}

LabSeries LabSeries::until(Timestamp as_of) const {
    LabSeries out;
    out.encounter_id_ = encounter_id_;
    for (const auto& r : results_) {
        if (r.observed_at > as_of) {
            break;
        }
        out.results_.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Thresholds and labeler

void StabilityThresholds::validate() const {
    const std::array<double, 6> values{ref_low, ref_high, acceptable_decrease, acceptable_increase,
                                       stop_min, stop_max};
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw ConfigError("thresholds for " + std::string(to_string(component)) + " are not finite");
        }
    }
    if (!(stop_min < stop_max)) {
        throw ConfigError("stop_min must be < stop_max for " + std::string(to_string(component)));
    }
    if (acceptable_decrease > 0.0 || acceptable_increase < 0.0) {
        throw ConfigError("acceptable_decrease <= 0 <= acceptable_increase violated for " +
                          std::string(to_string(component)));
    }
}

constexpr double kBoundSlack = 1e-9;

StabilityLabel label_stability(const LabResult& prev, const LabResult& next, const StabilityThresholds& t) {
    if (prev.component != next.component || prev.component != t.component) {
        throw ContractError("label_stability: component mismatch");
    }
    if (!std::isfinite(prev.value) || !std::isfinite(next.value)) {
        throw ContractError("label_stability: non-finite value");
    }
    if (!(next.observed_at > prev.observed_at)) {
        throw ContractError("label_stability: next result must follow previous result");
    }
    StabilityLabel label;
    label.component = t.component;
    label.previous_value = prev.value;
    label.next_value = next.value;
    label.delta = next.value - prev.value;
    // Decimal lab values rarely subtract exactly (9.8 - 8.0 != 1.8), so a
    // bound is met when within a few ulps of it.
    auto below = [](double v, double bound) { return v < bound - kBoundSlack * std::max(1.0, std::abs(bound)); };
    auto above = [](double v, double bound) { return v > bound + kBoundSlack * std::max(1.0, std::abs(bound)); };
    if (below(label.delta, t.acceptable_decrease)) label.reasons.push_back(StabilityReason::delta_below);
    if (above(label.delta, t.acceptable_increase)) label.reasons.push_back(StabilityReason::delta_above);
    if (below(next.value, t.stop_min)) label.reasons.push_back(StabilityReason::below_min);
    if (above(next.value, t.stop_max)) label.reasons.push_back(StabilityReason::above_max);
    label.stable = label.reasons.empty();
    return label;
}

InsufficientHistory::InsufficientHistory(LabComponent c)
    : ContractError("insufficient history for " + std::string(to_string(c)) + ": need at least 2 results"),
      component_(c) {}

PanelLabel label_panel(const LabSeries& series, std::span<const LabComponent> panel,
                       const ThresholdRegistry& registry) {
    PanelLabel out;
    out.stable = true;
    for (LabComponent c : panel) {
        const auto results = series.for_component(c);
        if (results.size() < 2) {
            throw InsufficientHistory(c);
        }
        auto label = label_stability(results[results.size() - 2], results.back(), registry.thresholds(c));
        out.stable = out.stable && label.stable;
        out.components.emplace(c, std::move(label));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Registry

ThresholdRegistry ThresholdRegistry::defaults() {
    struct Row {
        LabComponent c;
        const char* name;
        const char* unit;
        double ref_low, ref_high, decr, incr, min, max;
        std::array<double, 4> sd;
    };
    // Means (and spread) of the 18-clinician consensus survey.
    static const Row rows[] = {
        {LabComponent::WBC, "White blood cell count", "K/uL", 4, 11, -2.7, 1.8, 4.6, 11.6, {1.2, 1.0, 2.5, 1.1}},
        {LabComponent::HGB, "Hemoglobin", "g/dL", 12, 16, -0.99, 1.9, 9.5, 16.4, {0.68, 1.0, 1.6, 0.98}},
        {LabComponent::PLT, "Platelet count", "K/uL", 150, 400, -36.5, 65.6, 124.7, 496.1, {29.0, 36.8, 52.5, 152.9}},
        {LabComponent::NA, "Sodium", "mmol/L", 135, 145, -3.4, 3.7, 131.6, 146.2, {1.7, 1.7, 2.4, 1.8}},
        {LabComponent::K, "Potassium", "mmol/L", 3.5, 5.5, -0.49, 0.63, 3.4, 5.1, {0.41, 0.62, 0.29, 0.31}},
        {LabComponent::CR, "Creatinine", "mg/dL", 0.5, 1.0, -0.39, 0.28, 0.37, 2.2, {0.26, 0.11, 0.26, 2.6}},
        {LabComponent::CA, "Calcium", "mg/dL", 8.4, 10.5, -0.74, 0.85, 8.1, 10.6, {0.31, 0.31, 0.30, 0.41}},
        {LabComponent::MG, "Magnesium", "mg/dL", 1.6, 2.4, -0.43, 0.53, 1.7, 2.8, {0.28, 0.44, 0.30, 0.41}},
        {LabComponent::PHOS, "Phosphorus", "mg/dL", 2.5, 4.5, -0.47, 0.86, 2.5, 4.7, {0.22, 0.71, 0.24, 0.38}},
        {LabComponent::AST, "Aspartate aminotransferase", "U/L", 10, 35, -19.5, 19.2, 8.1, 106.3, {15.1, 21.4, 8.7, 223.9}},
        {LabComponent::ALT, "Alanine aminotransferase", "U/L", 10, 35, -19.5, 19.2, 8.1, 106.3, {15.1, 21.4, 8.7, 223.9}},
        {LabComponent::TBILI, "Total bilirubin", "mg/dL", 0.0, 1.2, -0.47, 0.36, 0.34, 2.0, {0.35, 0.21, 0.44, 2.0}},
        {LabComponent::ALKPHOS, "Alkaline phosphatase", "U/L", 35, 105, -25.9, 25.3, 23.1, 155.8, {23.7, 21.9, 17.6, 76.1}},
    };
    ThresholdRegistry reg;
    reg.version_ = "consensus-means-v1";
    for (const auto& r : rows) {
        StabilityThresholds t{r.c, r.ref_low, r.ref_high, r.decr, r.incr, r.min, r.max, r.sd};
        reg.set(ComponentInfo{r.c, r.name, r.unit}, t);
    }
    reg.set_panel("CBC", {kCbcPanel.begin(), kCbcPanel.end()});
    return reg;
}

void ThresholdRegistry::set(ComponentInfo info, StabilityThresholds t) {
    if (info.code != t.component) {
        throw ConfigError("component info and thresholds disagree");
    }
    t.validate();
    info_[info.code] = std::move(info);
    thresholds_[t.component] = t;
}

void ThresholdRegistry::set_panel(std::string name, std::vector<LabComponent> members) {
    std::vector<LabComponent> seen;
    for (LabComponent c : members) {
        if (!contains(c)) {
            throw ConfigError("panel " + name + " references unregistered component " +
                              std::string(to_string(c)));
        }
        if (std::find(seen.begin(), seen.end(), c) != seen.end()) {
            throw ConfigError("panel " + name + " lists " + std::string(to_string(c)) + " twice");
        }
        seen.push_back(c);
    }
    panels_[std::move(name)] = std::move(members);
}

const StabilityThresholds& ThresholdRegistry::thresholds(LabComponent c) const {
    auto it = thresholds_.find(c);
    if (it == thresholds_.end()) {
        throw ConfigError("no thresholds registered for " + std::string(to_string(c)));
    }
    return it->second;
}

const ComponentInfo& ThresholdRegistry::info(LabComponent c) const {
    auto it = info_.find(c);
    if (it == info_.end()) {
        throw ConfigError("component " + std::string(to_string(c)) + " is not registered");
    }
    return it->second;
}

const std::vector<LabComponent>& ThresholdRegistry::panel(std::string_view name) const {
    auto it = panels_.find(name);
    if (it == panels_.end()) {
        throw ConfigError("unknown panel '" + std::string(name) + "'");
    }
    return it->second;
}

std::vector<std::string> ThresholdRegistry::panel_names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : panels_) out.push_back(name);
    return out;
}

Json ThresholdRegistry::to_json() const {
    Json doc;
    doc["schema"] = "smartalert-thresholds/1";
    doc["version"] = version_;
    Json comps = Json::object();
    for (const auto& [c, t] : thresholds_) {
        const auto& inf = info_.at(c);
        Json row{{"display_name", inf.display_name},
                 {"unit", inf.unit},
                 {"ref_low", t.ref_low},
                 {"ref_high", t.ref_high},
                 {"acceptable_decrease", t.acceptable_decrease},
                 {"acceptable_increase", t.acceptable_increase},
                 {"stop_min", t.stop_min},
                 {"stop_max", t.stop_max}};
        if (t.std_dev) {
            const auto& s = *t.std_dev;
            row["std_dev"] = {{"acceptable_decrease", s[0]},
                              {"acceptable_increase", s[1]},
                              {"stop_min", s[2]},
                              {"stop_max", s[3]}};
        }
        comps[std::string(to_string(c))] = std::move(row);
    }
    doc["components"] = std::move(comps);
    Json panels = Json::object();
    for (const auto& [name, members] : panels_) {
        Json arr = Json::array();
        for (auto c : members) arr.push_back(std::string(to_string(c)));
        panels[name] = std::move(arr);
    }
    doc["panels"] = std::move(panels);
    return doc;
}

ThresholdRegistry ThresholdRegistry::from_json(const Json& doc) {
    ThresholdRegistry reg;
    try {
        const auto schema = value_or<std::string>(doc, "schema", "smartalert-thresholds/1");
        if (schema != "smartalert-thresholds/1") {
            throw ConfigError("unsupported thresholds schema '" + schema + "'");
        }
        reg.version_ = require<std::string>(doc, "version", "thresholds");
        for (const auto& [code, row] : doc.at("components").items()) {
            const LabComponent c = require_component(code);
            StabilityThresholds t;
            t.component = c;
            t.ref_low = require<double>(row, "ref_low", code);
            t.ref_high = require<double>(row, "ref_high", code);
            t.acceptable_decrease = require<double>(row, "acceptable_decrease", code);
            t.acceptable_increase = require<double>(row, "acceptable_increase", code);
            t.stop_min = require<double>(row, "stop_min", code);
            t.stop_max = require<double>(row, "stop_max", code);
            if (auto sd = row.find("std_dev"); sd != row.end()) {
                t.std_dev = std::array<double, 4>{
                    value_or(*sd, "acceptable_decrease", 0.0), value_or(*sd, "acceptable_increase", 0.0),
                    value_or(*sd, "stop_min", 0.0), value_or(*sd, "stop_max", 0.0)};
            }
            reg.set(ComponentInfo{c, value_or<std::string>(row, "display_name", code),
                                  value_or<std::string>(row, "unit", "")},
                    t);
        }
        if (auto p = doc.find("panels"); p != doc.end()) {
            for (const auto& [name, members] : p->items()) {
                std::vector<LabComponent> list;
                for (const auto& m : members) list.push_back(require_component(m.get<std::string>()));
                reg.set_panel(name, std::move(list));
            }
        }
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed thresholds document: ") + e.what());
    } catch (const ParseError& e) {
        throw ConfigError(e.what());
    }
    return reg;
}

ThresholdRegistry ThresholdRegistry::load(const std::filesystem::path& path) {
    return from_json(read_json_file(path));
}

} // namespace smartalert
