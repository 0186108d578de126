#include "smartalert/errors.hpp"
#include "smartalert/predictor.hpp"

#include <algorithm>

namespace smartalert {

namespace {

constexpr std::array<std::string_view, kGlobalFeatureCount> kGlobalNames{
    "hours_since_admission", "recent_transfusion", "recent_procedure",
    "active_anticoagulant",  "age_years",          "sex_female"};

bool within_window(Timestamp event, Timestamp as_of, Seconds window) {
    return event <= as_of && as_of - event <= window;
}

} // namespace

std::vector<std::string> FeatureLayout::names() const {
    std::vector<std::string> out;
    out.reserve(size());
    for (LabComponent c : panel) {
        const std::string prefix = std::string(to_string(c)) + ".";
        for (std::size_t k = 1; k <= history_depth; ++k) out.push_back(prefix + "value_" + std::to_string(k));
        out.push_back(prefix + "last_delta");
        out.push_back(prefix + "hours_since_last");
    }
    for (auto g : kGlobalNames) out.emplace_back(g);
    return out;
}

std::size_t FeatureLayout::component_offset(LabComponent c) const {
    auto it = std::find(panel.begin(), panel.end(), c);
    if (it == panel.end()) {
        throw ContractError(std::string(to_string(c)) + " is not in the feature panel");
    }
    return static_cast<std::size_t>(it - panel.begin()) * per_component();
}

FeatureLayout FeatureLayout::from_names(std::span<const std::string> names) {
    FeatureLayout layout;
    layout.panel.clear();
    if (names.size() < kGlobalFeatureCount) {
        throw ParseError("feature header too short");
    }
    const std::size_t component_cols = names.size() - kGlobalFeatureCount;
    const std::string prefix = names.front().substr(0, names.front().find('.') + 1) + "value_";
    std::size_t depth = 0;
    for (const auto& n : names) {
        if (n.rfind(prefix, 0) == 0) ++depth;
    }
    layout.history_depth = depth;
    if (depth == 0 || component_cols % (depth + 2) != 0) {
        throw ParseError("feature header does not match the documented layout");
    }
    for (std::size_t i = 0; i < component_cols; i += depth + 2) {
        const auto dot = names[i].find('.');
        layout.panel.push_back(require_component(names[i].substr(0, dot)));
    }
    const auto expected = layout.names();
    if (!std::equal(expected.begin(), expected.end(), names.begin(), names.end())) {
        throw ParseError("feature header does not match the documented layout");
    }
    return layout;
}

bool FeatureVector::predictable(LabComponent c) const {
    return std::find(not_predictable.begin(), not_predictable.end(), c) == not_predictable.end();
}

FeatureVector extract_features(const PatientSnapshot& snapshot, Timestamp as_of, const FeatureConfig& config) {
    if (snapshot.as_of != as_of) {
        throw ContractError("snapshot taken at " + format_rfc3339(snapshot.as_of) + " used for features at " +
                            format_rfc3339(as_of));
    }
    const FeatureLayout& layout = config.layout;
    FeatureVector fv;
    fv.layout = layout;
    fv.slots.assign(layout.size(), std::nullopt);

    const LabSeries labs = snapshot.labs.until(as_of);
    for (LabComponent c : layout.panel) {
        const auto results = labs.for_component(c);
        if (results.empty()) {
            fv.not_predictable.push_back(c);
            continue;
        }
        const std::size_t n = results.size();
        for (std::size_t k = 0; k < layout.history_depth && k < n; ++k) {
            fv.slots[layout.value_index(c, k)] = results[n - 1 - k].value;
        }
        if (n >= 2) {
            fv.slots[layout.delta_index(c)] = results[n - 1].value - results[n - 2].value;
        }
        fv.slots[layout.hours_since_last_index(c)] = hours_between(results.back().observed_at, as_of);
    }

    fv.slots[layout.global_index(GlobalFeature::hours_since_admission)] =
        std::max(0.0, hours_between(snapshot.admission_at, as_of));

    const bool transfusion = std::any_of(snapshot.transfusions.begin(), snapshot.transfusions.end(), [&](const auto& t) {
        return within_window(t.performed_at, as_of, config.recent_window);
    });
    const bool procedure = std::any_of(snapshot.procedures.begin(), snapshot.procedures.end(), [&](const auto& p) {
        return within_window(p.performed_at, as_of, config.recent_window);
    });
    const bool anticoagulant = std::any_of(snapshot.medications.begin(), snapshot.medications.end(), [&](const auto& m) {
        return m.active && m.started_at <= as_of && config.anticoagulant_codes.count(m.code) != 0;
    });
    fv.slots[layout.global_index(GlobalFeature::recent_transfusion)] = transfusion ? 1.0 : 0.0;
    fv.slots[layout.global_index(GlobalFeature::recent_procedure)] = procedure ? 1.0 : 0.0;
    fv.slots[layout.global_index(GlobalFeature::active_anticoagulant)] = anticoagulant ? 1.0 : 0.0;
    if (snapshot.demographics.age_years > 0.0) {
        fv.slots[layout.global_index(GlobalFeature::age_years)] = snapshot.demographics.age_years;
    }
    if (snapshot.demographics.sex == Sex::female || snapshot.demographics.sex == Sex::male) {
        fv.slots[layout.global_index(GlobalFeature::sex_female)] = snapshot.demographics.sex == Sex::female ? 1.0 : 0.0;
    }
    return fv;
}

} // namespace smartalert
