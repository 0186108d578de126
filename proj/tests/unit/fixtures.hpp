#pragma once

#include "smartalert/alert.hpp"
#include "smartalert/fhir.hpp"
#include "smartalert/predictor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace fixtures {

using namespace smartalert;

inline LabResult lab(LabComponent c, double v, Timestamp t) { return LabResult{c, v, t, ResultStatus::final}; }

/// Artifact whose every CBC component predicts `p` regardless of features.
inline ModelArtifact constant_artifact(double p, const std::string& version = "lr.test") {
    ModelArtifact a;
    a.model_version = version;
    for (LabComponent c : kCbcPanel) {
        ComponentModel m;
        m.component = c;
        m.trainable = true;
        m.coefficients.assign(design_names().size(), 0.0);
        m.coefficients[0] = std::log(p / (1.0 - p));
        m.threshold = 0.5;
        m.threshold_unattainable = false;
        a.components[c] = m;
    }
    a.rehash();
    return a;
}

/// One admitted encounter with a patient, a daily CBC order and CBC draws.
struct Encounter {
    std::string id = "E1";
    std::string patient = "P1";
    Timestamp admitted = make_utc(2024, 8, 20, 8);
    std::optional<Timestamp> discharged;
    std::string unit = "5E";
    std::string service = "MED";
};

inline void add_encounter(FhirStore& store, const Encounter& e) {
    store.put(fhir::make_patient(e.patient, Sex::female, Race::white, make_utc(1960, 1, 1)));
    store.put(fhir::make_encounter(e.id, e.patient, e.admitted, e.discharged, e.unit, e.service));
}

inline void add_cbc(FhirStore& store, const std::string& encounter, Timestamp at, double wbc, double hgb,
                    double plt, const LabCodeMap& codes = LabCodeMap::defaults()) {
    const std::string stamp = std::to_string(at.time_since_epoch().count());
    store.put(fhir::make_lab_observation(encounter + "-WBC-" + stamp, encounter, codes.code_for(LabComponent::WBC),
                                         wbc, "K/uL", at));
    store.put(fhir::make_lab_observation(encounter + "-HGB-" + stamp, encounter, codes.code_for(LabComponent::HGB),
                                         hgb, "g/dL", at));
    store.put(fhir::make_lab_observation(encounter + "-PLT-" + stamp, encounter, codes.code_for(LabComponent::PLT),
                                         plt, "K/uL", at));
}

inline StandingOrder daily_order(const std::string& encounter, Timestamp start, const std::string& id = "") {
    StandingOrder o;
    o.order_id = id.empty() ? encounter + "-cbc-1" : id;
    o.encounter_id = encounter;
    o.start_at = start;
    o.end_at = start + hours(72);
    return o;
}

inline StabilityPrediction prediction(const std::string& encounter, Timestamp at, double p) {
    StabilityPrediction s;
    s.encounter_id = encounter;
    s.computed_at = at;
    for (LabComponent c : kCbcPanel) s.component_probability[c] = p;
    s.panel_probability = p;
    s.model_version = "lr.test";
    return s;
}

} // namespace fixtures
