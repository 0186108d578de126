#include "smartalert/errors.hpp"
#include "smartalert/fhir.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <tuple>

namespace smartalert {

namespace {

constexpr const char* kTherapeuticExtension = "urn:smartalert:therapeutic";
constexpr const char* kRaceExtension = "urn:smartalert:race";
constexpr const char* kReplacesPrefix = "ServiceRequest/";

std::string first_code(const Json& codeable) {
    const auto& coding = codeable.at("coding");
    if (!coding.is_array() || coding.empty()) {
        throw ParseError("empty coding");
    }
    return coding.at(0).at("code").get<std::string>();
}

std::optional<std::string> category_code(const Json& resource) {
    auto it = resource.find("category");
    if (it == resource.end()) return std::nullopt;
    const Json& cat = it->is_array() ? (it->empty() ? Json() : it->at(0)) : *it;
    if (cat.is_null()) return std::nullopt;
    return first_code(cat);
}

std::optional<bool> bool_extension(const Json& resource, std::string_view url) {
    auto it = resource.find("extension");
    if (it == resource.end()) return std::nullopt;
    for (const auto& ext : *it) {
        if (ext.value("url", "") == url) {
            return ext.at("valueBoolean").get<bool>();
        }
    }
    return std::nullopt;
}

std::optional<std::string> string_extension(const Json& resource, std::string_view url) {
    auto it = resource.find("extension");
    if (it == resource.end()) return std::nullopt;
    for (const auto& ext : *it) {
        if (ext.value("url", "") == url) {
            return ext.at("valueString").get<std::string>();
        }
    }
    return std::nullopt;
}

Timestamp ts(const Json& v) { return parse_rfc3339(v.get<std::string>()); }

std::string reference_id(const Json& ref, std::string_view prefix) {
    const auto s = ref.at("reference").get<std::string>();
    if (s.rfind(prefix, 0) != 0) {
        throw ParseError("reference '" + s + "' is not a " + std::string(prefix) + " reference");
    }
    return s.substr(prefix.size());
}

} // namespace

// ---------------------------------------------------------------------------
// Enum text

std::string_view to_string(Sex s) {
    switch (s) {
    case Sex::female: return "female";
    case Sex::male: return "male";
    case Sex::other: return "other";
    case Sex::unknown: return "unknown";
    }
    return "unknown";
}

std::string_view to_string(Race r) {
    switch (r) {
    case Race::white: return "white";
    case Race::black: return "black";
    case Race::asian: return "asian";
    case Race::pacific_islander: return "pacific_islander";
    case Race::native_american: return "native_american";
    case Race::other: return "other";
    case Race::unknown: return "unknown";
    }
    return "unknown";
}

Sex parse_sex(std::string_view s) {
    if (s == "female") return Sex::female;
    if (s == "male") return Sex::male;
    if (s == "other") return Sex::other;
    return Sex::unknown;
}

Race parse_race(std::string_view s) {
    if (s == "white") return Race::white;
    if (s == "black") return Race::black;
    if (s == "asian") return Race::asian;
    if (s == "pacific_islander") return Race::pacific_islander;
    if (s == "native_american") return Race::native_american;
    if (s == "other") return Race::other;
    return Race::unknown;
}

std::string_view to_string(OrderFrequency f) {
    switch (f) {
    case OrderFrequency::daily_or_higher: return "daily_or_higher";
    case OrderFrequency::every_other_day: return "every_other_day";
    case OrderFrequency::weekly: return "weekly";
    }
    return "?";
}

std::string_view to_string(OrderStatus s) {
    switch (s) {
    case OrderStatus::active: return "active";
    case OrderStatus::discontinued: return "discontinued";
    case OrderStatus::modified: return "modified";
    }
    return "?";
}

OrderFrequency parse_frequency(std::string_view s) {
    if (s == "daily_or_higher" || s == "daily") return OrderFrequency::daily_or_higher;
    if (s == "every_other_day") return OrderFrequency::every_other_day;
    if (s == "weekly") return OrderFrequency::weekly;
    throw ParseError("unknown order frequency '" + std::string(s) + "'");
}

OrderStatus parse_order_status(std::string_view s) {
    if (s == "active") return OrderStatus::active;
    if (s == "discontinued") return OrderStatus::discontinued;
    if (s == "modified") return OrderStatus::modified;
    throw ParseError("unknown order status '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Code map

LabCodeMap LabCodeMap::defaults() {
    LabCodeMap m;
    m.set("6690-2", LabComponent::WBC);
    m.set("718-7", LabComponent::HGB);
    m.set("777-3", LabComponent::PLT);
    m.set("2951-2", LabComponent::NA);
    m.set("2823-3", LabComponent::K);
    m.set("2160-0", LabComponent::CR);
    m.set("17861-6", LabComponent::CA);
    m.set("19123-9", LabComponent::MG);
    m.set("2777-1", LabComponent::PHOS);
    m.set("1920-8", LabComponent::AST);
    m.set("1742-6", LabComponent::ALT);
    m.set("1975-2", LabComponent::TBILI);
    m.set("6768-6", LabComponent::ALKPHOS);
    return m;
}

LabCodeMap LabCodeMap::from_json(const Json& doc) {
    LabCodeMap m;
    try {
        for (const auto& [code, comp] : doc.at("codes").items()) {
            m.set(code, require_component(comp.get<std::string>()));
        }
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed code map: ") + e.what());
    }
    return m;
}

LabCodeMap LabCodeMap::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

Json LabCodeMap::to_json() const {
    Json codes = Json::object();
    for (const auto& [code, c] : map_) codes[code] = std::string(to_string(c));
    return Json{{"schema", "smartalert-codemap/1"}, {"codes", codes}};
}

std::optional<LabComponent> LabCodeMap::lookup(std::string_view code) const {
    auto it = map_.find(code);
    if (it == map_.end()) return std::nullopt;
    return it->second;
}

std::string LabCodeMap::code_for(LabComponent c) const {
    for (const auto& [code, comp] : map_) {
        if (comp == c) return code;
    }
    throw ConfigError("no code mapped to " + std::string(to_string(c)));
}

void LabCodeMap::set(std::string code, LabComponent c) { map_[std::move(code)] = c; }

// ---------------------------------------------------------------------------
// Resource builders

namespace fhir {

Json make_patient(const std::string& id, Sex sex, Race race, Timestamp birth) {
    return Json{{"resourceType", "Patient"},
                {"id", id},
                {"gender", std::string(to_string(sex))},
                {"birthDate", format_rfc3339(birth).substr(0, 10)},
                {"extension", Json::array({{{"url", kRaceExtension}, {"valueString", to_string(race)}}})}};
}

Json make_encounter(const std::string& id, const std::string& patient_id, Timestamp start,
                    std::optional<Timestamp> end, const std::string& unit, const std::string& service) {
    Json period{{"start", format_rfc3339(start)}};
    if (end) period["end"] = format_rfc3339(*end);
    return Json{{"resourceType", "Encounter"},
                {"id", id},
                {"status", "in-progress"},
                {"class", {{"code", "IMP"}}},
                {"subject", {{"reference", "Patient/" + patient_id}}},
                {"period", period},
                {"serviceType", {{"coding", Json::array({{{"code", service}}})}}},
                {"location", Json::array({{{"location", {{"display", unit}}}}})}};
}

Json make_lab_observation(const std::string& id, const std::string& encounter_id, const std::string& code,
                          double value, const std::string& unit, Timestamp at, ResultStatus status) {
    return Json{{"resourceType", "Observation"},
                {"id", id},
                {"status", std::string(to_string(status))},
                {"category", Json::array({{{"coding", Json::array({{{"code", "laboratory"}}})}}})},
                {"code", {{"coding", Json::array({{{"system", "http://loinc.org"}, {"code", code}}})}}},
                {"encounter", {{"reference", "Encounter/" + encounter_id}}},
                {"effectiveDateTime", format_rfc3339(at)},
                {"valueQuantity", {{"value", value}, {"unit", unit}}}};
}

Json make_vital_observation(const std::string& id, const std::string& encounter_id, const std::string& code,
                            double value, Timestamp at) {
    return Json{{"resourceType", "Observation"},
                {"id", id},
                {"status", "final"},
                {"category", Json::array({{{"coding", Json::array({{{"code", "vital-signs"}}})}}})},
                {"code", {{"coding", Json::array({{{"code", code}}})}}},
                {"encounter", {{"reference", "Encounter/" + encounter_id}}},
                {"effectiveDateTime", format_rfc3339(at)},
                {"valueQuantity", {{"value", value}}}};
}

Json make_medication_request(const std::string& id, const std::string& encounter_id, const std::string& code,
                             const std::string& route, bool therapeutic, bool active, Timestamp authored) {
    return Json{
        {"resourceType", "MedicationRequest"},
        {"id", id},
        {"status", active ? "active" : "stopped"},
        {"intent", "order"},
        {"medicationCodeableConcept", {{"coding", Json::array({{{"code", code}}})}}},
        {"encounter", {{"reference", "Encounter/" + encounter_id}}},
        {"authoredOn", format_rfc3339(authored)},
        {"dosageInstruction", Json::array({{{"route", {{"coding", Json::array({{{"code", route}}})}}}}})},
        {"extension", Json::array({{{"url", kTherapeuticExtension}, {"valueBoolean", therapeutic}}})}};
}

Json make_condition(const std::string& id, const std::string& encounter_id, const std::string& code,
                    Timestamp onset) {
    return Json{{"resourceType", "Condition"},
                {"id", id},
                {"code", {{"coding", Json::array({{{"code", code}}})}}},
                {"encounter", {{"reference", "Encounter/" + encounter_id}}},
                {"onsetDateTime", format_rfc3339(onset)}};
}

Json make_procedure(const std::string& id, const std::string& encounter_id, const std::string& code,
                    Timestamp performed, bool transfusion) {
    Json r{{"resourceType", "Procedure"},
           {"id", id},
           {"status", "completed"},
           {"code", {{"coding", Json::array({{{"code", code}}})}}},
           {"encounter", {{"reference", "Encounter/" + encounter_id}}},
           {"performedDateTime", format_rfc3339(performed)}};
    if (transfusion) {
        r["category"] = {{"coding", Json::array({{{"code", "transfusion"}}})}};
    }
    return r;
}

Json order_to_service_request(const StandingOrder& order) {
    std::string status = "active";
    if (order.status == OrderStatus::discontinued) status = "revoked";
    if (order.status == OrderStatus::modified) status = "completed";
    Json repeat{{"boundsPeriod", {{"start", format_rfc3339(order.start_at)}, {"end", format_rfc3339(order.end_at)}}},
                {"frequency", 1}};
    switch (order.frequency) {
    case OrderFrequency::daily_or_higher: repeat["period"] = 1; repeat["periodUnit"] = "d"; break;
    case OrderFrequency::every_other_day: repeat["period"] = 2; repeat["periodUnit"] = "d"; break;
    case OrderFrequency::weekly: repeat["period"] = 1; repeat["periodUnit"] = "wk"; break;
    }
    Json r{{"resourceType", "ServiceRequest"},
           {"id", order.order_id},
           {"status", status},
           {"intent", "order"},
           {"code", {{"coding", Json::array({{{"code", order.panel}}})}}},
           {"encounter", {{"reference", "Encounter/" + order.encounter_id}}},
           {"occurrenceTiming", {{"repeat", repeat}}}};
    if (order.replaces) {
        r["replaces"] = Json::array({{{"reference", kReplacesPrefix + *order.replaces}}});
    }
    return r;
}

StandingOrder service_request_to_order(const Json& resource) {
    try {
        StandingOrder o;
        o.order_id = resource.at("id").get<std::string>();
        o.encounter_id = reference_id(resource.at("encounter"), "Encounter/");
        o.panel = first_code(resource.at("code"));
        const auto status = resource.at("status").get<std::string>();
        if (status == "active") o.status = OrderStatus::active;
        else if (status == "revoked") o.status = OrderStatus::discontinued;
        else if (status == "completed") o.status = OrderStatus::modified;
        else throw ParseError("unsupported ServiceRequest status '" + status + "'");
        const auto& repeat = resource.at("occurrenceTiming").at("repeat");
        o.start_at = ts(repeat.at("boundsPeriod").at("start"));
        o.end_at = ts(repeat.at("boundsPeriod").at("end"));
        const auto unit = repeat.at("periodUnit").get<std::string>();
        const double period = repeat.at("period").get<double>();
        const double frequency = repeat.value("frequency", 1.0);
        double days = period / std::max(frequency, 1e-9);
        if (unit == "h") days /= 24.0;
        else if (unit == "wk") days *= 7.0;
        else if (unit != "d") throw ParseError("unsupported periodUnit '" + unit + "'");
        if (days <= 1.0 + 1e-9) o.frequency = OrderFrequency::daily_or_higher;
        else if (days <= 2.0 + 1e-9) o.frequency = OrderFrequency::every_other_day;
        else o.frequency = OrderFrequency::weekly;
        if (auto rep = resource.find("replaces"); rep != resource.end() && !rep->empty()) {
            o.replaces = reference_id(rep->at(0), kReplacesPrefix);
        }
        if (!(o.start_at < o.end_at)) {
            throw ParseError("ServiceRequest " + o.order_id + " has start >= end");
        }
        return o;
    } catch (const Json::exception& e) {
        throw ParseError(std::string("malformed ServiceRequest: ") + e.what());
    }
}

std::optional<std::string> encounter_reference(const Json& resource) {
    auto it = resource.find("encounter");
    if (it == resource.end() || !it->is_object()) return std::nullopt;
    auto ref = it->find("reference");
    if (ref == it->end() || !ref->is_string()) return std::nullopt;
    const auto s = ref->get<std::string>();
    if (s.rfind("Encounter/", 0) != 0) return std::nullopt;
    return s.substr(10);
}

std::optional<std::string> patient_reference(const Json& encounter) {
    auto it = encounter.find("subject");
    if (it == encounter.end() || !it->is_object()) return std::nullopt;
    const auto s = it->value("reference", "");
    if (s.rfind("Patient/", 0) != 0) return std::nullopt;
    return s.substr(8);
}

std::pair<Timestamp, std::optional<Timestamp>> encounter_period(const Json& encounter) {
    try {
        const auto& period = encounter.at("period");
        std::optional<Timestamp> end;
        if (auto e = period.find("end"); e != period.end() && !e->is_null()) end = ts(*e);
        return {ts(period.at("start")), end};
    } catch (const Json::exception& e) {
        throw ParseError(std::string("malformed Encounter.period: ") + e.what());
    }
}

PatientSnapshot build_snapshot(const Json& encounter, const Json& patient, const std::vector<Json>& resources,
                               Timestamp as_of, const LabCodeMap& codes) {
    PatientSnapshot s;
    s.as_of = as_of;
    try {
        s.encounter_id = encounter.at("id").get<std::string>();
        s.patient_id = patient.at("id").get<std::string>();
        auto [start, end] = encounter_period(encounter);
        s.admission_at = start;
        if (end && *end <= as_of) s.discharge_at = end;
        if (auto st = encounter.find("serviceType"); st != encounter.end()) s.service = first_code(*st);
        if (auto loc = encounter.find("location"); loc != encounter.end() && !loc->empty()) {
            s.unit = loc->at(0).at("location").value("display", "");
        }
        s.demographics.sex = parse_sex(patient.value("gender", "unknown"));
        s.demographics.race = parse_race(string_extension(patient, kRaceExtension).value_or("unknown"));
        if (auto bd = patient.find("birthDate"); bd != patient.end()) {
            const Timestamp birth = parse_rfc3339(bd->get<std::string>() + "T00:00:00Z");
            s.demographics.age_years = std::floor(hours_between(birth, s.admission_at) / (24.0 * 365.25));
        }
    } catch (const Json::exception& e) {
        throw ParseError(std::string("malformed Encounter/Patient: ") + e.what());
    }

    std::vector<LabResult> labs;
    for (const auto& r : resources) {
        std::string type = r.value("resourceType", "");
        try {
            if (auto enc = encounter_reference(r); !enc || *enc != s.encounter_id) {
                throw ParseError("resource does not reference encounter " + s.encounter_id);
            }
            if (type == "Observation") {
                const Timestamp at = ts(r.at("effectiveDateTime"));
                if (at > as_of) continue;
                const auto status = r.at("status").get<std::string>();
                if (status != "final" && status != "corrected" && status != "amended") continue;
                const auto code = first_code(r.at("code"));
                const double value = r.at("valueQuantity").at("value").get<double>();
                if (category_code(r).value_or("laboratory") == "vital-signs") {
                    s.vitals.push_back({code, value, at});
                    continue;
                }
                auto comp = codes.lookup(code);
                if (!comp) {
                    ++s.unmapped_observations;
                    continue;
                }
                if (!std::isfinite(value) || value < 0.0) {
                    throw ParseError("lab value out of range");
                }
                labs.push_back({*comp, value, at, parse_result_status(status)});
            } else if (type == "MedicationRequest") {
                Medication m;
                m.started_at = ts(r.at("authoredOn"));
                if (m.started_at > as_of) continue;
                m.code = first_code(r.at("medicationCodeableConcept"));
                m.active = r.at("status").get<std::string>() == "active";
                if (auto di = r.find("dosageInstruction"); di != r.end() && !di->empty()) {
                    m.route = first_code(di->at(0).at("route"));
                }
                m.therapeutic = bool_extension(r, kTherapeuticExtension).value_or(false);
                s.medications.push_back(std::move(m));
            } else if (type == "Condition") {
                ConditionRecord c{first_code(r.at("code")), ts(r.at("onsetDateTime"))};
                if (c.onset_at > as_of) continue;
                s.conditions.push_back(std::move(c));
            } else if (type == "Procedure") {
                const Timestamp at = ts(r.at("performedDateTime"));
                if (at > as_of) continue;
                if (category_code(r).value_or("") == "transfusion") {
                    s.transfusions.push_back({at});
                } else {
                    s.procedures.push_back({first_code(r.at("code")), at});
                }
            } else if (type == "ServiceRequest") {
                StandingOrder o = service_request_to_order(r);
                if (o.start_at > as_of) continue;
                s.orders.push_back(std::move(o));
            } else {
                throw ParseError("unexpected resource type '" + type + "'");
            }
        } catch (const std::exception& e) {
            ++s.skipped_resources;
            log(LogLevel::warn, "skipping " + type + "/" + r.value("id", "?") + ": " + e.what());
        }
    }
    s.labs = LabSeries(s.encounter_id, std::move(labs));

    auto by_time = [](const auto& a, const auto& b) { return a < b; };
    std::sort(s.vitals.begin(), s.vitals.end(), [&](const VitalSign& a, const VitalSign& b) {
        return by_time(std::tie(a.observed_at, a.code, a.value), std::tie(b.observed_at, b.code, b.value));
    });
    std::sort(s.medications.begin(), s.medications.end(), [&](const Medication& a, const Medication& b) {
        return by_time(std::tie(a.started_at, a.code, a.route), std::tie(b.started_at, b.code, b.route));
    });
    std::sort(s.conditions.begin(), s.conditions.end(), [&](const ConditionRecord& a, const ConditionRecord& b) {
        return by_time(std::tie(a.onset_at, a.code), std::tie(b.onset_at, b.code));
    });
    std::sort(s.procedures.begin(), s.procedures.end(), [&](const ProcedureRecord& a, const ProcedureRecord& b) {
        return by_time(std::tie(a.performed_at, a.code), std::tie(b.performed_at, b.code));
    });
    std::sort(s.transfusions.begin(), s.transfusions.end(),
              [](const TransfusionRecord& a, const TransfusionRecord& b) { return a.performed_at < b.performed_at; });
    std::sort(s.orders.begin(), s.orders.end(), [](const StandingOrder& a, const StandingOrder& b) {
        return std::tie(a.start_at, a.order_id) < std::tie(b.start_at, b.order_id);
    });
    return s;
}

Json make_bundle(const std::vector<Json>& resources, std::string_view type) {
    Json entries = Json::array();
    for (const auto& r : resources) entries.push_back(Json{{"resource", r}});
    return Json{{"resourceType", "Bundle"}, {"type", type}, {"total", resources.size()}, {"entry", entries}};
}

} // namespace fhir

// ---------------------------------------------------------------------------
// Snapshot serialization

Json snapshot_to_json(const PatientSnapshot& s) {
    Json labs = Json::array();
    for (const auto& r : s.labs.results()) {
        labs.push_back({{"component", to_string(r.component)},
                        {"value", r.value},
                        {"observed_at", format_rfc3339(r.observed_at)},
                        {"status", to_string(r.status)}});
    }
    Json vitals = Json::array();
    for (const auto& v : s.vitals) {
        vitals.push_back({{"code", v.code}, {"value", v.value}, {"observed_at", format_rfc3339(v.observed_at)}});
    }
    Json meds = Json::array();
    for (const auto& m : s.medications) {
        meds.push_back({{"code", m.code},
                        {"route", m.route},
                        {"active", m.active},
                        {"therapeutic", m.therapeutic},
                        {"started_at", format_rfc3339(m.started_at)}});
    }
    Json conds = Json::array();
    for (const auto& c : s.conditions) conds.push_back({{"code", c.code}, {"onset_at", format_rfc3339(c.onset_at)}});
    Json procs = Json::array();
    for (const auto& p : s.procedures) {
        procs.push_back({{"code", p.code}, {"performed_at", format_rfc3339(p.performed_at)}});
    }
    Json trans = Json::array();
    for (const auto& t : s.transfusions) trans.push_back({{"performed_at", format_rfc3339(t.performed_at)}});
    Json orders = Json::array();
    for (const auto& o : s.orders) {
        orders.push_back({{"order_id", o.order_id},
                          {"panel", o.panel},
                          {"frequency", to_string(o.frequency)},
                          {"status", to_string(o.status)},
                          {"start_at", format_rfc3339(o.start_at)},
                          {"end_at", format_rfc3339(o.end_at)}});
    }
    return Json{{"patient_id", s.patient_id},
                {"encounter_id", s.encounter_id},
                {"as_of", format_rfc3339(s.as_of)},
                {"demographics",
                 {{"age", s.demographics.age_years},
                  {"sex", to_string(s.demographics.sex)},
                  {"race", to_string(s.demographics.race)}}},
                {"admission_at", format_rfc3339(s.admission_at)},
                {"discharge_at", s.discharge_at ? Json(format_rfc3339(*s.discharge_at)) : Json()},
                {"unit", s.unit},
                {"service", s.service},
                {"labs", labs},
                {"vitals", vitals},
                {"medications", meds},
                {"conditions", conds},
                {"procedures", procs},
                {"transfusions", trans},
                {"orders", orders},
                {"unmapped_observations", s.unmapped_observations},
                {"skipped_resources", s.skipped_resources}};
}

std::string snapshot_hash(const PatientSnapshot& s) { return hex64(fnv1a64(snapshot_to_json(s).dump())); }

} // namespace smartalert
