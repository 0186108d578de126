#include "smartalert/errors.hpp"
#include "smartalert/fhir.hpp"

#include <algorithm>
#include <mutex>

namespace smartalert {

// ---------------------------------------------------------------------------
// FhirSource: normalized operations over raw access

std::vector<std::string> FhirSource::list_admitted_encounters(Timestamp as_of) {
    std::vector<std::string> ids;
    for (const auto& enc : all_encounters()) {
        try {
            auto [start, end] = fhir::encounter_period(enc);
            if (start <= as_of && (!end || *end > as_of)) {
                ids.push_back(enc.at("id").get<std::string>());
            }
        } catch (const std::exception& e) {
            log(LogLevel::warn, std::string("skipping malformed Encounter: ") + e.what());
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

PatientSnapshot FhirSource::fetch_snapshot(const std::string& encounter_id, Timestamp as_of) {
    const Json encounter = read("Encounter", encounter_id);
    const auto patient_id = fhir::patient_reference(encounter);
    if (!patient_id) {
        throw ParseError("Encounter/" + encounter_id + " has no patient reference");
    }
    const Json patient = read("Patient", *patient_id);
    std::vector<Json> resources;
    for (auto type : fhir::kEncounterScoped) {
        auto part = search_encounter(type, encounter_id);
        resources.insert(resources.end(), std::make_move_iterator(part.begin()),
                         std::make_move_iterator(part.end()));
    }
    return fhir::build_snapshot(encounter, patient, resources, as_of, codes_);
}

StandingOrder FhirSource::get_order(const std::string& order_id) {
    return fhir::service_request_to_order(read("ServiceRequest", order_id));
}

StandingOrder FhirSource::put_order(const StandingOrder& order) {
    if (!(order.start_at < order.end_at)) {
        throw ContractError("order " + order.order_id + " must start before it ends");
    }
    return fhir::service_request_to_order(put(fhir::order_to_service_request(order)));
}

// ---------------------------------------------------------------------------
// FhirStore

void FhirStore::load_dataset(const Json& dataset) {
    std::vector<Json> bundles;
    if (dataset.is_object() && dataset.contains("bundles")) {
        if (!dataset.at("bundles").is_array()) throw ParseError("dataset 'bundles' must be an array");
        for (const auto& b : dataset.at("bundles")) bundles.push_back(b);
    } else if (dataset.is_object() && dataset.value("resourceType", "") == "Bundle") {
        bundles.push_back(dataset);
    } else {
        throw ParseError("dataset must be a Bundle or an object with 'bundles'");
    }
    std::unique_lock lock(mu_);
    for (const auto& bundle : bundles) {
        if (!bundle.is_object() || bundle.value("resourceType", "") != "Bundle" || !bundle.contains("entry") ||
            !bundle.at("entry").is_array()) {
            throw ParseError("dataset bundle lacks resourceType Bundle or entry list");
        }
        for (const auto& entry : bundle.at("entry")) {
            if (!entry.is_object() || !entry.contains("resource") || !entry.at("resource").is_object()) {
                throw ParseError("bundle entry without resource");
            }
            put_locked(entry.at("resource"));
        }
    }
}

void FhirStore::load_file(const std::filesystem::path& path) { load_dataset(read_json_file(path)); }

Json FhirStore::to_dataset() const {
    std::shared_lock lock(mu_);
    std::vector<Json> shared;
    std::map<std::string, std::vector<Json>> per_encounter;
    for (const auto& [key, res] : resources_) {
        if (key.first == "Encounter") {
            per_encounter[key.second].insert(per_encounter[key.second].begin(), res);
        } else if (auto enc = fhir::encounter_reference(res)) {
            per_encounter[*enc].push_back(res);
        } else {
            shared.push_back(res);
        }
    }
    Json bundles = Json::array();
    bundles.push_back(fhir::make_bundle(shared));
    for (const auto& [_, list] : per_encounter) bundles.push_back(fhir::make_bundle(list));
    return Json{{"schema", "smartalert-fixture/1"}, {"bundles", bundles}};
}

Json FhirStore::put(const Json& resource) {
    std::unique_lock lock(mu_);
    put_locked(resource);
    return resource;
}

void FhirStore::put_locked(const Json& resource) {
    if (!resource.is_object()) {
        throw ParseError("resource must be a JSON object");
    }
    const auto type = resource.value("resourceType", "");
    if (std::find(fhir::kResourceTypes.begin(), fhir::kResourceTypes.end(), type) == fhir::kResourceTypes.end()) {
        throw ParseError("unsupported resourceType '" + type + "'");
    }
    auto id_it = resource.find("id");
    if (id_it == resource.end() || !id_it->is_string() || id_it->get<std::string>().empty()) {
        throw ParseError(type + " resource without id");
    }
    Key key{type, id_it->get<std::string>()};
    if (auto old = resources_.find(key); old != resources_.end()) {
        if (auto enc = fhir::encounter_reference(old->second)) {
            auto& keys = by_encounter_[*enc];
            keys.erase(std::remove(keys.begin(), keys.end(), key), keys.end());
        }
    }
    if (auto enc = fhir::encounter_reference(resource)) {
        by_encounter_[*enc].push_back(key);
    }
    resources_[key] = resource;
}

std::optional<Json> FhirStore::get(std::string_view type, const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = resources_.find(Key{std::string(type), id});
    if (it == resources_.end()) return std::nullopt;
    return it->second;
}

std::vector<Json> FhirStore::by_encounter(std::string_view type, const std::string& encounter_id) const {
    std::shared_lock lock(mu_);
    std::vector<Json> out;
    auto it = by_encounter_.find(encounter_id);
    if (it == by_encounter_.end()) return out;
    std::vector<Key> keys;
    for (const auto& k : it->second) {
        if (k.first == type) keys.push_back(k);
    }
    std::sort(keys.begin(), keys.end());
    for (const auto& k : keys) out.push_back(resources_.at(k));
    return out;
}

std::vector<Json> FhirStore::of_type(std::string_view type) const {
    std::shared_lock lock(mu_);
    std::vector<Json> out;
    for (auto it = resources_.lower_bound(Key{std::string(type), ""}); it != resources_.end() && it->first.first == type;
         ++it) {
        out.push_back(it->second);
    }
    return out;
}

bool FhirStore::has_encounter(const std::string& id) const {
    std::shared_lock lock(mu_);
    return resources_.count(Key{"Encounter", id}) != 0;
}

std::size_t FhirStore::size() const {
    std::shared_lock lock(mu_);
    return resources_.size();
}

// ---------------------------------------------------------------------------
// LocalFhirSource

Json LocalFhirSource::read(std::string_view type, const std::string& id) {
    auto r = store_.get(type, id);
    if (!r) {
        throw NotFound(std::string(type) + "/" + id + " not found");
    }
    return std::move(*r);
}

std::vector<Json> LocalFhirSource::search_encounter(std::string_view type, const std::string& encounter_id) {
    return store_.by_encounter(type, encounter_id);
}

std::vector<Json> LocalFhirSource::all_encounters() { return store_.of_type("Encounter"); }

Json LocalFhirSource::put(const Json& resource) { return store_.put(resource); }

} // namespace smartalert
