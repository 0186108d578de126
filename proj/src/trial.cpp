#include "smartalert/trial.hpp"

#include "smartalert/errors.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

namespace smartalert {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::vector<std::string> lines_of(std::string_view text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string line(text.substr(pos, nl - pos));
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) out.push_back(std::move(line));
        pos = nl + 1;
    }
    return out;
}

Json times_json(const std::vector<Timestamp>& ts) {
    Json a = Json::array();
    for (auto t : ts) a.push_back(format_rfc3339(t));
    return a;
}

std::vector<Timestamp> times_from(const Json& a) {
    std::vector<Timestamp> out;
    for (const auto& t : a) out.push_back(parse_rfc3339(t.get<std::string>()));
    return out;
}

} // namespace

std::string_view to_string(Arm a) { return a == Arm::treatment ? "treatment" : "control"; }

Arm parse_arm(std::string_view s) {
    if (s == "treatment" || s == "1") return Arm::treatment;
    if (s == "control" || s == "2") return Arm::control;
    throw ParseError("unknown arm '" + std::string(s) + "'");
}

Json ArmAssignment::to_json() const {
    return Json{{"encounter_id", encounter_id},
                {"arm", static_cast<int>(arm)},
                {"assigned_at", format_rfc3339(assigned_at)},
                {"eligible", eligible}};
}

ArmAssignment ArmAssignment::from_json(const Json& j) {
    ArmAssignment a;
    a.encounter_id = require<std::string>(j, "encounter_id", "arm assignment");
    const int arm = require<int>(j, "arm", "arm assignment");
    if (arm != 1 && arm != 2) throw ParseError("arm must be 1 or 2");
    a.arm = static_cast<Arm>(arm);
    a.assigned_at = parse_rfc3339(require<std::string>(j, "assigned_at", "arm assignment"));
    a.eligible = value_or<bool>(j, "eligible", true);
    return a;
}

Arm draw_arm(std::uint64_t seed, const std::string& encounter_id) {
    const std::uint64_t h = splitmix64(splitmix64(seed) ^ fnv1a64(encounter_id));
    return (h >> 63) == 0 ? Arm::treatment : Arm::control;
}

// ---------------------------------------------------------------------------
// ArmRegistry

ArmRegistry::ArmRegistry(std::uint64_t seed, std::optional<std::filesystem::path> path)
    : seed_(seed), path_(std::move(path)) {
    if (path_ && std::filesystem::exists(*path_)) {
        for (const auto& line : lines_of(read_text_file(*path_))) {
            try {
                auto a = ArmAssignment::from_json(Json::parse(line));
                assignments_.emplace(a.encounter_id, a);
            } catch (const std::exception& e) {
                log(LogLevel::warn, std::string("arm store: skipping bad line: ") + e.what());
            }
        }
    }
}

ArmAssignment ArmRegistry::assign(const std::string& encounter_id, Timestamp at, bool eligible) {
    {
        std::shared_lock lock(mu_);
        if (auto it = assignments_.find(encounter_id); it != assignments_.end()) return it->second;
    }
    std::unique_lock lock(mu_);
    if (auto it = assignments_.find(encounter_id); it != assignments_.end()) return it->second;
    ArmAssignment a{encounter_id, draw_arm(seed_, encounter_id), at, eligible};
    if (path_) {
        std::ofstream out(*path_, std::ios::app);
        out << a.to_json().dump() << '\n';
        out.flush();
        if (!out) throw TransportError("cannot persist arm assignment for " + encounter_id);
    }
    assignments_.emplace(encounter_id, a);
    return a;
}

std::optional<ArmAssignment> ArmRegistry::find(const std::string& encounter_id) const {
    std::shared_lock lock(mu_);
    auto it = assignments_.find(encounter_id);
    if (it == assignments_.end()) return std::nullopt;
    return it->second;
}

std::vector<ArmAssignment> ArmRegistry::all() const {
    std::shared_lock lock(mu_);
    std::vector<ArmAssignment> out;
    for (const auto& [id, a] : assignments_) out.push_back(a);
    return out;
}

std::size_t ArmRegistry::size() const {
    std::shared_lock lock(mu_);
    return assignments_.size();
}

// ---------------------------------------------------------------------------
// AlertEvent

Json AlertEvent::to_json() const {
    return Json{{"event_id", event_id},
                {"encounter_id", encounter_id},
                {"arm", static_cast<int>(arm)},
                {"triggered_at", format_rfc3339(triggered_at)},
                {"displayed", displayed},
                {"gate", gate.to_json()},
                {"outcome", outcome ? outcome->to_json() : Json()},
                {"order_id", order_id},
                {"clinician_id", clinician_id}};
}

AlertEvent AlertEvent::from_json(const Json& j) {
    AlertEvent e;
    e.event_id = require<std::string>(j, "event_id", "alert event");
    e.encounter_id = require<std::string>(j, "encounter_id", "alert event");
    const int arm = require<int>(j, "arm", "alert event");
    if (arm != 1 && arm != 2) throw ParseError("arm must be 1 or 2");
    e.arm = static_cast<Arm>(arm);
    e.triggered_at = parse_rfc3339(require<std::string>(j, "triggered_at", "alert event"));
    e.displayed = require<bool>(j, "displayed", "alert event");
    e.gate = GateDecision::from_json(j.at("gate"));
    if (auto o = j.find("outcome"); o != j.end() && !o->is_null()) e.outcome = AlertOutcome::from_json(*o);
    e.order_id = j.value("order_id", "");
    e.clinician_id = j.value("clinician_id", "");
    if (e.displayed && e.arm != Arm::treatment) throw ParseError("control-arm event marked displayed");
    return e;
}

// ---------------------------------------------------------------------------
// EventLog

EventLog::EventLog(std::optional<std::filesystem::path> path) {
    if (!path) return;
    if (std::filesystem::exists(*path)) {
        for (const auto& line : lines_of(read_text_file(*path))) {
            const Json entry = Json::parse(line);
            const std::string kind = entry.value("entry", "");
            if (kind == "event") {
                AlertEvent e = AlertEvent::from_json(entry.at("data"));
                by_id_[e.event_id] = events_.size();
                if (e.triggered()) triggers_[e.encounter_id].push_back(e.triggered_at);
                events_.push_back(std::move(e));
            } else if (kind == "outcome") {
                AlertOutcome o = AlertOutcome::from_json(entry.at("data"));
                if (auto it = by_id_.find(o.alert_event_id); it != by_id_.end()) events_[it->second].outcome = o;
            }
        }
        next_id_ = events_.size() + 1;
    }
    file_ = std::fopen(path->c_str(), "a");
    if (!file_) throw TransportError("cannot open event log '" + path->string() + "'");
}

EventLog::~EventLog() {
    if (file_) std::fclose(file_);
}

void EventLog::persist(const Json& entry) {
    if (!file_) return;
    const std::string line = entry.dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fflush(file_) != 0) {
        throw TransportError("event log write failed");
    }
}

AlertEvent EventLog::record_alert(const OrderAttempt& attempt, const GateDecision& gate, Arm arm) {
    std::unique_lock lock(mu_);
    AlertEvent e;
    char id[32];
    std::snprintf(id, sizeof id, "evt-%06llu", static_cast<unsigned long long>(next_id_));
    e.event_id = id;
    e.encounter_id = attempt.encounter_id;
    e.arm = arm;
    e.triggered_at = attempt.attempted_at;
    e.displayed = gate.show && arm == Arm::treatment;
    e.gate = gate;
    e.order_id = attempt.order.order_id;
    e.clinician_id = attempt.clinician_id;
    persist(Json{{"entry", "event"}, {"data", e.to_json()}});
    ++next_id_;
    by_id_[e.event_id] = events_.size();
    if (e.triggered()) triggers_[e.encounter_id].push_back(e.triggered_at);
    events_.push_back(e);
    return e;
}

void EventLog::record_outcome(const AlertOutcome& outcome) {
    outcome.validate();
    std::unique_lock lock(mu_);
    auto it = by_id_.find(outcome.alert_event_id);
    if (it == by_id_.end()) throw NotFound("alert event " + outcome.alert_event_id);
    AlertEvent& e = events_[it->second];
    if (!e.displayed) throw ConflictError("alert event " + e.event_id + " was not displayed");
    if (e.outcome) throw ConflictError("alert event " + e.event_id + " already has an outcome");
    persist(Json{{"entry", "outcome"}, {"data", outcome.to_json()}});
    e.outcome = outcome;
}

std::optional<AlertEvent> EventLog::find(const std::string& event_id) const {
    std::shared_lock lock(mu_);
    auto it = by_id_.find(event_id);
    if (it == by_id_.end()) return std::nullopt;
    return events_[it->second];
}

std::vector<AlertEvent> EventLog::events() const {
    std::shared_lock lock(mu_);
    return events_;
}

std::optional<Timestamp> EventLog::last_trigger(const std::string& encounter_id, Timestamp at) const {
    std::shared_lock lock(mu_);
    auto it = triggers_.find(encounter_id);
    if (it == triggers_.end()) return std::nullopt;
    std::optional<Timestamp> best;
    for (auto t : it->second) {
        if (t <= at && (!best || t > *best)) best = t;
    }
    return best;
}

std::size_t EventLog::size() const {
    std::shared_lock lock(mu_);
    return events_.size();
}

// ---------------------------------------------------------------------------
// Export

std::string export_events(std::span<const AlertEvent> events, std::optional<Timestamp> from,
                          std::optional<Timestamp> to) {
    std::vector<const AlertEvent*> selected;
    for (const auto& e : events) {
        if (from && e.triggered_at < *from) continue;
        if (to && e.triggered_at >= *to) continue;
        selected.push_back(&e);
    }
    std::sort(selected.begin(), selected.end(), [](const AlertEvent* a, const AlertEvent* b) {
        return std::tie(a->triggered_at, a->event_id) < std::tie(b->triggered_at, b->event_id);
    });
    Json window = Json::object();
    window["from"] = from ? Json(format_rfc3339(*from)) : Json();
    window["to"] = to ? Json(format_rfc3339(*to)) : Json();
    std::string out = Json{{"schema", "smartalert-events/1"}, {"window", window}, {"count", selected.size()}}.dump();
    out += '\n';
    for (const auto* e : selected) {
        out += e->to_json().dump();
        out += '\n';
    }
    return out;
}

std::vector<AlertEvent> import_events(std::string_view text) {
    const auto lines = lines_of(text);
    if (lines.empty()) throw ParseError("event file is empty");
    Json header;
    try {
        header = Json::parse(lines.front());
    } catch (const Json::exception& e) {
        throw ParseError(std::string("event file header: ") + e.what());
    }
    if (header.value("schema", "") != "smartalert-events/1") throw ParseError("unsupported event file schema");
    std::vector<AlertEvent> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        try {
            out.push_back(AlertEvent::from_json(Json::parse(lines[i])));
        } catch (const Json::exception& e) {
            throw ParseError("event line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    if (header.contains("count") && header["count"].get<std::size_t>() != out.size()) {
        throw ParseError("event file count does not match its records");
    }
    return out;
}

// ---------------------------------------------------------------------------
// EncounterRecord

void EncounterRecord::validate() const {
    if (discharged_at && !(*discharged_at > admitted_at)) {
        throw ValidationError("encounter " + encounter_id + " discharged before admission");
    }
}

std::optional<double> EncounterRecord::length_of_stay_hours() const {
    if (!discharged_at) return std::nullopt;
    return hours_between(admitted_at, *discharged_at);
}

Json EncounterRecord::to_json() const {
    return Json{{"encounter_id", encounter_id},
                {"patient_id", patient_id},
                {"arm", static_cast<int>(arm)},
                {"eligible", eligible},
                {"admitted_at", format_rfc3339(admitted_at)},
                {"discharged_at", discharged_at ? Json(format_rfc3339(*discharged_at)) : Json()},
                {"icu_on_admission", icu_on_admission},
                {"icu_transfer_times", times_json(icu_transfer_times)},
                {"died_in_hospital", died_in_hospital},
                {"readmitted_within_30d", readmitted_within_30d},
                {"demographics",
                 {{"age_years", demographics.age_years},
                  {"sex", std::string(to_string(demographics.sex))},
                  {"race", std::string(to_string(demographics.race))}}},
                {"cbc_draws", times_json(cbc_draws)}};
}

EncounterRecord EncounterRecord::from_json(const Json& j) {
    EncounterRecord r;
    r.encounter_id = require<std::string>(j, "encounter_id", "encounter record");
    r.patient_id = j.value("patient_id", "");
    const int arm = require<int>(j, "arm", "encounter record");
    if (arm != 1 && arm != 2) throw ParseError("arm must be 1 or 2");
    r.arm = static_cast<Arm>(arm);
    r.eligible = j.value("eligible", true);
    r.admitted_at = parse_rfc3339(require<std::string>(j, "admitted_at", "encounter record"));
    if (auto d = j.find("discharged_at"); d != j.end() && !d->is_null()) {
        r.discharged_at = parse_rfc3339(d->get<std::string>());
    }
    r.icu_on_admission = j.value("icu_on_admission", false);
    if (j.contains("icu_transfer_times")) r.icu_transfer_times = times_from(j.at("icu_transfer_times"));
    r.died_in_hospital = j.value("died_in_hospital", false);
    r.readmitted_within_30d = j.value("readmitted_within_30d", false);
    if (auto d = j.find("demographics"); d != j.end()) {
        r.demographics.age_years = d->value("age_years", 0.0);
        r.demographics.sex = parse_sex(d->value("sex", "unknown"));
        r.demographics.race = parse_race(d->value("race", "unknown"));
    }
    if (j.contains("cbc_draws")) r.cbc_draws = times_from(j.at("cbc_draws"));
    r.validate();
    return r;
}

std::string export_encounters(std::span<const EncounterRecord> records) {
    std::vector<const EncounterRecord*> sorted;
    for (const auto& r : records) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](const EncounterRecord* a, const EncounterRecord* b) { return a->encounter_id < b->encounter_id; });
    std::string out = Json{{"schema", "smartalert-encounters/1"}, {"count", sorted.size()}}.dump();
    out += '\n';
    for (const auto* r : sorted) {
        out += r->to_json().dump();
        out += '\n';
    }
    return out;
}

std::vector<EncounterRecord> import_encounters(std::string_view text) {
    const auto lines = lines_of(text);
    if (lines.empty()) throw ParseError("encounter file is empty");
    Json header;
    try {
        header = Json::parse(lines.front());
    } catch (const Json::exception& e) {
        throw ParseError(std::string("encounter file header: ") + e.what());
    }
    if (header.value("schema", "") != "smartalert-encounters/1") {
        throw ParseError("unsupported encounter file schema");
    }
    std::vector<EncounterRecord> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        try {
            out.push_back(EncounterRecord::from_json(Json::parse(lines[i])));
        } catch (const Json::exception& e) {
            throw ParseError("encounter line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return out;
}

std::vector<Timestamp> panel_draw_times(const LabSeries& labs, std::span<const LabComponent> panel) {
    std::set<Timestamp> times;
    for (const auto& r : labs.results()) {
        if (std::find(panel.begin(), panel.end(), r.component) != panel.end()) times.insert(r.observed_at);
    }
    return {times.begin(), times.end()};
}

} // namespace smartalert
