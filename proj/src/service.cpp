#include "smartalert/service.hpp"

#include "smartalert/errors.hpp"

#include <httplib.h>

#include <algorithm>
#include <set>
#include <thread>

namespace smartalert {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

Json error_body(std::string_view code, std::string_view message) {
    return Json{{"error", {{"code", code}, {"message", message}}}};
}

ApiResponse fail(int status, std::string_view code, std::string_view message) {
    return {status, error_body(code, message)};
}

Json order_json(const StandingOrder& o) {
    return Json{{"order_id", o.order_id},
                {"encounter_id", o.encounter_id},
                {"panel", o.panel},
                {"frequency", to_string(o.frequency)},
                {"status", to_string(o.status)},
                {"start_at", format_rfc3339(o.start_at)},
                {"end_at", format_rfc3339(o.end_at)},
                {"replaces", o.replaces ? Json(*o.replaces) : Json()}};
}

Timestamp parse_time_field(const Json& body, const char* key, Timestamp fallback) {
    auto it = body.find(key);
    if (it == body.end() || it->is_null()) return fallback;
    if (!it->is_string()) throw ValidationError(std::string(key) + " must be an RFC-3339 string");
    try {
        return parse_rfc3339(it->get<std::string>());
    } catch (const ParseError& e) {
        throw ValidationError(e.what());
    }
}

std::vector<std::string> split_path(std::string_view path) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < path.size()) {
        while (i < path.size() && path[i] == '/') ++i;
        std::size_t j = i;
        while (j < path.size() && path[j] != '/') ++j;
        if (j > i) out.emplace_back(path.substr(i, j - i));
        i = j;
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Config

ServiceConfig ServiceConfig::from_json(const Json& j, const std::filesystem::path& base_dir) {
    ServiceConfig c;
    try {
        c.dataset = resolve(base_dir, require<std::string>(j, "dataset", "service config"));
        c.thresholds = resolve(base_dir, require<std::string>(j, "thresholds", "service config"));
        c.model = resolve(base_dir, require<std::string>(j, "model", "service config"));
        if (j.contains("code_map")) c.code_map = resolve(base_dir, j.at("code_map").get<std::string>());
        if (j.contains("state_dir")) c.state_dir = resolve(base_dir, j.at("state_dir").get<std::string>());
        if (j.contains("scheduler_interval")) c.interval = parse_duration(j.at("scheduler_interval").get<std::string>());
        if (j.contains("scheduler_anchor")) c.anchor = parse_rfc3339(j.at("scheduler_anchor").get<std::string>());
        c.time_zone = j.value("time_zone", c.time_zone);
        Json alert = j.value("alert", Json::object());
        if (!alert.contains("time_zone")) alert["time_zone"] = c.time_zone;
        c.alert = AlertConfig::from_json(alert);
        c.trial_seed = j.value("trial_seed", c.trial_seed);
        if (j.contains("bind")) {
            const auto bind = j.at("bind").get<std::string>();
            const auto colon = bind.rfind(':');
            if (colon == std::string::npos) throw ConfigError("bind must be host:port");
            c.host = bind.substr(0, colon);
            c.port = std::stoi(bind.substr(colon + 1));
        }
        c.gateway = j.value("gateway", c.gateway);
        c.fixture_latency_ms = j.value("fixture_latency_ms", c.fixture_latency_ms);
        if (j.contains("clock_start")) c.clock_start = parse_rfc3339(j.at("clock_start").get<std::string>());
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("service config: ") + e.what());
    } catch (const ParseError& e) {
        throw ConfigError(std::string("service config: ") + e.what());
    } catch (const std::invalid_argument&) {
        throw ConfigError("service config: bad bind port");
    }
    if (c.interval <= Seconds{0}) throw ConfigError("scheduler_interval must be positive");
    if (c.gateway != "local" && c.gateway != "http") throw ConfigError("gateway must be 'local' or 'http'");
    return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
    return from_json(read_json_file(path), path.parent_path());
}

Json ServiceConfig::to_json() const {
    Json j{{"dataset", dataset.string()},
           {"thresholds", thresholds.string()},
           {"model", model.string()},
           {"scheduler_interval", std::to_string(interval.count()) + "s"},
           {"scheduler_anchor", format_rfc3339(anchor)},
           {"alert", alert.to_json()},
           {"trial_seed", trial_seed},
           {"bind", host + ":" + std::to_string(port)},
           {"gateway", gateway},
           {"fixture_latency_ms", fixture_latency_ms},
           {"time_zone", time_zone}};
    if (clock_start) j["clock_start"] = format_rfc3339(*clock_start);
    if (code_map) j["code_map"] = code_map->string();
    if (state_dir) j["state_dir"] = state_dir->string();
    return j;
}

void ServiceConfig::validate() const {
    for (const auto& p : {dataset, thresholds, model}) {
        if (!std::filesystem::exists(p)) throw ConfigError("file not found: " + p.string());
    }
    if (code_map && !std::filesystem::exists(*code_map)) throw ConfigError("file not found: " + code_map->string());
    try {
        HospitalZone{time_zone};
    } catch (const Error& e) {
        throw ConfigError(std::string("time_zone: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Service

struct Service::Owned {
    FhirStore store;
    std::unique_ptr<FixtureServer> fixture;
    std::unique_ptr<FhirSource> gateway;
};

struct Service::Http {
    httplib::Server server;
    std::thread thread;
};

Service::Service(Parts parts) { init(std::move(parts)); }

Service::Service(const ServiceConfig& config, Clock& clock) : owned_(std::make_unique<Owned>()) {
    config.validate();
    const LabCodeMap codes = config.code_map ? LabCodeMap::load(*config.code_map) : LabCodeMap::defaults();
    owned_->store.load_file(config.dataset);
    if (config.gateway == "http") {
        owned_->fixture =
            std::make_unique<FixtureServer>(owned_->store, std::chrono::milliseconds(config.fixture_latency_ms));
        owned_->fixture->start();
        owned_->gateway = std::make_unique<HttpFhirClient>(owned_->fixture->base_url(), codes);
    } else {
        owned_->gateway = std::make_unique<LocalFhirSource>(owned_->store, codes);
    }
    Parts parts;
    parts.gateway = owned_->gateway.get();
    parts.predictor = Predictor(std::make_shared<const ModelArtifact>(ModelArtifact::load(config.model)));
    parts.registry = ThresholdRegistry::load(config.thresholds);
    parts.alert = config.alert;
    parts.trial_seed = config.trial_seed;
    parts.clock = &clock;
    parts.anchor = config.anchor;
    parts.interval = config.interval;
    parts.state_dir = config.state_dir;
    init(std::move(parts));
}

void Service::init(Parts parts) {
    if (!parts.gateway || !parts.clock) throw ContractError("service needs a gateway and a clock");
    gateway_ = parts.gateway;
    clock_ = parts.clock;
    registry_ = std::move(parts.registry);
    alert_ = std::move(parts.alert);
    std::optional<std::filesystem::path> arms_path, events_path;
    if (parts.state_dir) {
        std::filesystem::create_directories(*parts.state_dir);
        predictions_ = std::make_unique<PredictionStore>(*parts.state_dir / "predictions.log");
        arms_path = *parts.state_dir / "arms.jsonl";
        events_path = *parts.state_dir / "events.jsonl";
    } else {
        predictions_ = std::make_unique<PredictionStore>();
    }
    pipeline_ = std::make_unique<PredictionPipeline>(*gateway_, std::move(parts.predictor), *predictions_);
    scheduler_ = std::make_unique<Scheduler>(Scheduler::runner_for(*pipeline_), *clock_, *predictions_, parts.anchor,
                                             parts.interval);
    arms_ = std::make_unique<ArmRegistry>(parts.trial_seed, arms_path);
    events_ = std::make_unique<EventLog>(events_path);
}

Service::~Service() {
    stop();
    if (scheduler_) scheduler_->stop();
    if (owned_ && owned_->fixture) owned_->fixture->stop();
}

ApiResponse Service::handle(std::string_view method, std::string_view path,
                            const std::map<std::string, std::string>& query, std::string_view body) {
    try {
        const auto parts = split_path(path);
        if (parts.empty() || parts[0] != "v1") return fail(404, "not_found", "unknown path");
        auto json_body = [&]() {
            if (body.empty()) return Json::object();
            Json j = Json::parse(body, nullptr, false);
            if (j.is_discarded() || !j.is_object()) throw ValidationError("request body must be a JSON object");
            return j;
        };
        auto as_of = [&]() -> std::optional<Timestamp> {
            auto it = query.find("as_of");
            if (it == query.end() || it->second.empty()) return std::nullopt;
            try {
                return parse_rfc3339(it->second);
            } catch (const ParseError& e) {
                throw ValidationError(e.what());
            }
        };
        const bool get = method == "GET", post = method == "POST";
        if (post && parts.size() == 2 && parts[1] == "order-attempts") return order_attempt(json_body());
        if (post && parts.size() == 4 && parts[1] == "alerts" && parts[3] == "action") {
            return alert_action(parts[2], json_body());
        }
        if (get && parts.size() == 3 && parts[1] == "predictions") return prediction(parts[2], as_of());
        if (get && parts.size() == 4 && parts[1] == "encounters" && parts[3] == "labs") {
            Seconds window = hours(72);
            if (auto it = query.find("window"); it != query.end() && !it->second.empty()) {
                try {
                    window = parse_duration(it->second);
                } catch (const ParseError& e) {
                    throw ValidationError(e.what());
                }
            }
            return labs(parts[2], as_of(), window);
        }
        if (get && parts.size() == 2 && parts[1] == "report") return report();
        if (get && parts.size() == 2 && parts[1] == "health") return health();
        return fail(404, "not_found", "unknown path");
    } catch (const NotFound& e) {
        return fail(404, "not_found", e.what());
    } catch (const ConflictError& e) {
        return fail(409, "conflict", e.what());
    } catch (const ValidationError& e) {
        return fail(422, "validation", e.what());
    } catch (const ParseError& e) {
        return fail(422, "validation", e.what());
    } catch (const TransportError& e) {
        return fail(503, "gateway_unavailable", e.what());
    } catch (const std::exception& e) {
        log(LogLevel::error, std::string("request failed: ") + e.what());
        return fail(500, "internal", e.what());
    }
}

ApiResponse Service::order_attempt(const Json& body) {
    if (!body.contains("encounter_id") || !body.at("encounter_id").is_string()) {
        throw ValidationError("encounter_id is required");
    }
    const std::string encounter_id = body.at("encounter_id").get<std::string>();
    OrderFrequency frequency = OrderFrequency::daily_or_higher;
    if (body.contains("frequency")) {
        if (!body.at("frequency").is_string()) throw ValidationError("frequency must be a string");
        try {
            frequency = parse_frequency(body.at("frequency").get<std::string>());
        } catch (const Error& e) {
            throw ValidationError(e.what());
        }
    }
    const Timestamp t = parse_time_field(body, "attempted_at", clock_->now());
    const std::string clinician = body.value("clinician_id", std::string("console"));

    // Serializes order creation so concurrent attempts do not both create one.
    std::lock_guard lock(order_mu_);
    Json response;
    std::optional<PatientSnapshot> snapshot;
    bool gateway_available = true;
    try {
        snapshot = gateway_->fetch_snapshot(encounter_id, t);
    } catch (const TransportError& e) {
        gateway_available = false;
        log(LogLevel::warn, std::string("order attempt without gateway: ") + e.what());
    }

    StandingOrder order;
    order.encounter_id = encounter_id;
    order.frequency = frequency;
    order.start_at = t;
    order.end_at = t + hours(72);
    if (snapshot) {
        auto active = std::find_if(snapshot->orders.begin(), snapshot->orders.end(),
                                   [&](const StandingOrder& o) { return o.panel == "CBC" && o.is_active_at(t); });
        if (active != snapshot->orders.end()) {
            // Renewal of the order in force.
            order = *active;
            order.frequency = frequency;
            order.end_at = std::max(order.end_at, t + hours(72));
        } else {
            std::set<std::string> taken;
            for (const auto& o : snapshot->orders) taken.insert(o.order_id);
            std::size_t n = taken.size() + 1;
            while (taken.count(encounter_id + "-cbc-" + std::to_string(n))) ++n;
            order.order_id = encounter_id + "-cbc-" + std::to_string(n);
        }
    }

    const OrderAttempt attempt{encounter_id, order, t, clinician};
    GateDecision decision;
    if (snapshot) {
        std::optional<StabilityPrediction> latest;
        if (auto lp = predictions_->latest(encounter_id, t)) latest = lp->prediction;
        decision = evaluate_gate(attempt, *snapshot, latest, alert_, events_->last_trigger(encounter_id, t));
    } else {
        decision.reasons = {GateReason::no_prediction};
    }
    if (snapshot) order = gateway_->put_order(order);

    const ArmAssignment arm = arms_->assign(encounter_id, t);
    const AlertEvent event = events_->record_alert(OrderAttempt{encounter_id, order, t, clinician}, decision, arm.arm);
    response["decision"] = decision.to_json();
    response["arm"] = to_string(arm.arm);
    response["alert_event_id"] = event.event_id;
    response["displayed"] = event.displayed;
    response["gateway_available"] = gateway_available;
    response["order"] = snapshot ? order_json(order) : Json();
    if (event.displayed && decision.prediction_used) {
        response["payload"] = build_payload(*snapshot, *decision.prediction_used, registry_, alert_).to_json();
    } else {
        response["payload"] = nullptr;
    }
    return {200, response};
}

ApiResponse Service::alert_action(const std::string& event_id, const Json& body) {
    const auto event = events_->find(event_id);
    if (!event) throw NotFound("alert event " + event_id);
    if (!event->displayed) throw ConflictError("alert event " + event_id + " was not displayed");
    if (event->outcome) throw ConflictError("alert event " + event_id + " already has an outcome");
    if (!body.contains("action") || !body.at("action").is_string()) throw ValidationError("action is required");
    AlertOutcome outcome;
    outcome.alert_event_id = event_id;
    try {
        outcome.action = parse_action(body.at("action").get<std::string>());
    } catch (const ValidationError&) {
        throw;
    } catch (const Error& e) {
        throw ValidationError(e.what());
    }
    if (body.contains("acknowledge_reason") && body.at("acknowledge_reason").is_string()) {
        outcome.acknowledge_reason = body.at("acknowledge_reason").get<std::string>();
    }
    outcome.acted_at = parse_time_field(body, "acted_at", std::max(clock_->now(), event->triggered_at));
    outcome.validate();
    const ActionResult result = apply_action(outcome, event->order_id, *gateway_);
    events_->record_outcome(outcome);
    Json out = result.to_json();
    out["alert_event_id"] = event_id;
    out["action"] = to_string(outcome.action);
    return {200, out};
}

ApiResponse Service::prediction(const std::string& encounter_id, std::optional<Timestamp> as_of) {
    const Timestamp t = as_of.value_or(clock_->now());
    auto latest = predictions_->latest(encounter_id, t);
    if (!latest) {
        gateway_->read("Encounter", encounter_id); // 404 for an unknown encounter
        throw NotFound("no prediction for " + encounter_id + " at or before " + format_rfc3339(t));
    }
    return {200, Json{{"prediction", latest->prediction.to_json()},
                      {"as_of", format_rfc3339(t)},
                      {"staleness_hours", latest->staleness_hours()}}};
}

ApiResponse Service::labs(const std::string& encounter_id, std::optional<Timestamp> as_of, Seconds window) {
    if (window <= Seconds{0}) throw ValidationError("window must be positive");
    const Timestamp t = as_of.value_or(clock_->now());
    const PatientSnapshot snapshot = gateway_->fetch_snapshot(encounter_id, t);
    Json results = Json::array();
    for (const auto& r : snapshot.labs.results()) {
        if (r.observed_at <= t - window) continue;
        results.push_back(Json{{"component", to_string(r.component)},
                               {"value", r.value},
                               {"unit", registry_.contains(r.component) ? registry_.info(r.component).unit : ""},
                               {"observed_at", format_rfc3339(r.observed_at)},
                               {"status", to_string(r.status)}});
    }
    return {200, Json{{"encounter_id", encounter_id},
                      {"as_of", format_rfc3339(t)},
                      {"window_hours", static_cast<double>(window.count()) / 3600.0},
                      {"results", results}}};
}

ApiResponse Service::report() {
    const auto events = events_->events();
    std::vector<EncounterRecord> records;
    const Timestamp now = clock_->now();
    for (const auto& a : arms_->all()) {
        EncounterRecord rec;
        rec.encounter_id = a.encounter_id;
        rec.arm = a.arm;
        rec.eligible = a.eligible;
        try {
            const Json enc = gateway_->read("Encounter", a.encounter_id);
            rec.patient_id = fhir::patient_reference(enc).value_or("");
            const auto [start, end] = fhir::encounter_period(enc);
            rec.admitted_at = start;
            if (end && *end <= now) rec.discharged_at = end;
            const PatientSnapshot snap = gateway_->fetch_snapshot(a.encounter_id, std::max(now, start));
            rec.demographics = snap.demographics;
            rec.cbc_draws = panel_draw_times(snap.labs);
        } catch (const NotFound&) {
            continue;
        }
        records.push_back(std::move(rec));
    }
    return {200, build_report(events, records).to_json()};
}

ApiResponse Service::health() {
    Json sched{{"running", scheduler_->running()},
               {"ticks_run", scheduler_->ticks_run()},
               {"skipped_total", scheduler_->skipped_total()},
               {"next_boundary", format_rfc3339(scheduler_->next_boundary())},
               {"interval_hours", static_cast<double>(scheduler_->interval().count()) / 3600.0}};
    if (auto last = predictions_->last_tick()) {
        sched["last_tick"] = last->to_json();
    } else {
        sched["last_tick"] = nullptr;
    }
    const Predictor predictor = pipeline_->predictor();
    return {200, Json{{"status", "ok"},
                      {"now", format_rfc3339(clock_->now())},
                      {"scheduler", sched},
                      {"store", {{"predictions", predictions_->size()}, {"encounters", predictions_->encounter_count()}}},
                      {"events", events_->size()},
                      {"model_version", predictor.loaded() ? Json(predictor.artifact().model_version) : Json()}}};
}

// ---------------------------------------------------------------------------
// HTTP binding

namespace {

void mount(httplib::Server& server, Service& service) {
    auto dispatch = [&service](const httplib::Request& req, httplib::Response& res) {
        std::map<std::string, std::string> query;
        for (const auto& [k, v] : req.params) query[k] = v;
        const ApiResponse r = service.handle(req.method, req.path, query, req.body);
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    server.Get(R"(/v1/.*)", dispatch);
    server.Post(R"(/v1/.*)", dispatch);
}

} // namespace

bool Service::listen(const std::string& host, int port) {
    if (!http_) http_ = std::make_unique<Http>();
    mount(http_->server, *this);
    return http_->server.listen(host, port);
}

int Service::start_background(const std::string& host) {
    if (http_) throw ContractError("service already listening");
    http_ = std::make_unique<Http>();
    mount(http_->server, *this);
    const int port = http_->server.bind_to_any_port(host);
    if (port <= 0) throw TransportError("could not bind " + host);
    http_->thread = std::thread([this] { http_->server.listen_after_bind(); });
    http_->server.wait_until_ready();
    return port;
}

void Service::stop() {
    if (!http_) return;
    http_->server.stop();
    if (http_->thread.joinable()) http_->thread.join();
}

} // namespace smartalert
