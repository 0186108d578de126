#include "smartalert/errors.hpp"
#include "smartalert/pipeline.hpp"

#include <chrono>

namespace smartalert {

// ---------------------------------------------------------------------------
// Clocks

Timestamp SimulatedClock::now() const {
    std::lock_guard lock(mu_);
    return now_;
}

bool SimulatedClock::wait_until(Timestamp t, std::stop_token stop) {
    if (stop.stop_requested()) return false;
    std::lock_guard lock(mu_);
    if (t > now_) now_ = t;
    return true;
}

void SimulatedClock::advance(Seconds d) {
    std::lock_guard lock(mu_);
    now_ += d;
}

void SimulatedClock::set(Timestamp t) {
    std::lock_guard lock(mu_);
    now_ = t;
}

Timestamp WallClock::now() const {
    return std::chrono::floor<Seconds>(std::chrono::system_clock::now()) + offset_;
}

bool WallClock::wait_until(Timestamp t, std::stop_token stop) {
    const auto deadline = std::chrono::system_clock::time_point(t.time_since_epoch() - offset_);
    std::unique_lock lock(mu_);
    cv_.wait_until(lock, stop, deadline, [] { return false; });
    return !stop.stop_requested();
}

// ---------------------------------------------------------------------------
// PredictionPipeline

PredictionPipeline::PredictionPipeline(FhirSource& gateway, Predictor predictor, PredictionStore& store,
                                       FeatureConfig features)
    : gateway_(gateway), predictor_(std::move(predictor)), store_(store), features_(std::move(features)) {}

void PredictionPipeline::set_predictor(Predictor predictor) {
    std::lock_guard lock(predictor_mu_);
    predictor_ = std::move(predictor);
}

Predictor PredictionPipeline::predictor() const {
    std::lock_guard lock(predictor_mu_);
    return predictor_;
}

StabilityPrediction PredictionPipeline::compute(const std::string& encounter_id, Timestamp as_of,
                                                const Predictor& predictor) {
    const PatientSnapshot snapshot = gateway_.fetch_snapshot(encounter_id, as_of);
    const FeatureVector fv = extract_features(snapshot, as_of, features_);
    const Prediction p = predictor.predict(fv);
    StabilityPrediction out;
    out.encounter_id = encounter_id;
    out.computed_at = as_of;
    out.component_probability = p.probability;
    out.panel_probability = p.panel_probability;
    out.model_version = predictor.artifact().model_version;
    out.input_snapshot_hash = snapshot_hash(snapshot);
    return out;
}

StabilityPrediction PredictionPipeline::predict_now(const std::string& encounter_id, Timestamp as_of) {
    return compute(encounter_id, as_of, predictor());
}

ScheduleTick PredictionPipeline::execute_tick(Timestamp as_of) {
    const auto started = std::chrono::steady_clock::now();
    ScheduleTick tick;
    tick.tick_at = as_of;
    const Predictor predictor = this->predictor();
    std::vector<std::string> admitted;
    try {
        admitted = gateway_.list_admitted_encounters(as_of);
    } catch (const std::exception& e) {
        tick.gateway_error = true;
        log(LogLevel::error, std::string("tick ") + format_rfc3339(as_of) + ": gateway unavailable: " + e.what());
    }
    for (const auto& id : admitted) {
        ++tick.encounters_attempted;
        try {
            store_.append(compute(id, as_of, predictor));
            ++tick.succeeded;
        } catch (const std::exception& e) {
            ++tick.failed;
            log(LogLevel::warn, "tick " + format_rfc3339(as_of) + ": encounter " + id + " failed: " + e.what());
        }
    }
    tick.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return tick;
}

ScheduleTick PredictionPipeline::run_tick(Timestamp as_of) {
    ScheduleTick tick = execute_tick(as_of);
    store_.append_tick(tick);
    return tick;
}

// ---------------------------------------------------------------------------
// Scheduler

Scheduler::Runner Scheduler::runner_for(PredictionPipeline& pipeline) {
    return [&pipeline](Timestamp t) { return pipeline.execute_tick(t); };
}

Scheduler::Scheduler(Runner runner, Clock& clock, PredictionStore& store, Timestamp t0, Seconds interval)
    : runner_(std::move(runner)), clock_(clock), store_(store), t0_(t0), interval_(interval) {
    if (interval_ <= Seconds{0}) {
        throw ConfigError("scheduler interval must be positive");
    }
    const Timestamp now = clock_.now();
    if (auto last = store_.last_tick()) {
        last_ = last;
        Timestamp after = first_boundary_at_or_after(last->tick_at + Seconds{1});
        next_ = std::max(after, first_boundary_at_or_after(now));
    } else {
        next_ = first_boundary_at_or_after(now);
    }
}

Scheduler::~Scheduler() { stop(); }

Timestamp Scheduler::first_boundary_at_or_after(Timestamp t) const {
    if (t <= t0_) return t0_;
    const auto since = (t - t0_).count();
    const auto step = interval_.count();
    const auto k = (since + step - 1) / step;
    return t0_ + Seconds{k * step};
}

Timestamp Scheduler::next_boundary() const {
    std::lock_guard lock(mu_);
    return next_;
}

std::optional<ScheduleTick> Scheduler::step(std::stop_token stop) {
    Timestamp boundary;
    {
        std::lock_guard lock(mu_);
        if (in_tick_) throw ContractError("scheduler tick already running");
        boundary = next_;
    }
    if (!clock_.wait_until(boundary, stop)) return std::nullopt;
    {
        std::lock_guard lock(mu_);
        in_tick_ = true;
    }
    ScheduleTick tick;
    try {
        tick = runner_(boundary);
    } catch (const std::exception& e) {
        log(LogLevel::error, std::string("tick runner failed: ") + e.what());
        tick = ScheduleTick{};
        tick.gateway_error = true;
    }
    const Timestamp end = clock_.now();
    tick.tick_at = boundary;
    if (end > boundary) tick.duration_seconds = static_cast<double>((end - boundary).count());

    std::lock_guard lock(mu_);
    tick.skipped_boundaries = pending_skips_;
    const Timestamp next = std::max(first_boundary_at_or_after(end), boundary + interval_);
    pending_skips_ = static_cast<std::size_t>((next - boundary) / interval_) - 1;
    skipped_total_ += pending_skips_;
    next_ = next;
    ++ticks_run_;
    in_tick_ = false;
    try {
        store_.append_tick(tick);
    } catch (const std::exception& e) {
        log(LogLevel::error, std::string("could not persist tick: ") + e.what());
    }
    last_ = tick;
    return tick;
}

std::vector<ScheduleTick> Scheduler::run_until(Timestamp end) {
    std::vector<ScheduleTick> out;
    while (next_boundary() <= end) {
        auto tick = step(std::stop_token{});
        if (!tick) break;
        out.push_back(*tick);
    }
    return out;
}

void Scheduler::start() {
    if (thread_.joinable()) return;
    thread_ = std::jthread([this](std::stop_token st) {
        while (!st.stop_requested()) {
            if (!step(st)) break;
        }
    });
}

void Scheduler::stop() {
    if (thread_.joinable()) {
        thread_.request_stop();
        thread_.join();
    }
}

std::size_t Scheduler::ticks_run() const {
    std::lock_guard lock(mu_);
    return ticks_run_;
}

std::size_t Scheduler::skipped_total() const {
    std::lock_guard lock(mu_);
    return skipped_total_;
}

std::optional<ScheduleTick> Scheduler::last_tick() const {
    std::lock_guard lock(mu_);
    return last_;
}

bool Scheduler::running() const { return thread_.joinable(); }

} // namespace smartalert
