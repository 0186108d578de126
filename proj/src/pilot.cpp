#include "smartalert/cohort.hpp"

#include "smartalert/errors.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace smartalert {

namespace {

enum class EventKind { admit = 0, stat_draw = 1, morning_draw = 2, attempt = 3 };

struct PlannedEvent {
    Timestamp at;
    EventKind kind;
    std::size_t plan;
};

struct EncounterState {
    std::optional<StandingOrder> order;
    int order_seq = 0;
    std::vector<Timestamp> draws;
    std::mt19937_64 behavior;
};

double uniform(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

Seconds seconds_of(double s) { return Seconds{static_cast<std::int64_t>(std::llround(s))}; }

// Days between the order start and a draw, in local calendar days.
bool draw_due(const StandingOrder& order, Timestamp t, const HospitalZone& zone) {
    const auto elapsed = zone.local_day(t) - zone.local_day(order.start_at);
    switch (order.frequency) {
    case OrderFrequency::daily_or_higher: return true;
    case OrderFrequency::every_other_day: return elapsed > 0 && elapsed % 2 == 0;
    case OrderFrequency::weekly: return elapsed > 0 && elapsed % 7 == 0;
    }
    return true;
}

AlertAction sample_action(const BehaviorConfig& b, std::mt19937_64& rng) {
    double u = uniform(rng);
    if ((u -= b.p_discontinue) < 0) return AlertAction::discontinued;
    if ((u -= b.p_every_other_day) < 0) return AlertAction::reduced_every_other_day;
    if ((u -= b.p_weekly) < 0) return AlertAction::reduced_weekly;
    if ((u -= b.p_cancel_dialog) < 0) return AlertAction::cancelled_dialog;
    return AlertAction::acknowledged_continue;
}

std::vector<PlannedEvent> plan_events(const std::vector<EncounterPlan>& plans, const CohortConfig& config,
                                      const HospitalZone& zone, Timestamp end) {
    std::vector<PlannedEvent> out;
    const auto& b = config.behavior;
    for (std::size_t i = 0; i < plans.size(); ++i) {
        const auto& p = plans[i];
        std::mt19937_64 rng(stream_seed(config.seed, p.encounter_id + "/schedule"));
        const Timestamp stay_end = std::min(p.discharged_at.value_or(end), end);
        out.push_back({p.admitted_at, EventKind::admit, i});
        if (p.admitted_at + minutes(30) < stay_end) out.push_back({p.admitted_at + minutes(30), EventKind::stat_draw, i});
        for (auto day = zone.local_day(p.admitted_at); day <= zone.local_day(stay_end); ++day) {
            const double jitter =
                std::clamp(std::normal_distribution<double>(0.0, b.draw_jitter_minutes)(rng),
                           -3.0 * b.draw_jitter_minutes, 3.0 * b.draw_jitter_minutes);
            const Timestamp draw = zone.from_local(day, b.draw_minute) + seconds_of(jitter * 60.0);
            if (draw > p.admitted_at + minutes(30) && draw < stay_end) out.push_back({draw, EventKind::morning_draw, i});

            const bool off_hours = uniform(rng) < b.off_hours_fraction;
            const double minute = off_hours ? 18 * 60 + uniform(rng) * 6 * 60 : 7 * 60 + uniform(rng) * 11 * 60;
            const Timestamp attempt = zone.from_local(day, static_cast<int>(minute)) + seconds_of(uniform(rng) * 59.0);
            if (attempt > p.admitted_at + minutes(30) && attempt < stay_end) {
                out.push_back({attempt, EventKind::attempt, i});
            }
        }
    }
    std::sort(out.begin(), out.end(), [](const PlannedEvent& a, const PlannedEvent& b) {
        return std::tie(a.at, a.kind, a.plan) < std::tie(b.at, b.kind, b.plan);
    });
    return out;
}

} // namespace

PilotResult run_pilot(const CohortConfig& config, const ModelArtifact& artifact, const AlertConfig& alert,
                      const ThresholdRegistry& registry) {
    config.validate();
    const HospitalZone zone(config.time_zone);
    AlertConfig gate_config = alert;
    gate_config.zone = zone;
    const auto& behavior = config.behavior;
    const Timestamp end = config.start + hours(24LL * config.duration_days);
    const auto plans = make_plans(config, config.seed, config.n_encounters);
    const LabCodeMap codes = LabCodeMap::defaults();

    FhirStore fhir_store;
    for (const auto& plan : plans) {
        for (const auto& r : plan_resources(plan)) fhir_store.put(r);
    }
    LocalFhirSource gateway(fhir_store, codes);
    PredictionStore predictions;
    PredictionPipeline pipeline(gateway, Predictor(std::make_shared<const ModelArtifact>(artifact)), predictions);
    SimulatedClock clock(config.start);
    Scheduler scheduler(Scheduler::runner_for(pipeline), clock, predictions, config.start, hours(6));
    const std::uint64_t trial_seed = config.trial_seed ? config.trial_seed : stream_seed(config.seed, "trial");
    ArmRegistry arms(trial_seed);
    EventLog events;

    std::vector<EncounterState> state(plans.size());
    std::vector<LabProcess> labs;
    labs.reserve(plans.size());
    for (std::size_t i = 0; i < plans.size(); ++i) {
        state[i].behavior.seed(stream_seed(config.seed, plans[i].encounter_id + "/behavior"));
        labs.emplace_back(plans[i], config, registry, config.seed);
    }

    PilotResult result;
    std::map<std::string, LabSeries> series;

    auto new_order = [&](std::size_t i, Timestamp t) {
        StandingOrder o;
        o.order_id = plans[i].encounter_id + "-cbc-" + std::to_string(++state[i].order_seq);
        o.encounter_id = plans[i].encounter_id;
        o.start_at = t;
        o.end_at = t + behavior.order_duration;
        state[i].order = gateway.put_order(o);
    };

    auto draw = [&](std::size_t i, Timestamp t) {
        const auto& plan = plans[i];
        auto drawn = labs[i].draw(t);
        for (const auto& r : lab_resources(plan.encounter_id, drawn, codes, registry)) fhir_store.put(r);
        auto [it, _] = series.try_emplace(plan.encounter_id, plan.encounter_id, std::vector<LabResult>{});
        for (const auto& r : drawn) it->second.add(r);
        state[i].draws.push_back(t);
    };

    auto attempt = [&](std::size_t i, Timestamp t) {
        const auto& plan = plans[i];
        EncounterState& s = state[i];
        if (s.order && s.order->is_active_at(t)) {
            if (uniform(s.behavior) >= behavior.renewal_probability) return;
            StandingOrder renewed = *s.order;
            renewed.end_at = t + behavior.order_duration;
            s.order = gateway.put_order(renewed);
        } else {
            if (uniform(s.behavior) >= behavior.reorder_probability) return;
            new_order(i, t);
        }
        ++result.order_attempts;
        const OrderAttempt request{plan.encounter_id, *s.order, t, "clin-" + plan.unit};
        GateDecision gate;
        try {
            const PatientSnapshot snapshot = gateway.fetch_snapshot(plan.encounter_id, t);
            std::optional<StabilityPrediction> latest;
            if (auto lp = predictions.latest(plan.encounter_id, t)) latest = lp->prediction;
            gate = evaluate_gate(request, snapshot, latest, gate_config, events.last_trigger(plan.encounter_id, t));
        } catch (const std::exception&) {
            gate.show = false;
            gate.reasons = {GateReason::gate_error};
        }
        const Arm arm = arms.assign(plan.encounter_id, t, !plan.excluded_population).arm;
        const AlertEvent event = events.record_alert(request, gate, arm);
        if (!event.displayed) return;
        AlertOutcome outcome;
        outcome.alert_event_id = event.event_id;
        outcome.action = sample_action(behavior, s.behavior);
        if (outcome.action == AlertAction::acknowledged_continue) {
            const auto& reasons = gate_config.acknowledge_reasons;
            outcome.acknowledge_reason =
                reasons[static_cast<std::size_t>(uniform(s.behavior) * static_cast<double>(reasons.size())) %
                        reasons.size()];
        }
        outcome.acted_at = t;
        const ActionResult applied = apply_action(outcome, s.order->order_id, gateway);
        events.record_outcome(outcome);
        s.order = applied.replacement ? applied.replacement : std::optional<StandingOrder>(applied.original);
    };

    for (const auto& ev : plan_events(plans, config, zone, end)) {
        scheduler.run_until(ev.at);
        if (clock.now() < ev.at) clock.set(ev.at);
        const std::size_t i = ev.plan;
        switch (ev.kind) {
        case EventKind::admit:
            arms.assign(plans[i].encounter_id, ev.at, !plans[i].excluded_population);
            new_order(i, ev.at);
            break;
        case EventKind::stat_draw: draw(i, ev.at); break;
        case EventKind::morning_draw:
            if (state[i].order && state[i].order->is_active_at(ev.at) && draw_due(*state[i].order, ev.at, zone)) {
                // Cross-check against the order of record on the gateway.
                if (!gateway.get_order(state[i].order->order_id).is_active_at(ev.at)) ++result.draws_after_discontinue;
                draw(i, ev.at);
            }
            break;
        case EventKind::attempt: attempt(i, ev.at); break;
        }
    }
    scheduler.run_until(end);

    for (const auto& r : fhir_store.of_type("ServiceRequest")) {
        result.orders.push_back(fhir::service_request_to_order(r));
    }
    for (std::size_t i = 0; i < plans.size(); ++i) {
        const auto& plan = plans[i];
        EncounterRecord rec;
        rec.encounter_id = plan.encounter_id;
        rec.patient_id = plan.patient_id;
        if (auto a = arms.find(plan.encounter_id)) rec.arm = a->arm;
        rec.eligible = !plan.excluded_population;
        rec.admitted_at = plan.admitted_at;
        rec.discharged_at = plan.discharged_at;
        rec.icu_on_admission = plan.icu_on_admission;
        rec.icu_transfer_times = plan.icu_transfers;
        rec.died_in_hospital = plan.died;
        rec.readmitted_within_30d = plan.readmitted;
        rec.demographics = plan.demographics;
        rec.cbc_draws = state[i].draws;
        result.encounters.push_back(std::move(rec));
    }

    result.events = events.events();
    result.ticks = predictions.ticks();
    result.predictions = predictions.all();
    result.labs = std::move(series);
    result.event_log_hash = hex64(fnv1a64(export_events(result.events)));
    return result;
}

} // namespace smartalert
