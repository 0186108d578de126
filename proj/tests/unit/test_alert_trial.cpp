#include "fixtures.hpp"

#include "smartalert/alert.hpp"
#include "smartalert/errors.hpp"
#include "smartalert/trial.hpp"

#include <doctest.h>

#include <filesystem>

using namespace smartalert;
using namespace fixtures;

namespace {

// 17:00Z in late August is 10:00 Pacific; 02:00Z the next day is 19:00.
const Timestamp kTen = make_utc(2024, 8, 25, 17);
const Timestamp kSeven = make_utc(2024, 8, 26, 2);

PatientSnapshot clean_snapshot(Timestamp as_of) {
    PatientSnapshot s;
    s.encounter_id = "E1";
    s.patient_id = "P1";
    s.as_of = as_of;
    s.admission_at = as_of - hours(72);
    s.unit = "5E";
    s.service = "MED";
    s.labs = LabSeries("E1");
    return s;
}

OrderAttempt attempt_at(Timestamp t) { return OrderAttempt{"E1", daily_order("E1", t - hours(24)), t, "clin"}; }

GateDecision gate(Timestamp t, double p, const PatientSnapshot& s, std::optional<Timestamp> last = std::nullopt) {
    return evaluate_gate(attempt_at(t), s, prediction("E1", t - hours(2), p), AlertConfig{}, last);
}

} // namespace

TEST_CASE("gate examples") {
    auto d = gate(kTen, 0.92, clean_snapshot(kTen));
    CHECK(d.show);
    CHECK(d.reasons.empty());
    REQUIRE(d.prediction_used);
    CHECK(*d.staleness_hours == doctest::Approx(2.0));

    d = gate(kSeven, 0.92, clean_snapshot(kSeven));
    CHECK_FALSE(d.show);
    CHECK(d.reasons == std::vector{GateReason::outside_display_hours});

    d = gate(kTen, 0.90, clean_snapshot(kTen));
    CHECK(d.reasons == std::vector{GateReason::prob_at_or_below_threshold});

    auto s = clean_snapshot(kTen);
    s.transfusions.push_back({kTen - hours(24)});
    d = gate(kTen, 0.95, s);
    CHECK(d.reasons == std::vector{GateReason::recent_transfusion});
}

TEST_CASE("every gate clause reports its reason") {
    auto s = clean_snapshot(kTen);
    s.procedures.push_back({"bedside-procedure", kTen - hours(47)});
    CHECK(gate(kTen, 0.95, s).reasons == std::vector{GateReason::recent_procedure});
    s = clean_snapshot(kTen);
    s.medications.push_back({"heparin", "IV", true, true, kTen - hours(5)});
    CHECK(gate(kTen, 0.95, s).reasons == std::vector{GateReason::on_iv_heparin});
    s.medications = {{"heparin", "SC", true, false, kTen - hours(5)}};
    CHECK(gate(kTen, 0.95, s).show);
    s = clean_snapshot(kTen);
    s.service = "BMT";
    CHECK(gate(kTen, 0.95, s).reasons == std::vector{GateReason::excluded_population});

    auto a = attempt_at(kTen);
    a.order.frequency = OrderFrequency::every_other_day;
    auto d = evaluate_gate(a, clean_snapshot(kTen), prediction("E1", kTen - hours(1), 0.95), AlertConfig{});
    CHECK(d.reasons == std::vector{GateReason::not_daily_frequency});

    d = evaluate_gate(attempt_at(kTen), clean_snapshot(kTen), std::nullopt, AlertConfig{});
    CHECK(d.reasons == std::vector{GateReason::no_prediction});
    d = evaluate_gate(attempt_at(kTen), clean_snapshot(kTen), prediction("E1", kTen - hours(9), 0.95), AlertConfig{});
    CHECK(d.reasons == std::vector{GateReason::stale_prediction});

    CHECK(gate(kTen, 0.95, clean_snapshot(kTen), kTen - hours(3)).reasons == std::vector{GateReason::snoozed});
    CHECK(gate(kTen, 0.95, clean_snapshot(kTen), kTen - hours(24)).show);

    // Several failures at once are all listed.
    s = clean_snapshot(kSeven);
    s.transfusions.push_back({kSeven - hours(1)});
    d = gate(kSeven, 0.5, s);
    CHECK(d.reasons.size() == 3);
    // Same inputs, same decision.
    CHECK(gate(kSeven, 0.5, s) == d);
}

TEST_CASE("payload shows the newest three results") {
    const auto reg = ThresholdRegistry::defaults();
    auto s = clean_snapshot(kTen);
    for (int d = 0; d < 5; ++d) {
        s.labs.add(lab(LabComponent::WBC, 8.0 + d, kTen - hours(24 * (5 - d))));
        s.labs.add(lab(LabComponent::PLT, 200.0, kTen - hours(24 * (5 - d))));
    }
    s.labs.add(lab(LabComponent::HGB, 9.1, kTen - hours(30)));
    s.labs.add(lab(LabComponent::HGB, 7.8, kTen - hours(6)));
    const auto p = build_payload(s, prediction("E1", kTen - hours(1), 0.95), reg, AlertConfig{});
    REQUIRE(p.rows.size() == 3);
    CHECK(p.rows[0].component == LabComponent::WBC);
    REQUIRE(p.rows[0].cells.size() == 3);
    CHECK(p.rows[0].cells[0].value == 12.0);
    CHECK(p.rows[0].cells[2].value == 10.0);
    CHECK(p.rows[0].cells[0].flag == "H");
    CHECK(p.rows[1].cells.size() == 2);
    CHECK(p.rows[1].cells[0].value == 7.8);
    CHECK(p.rows[1].cells[0].abnormal);
    CHECK(p.rows[1].cells[0].flag == "L");
    CHECK_FALSE(p.rows[2].cells[0].abnormal);
    CHECK(p.options == std::vector<std::string>{"acknowledge_continue", "discontinue", "every_other_day", "weekly"});
    CHECK(p.acknowledge_reasons.size() == 5);
    CHECK(p.probability_statement == ">90% stability");
}

TEST_CASE("clinician actions") {
    FhirStore store;
    add_encounter(store, Encounter{"E1", "P1", kTen - hours(72), std::nullopt});
    LocalFhirSource gw(store);
    const auto order = gw.put_order(daily_order("E1", kTen - hours(24)));

    AlertOutcome ack{"A1", AlertAction::acknowledged_continue, std::nullopt, kTen};
    CHECK_THROWS_AS(apply_action(ack, order.order_id, gw), ValidationError);
    ack.acknowledge_reason = "Medical Necessity (TPN, diuresis)";
    auto r = apply_action(ack, order.order_id, gw);
    CHECK(r.original == order);
    CHECK_FALSE(r.replacement);

    AlertOutcome eod{"A2", AlertAction::reduced_every_other_day, std::nullopt, kTen};
    r = apply_action(eod, order.order_id, gw);
    CHECK(r.original.status == OrderStatus::discontinued);
    REQUIRE(r.replacement);
    CHECK(r.replacement->frequency == OrderFrequency::every_other_day);
    CHECK(r.replacement->replaces == order.order_id);
    CHECK(gw.get_order(order.order_id).status == OrderStatus::discontinued);
    // Exactly one active CBC order remains.
    const auto snap = gw.fetch_snapshot("E1", kTen);
    int active = 0;
    for (const auto& o : snap.orders) active += o.is_active_at(kTen);
    CHECK(active == 1);

    AlertOutcome stop{"A3", AlertAction::discontinued, std::nullopt, kTen};
    CHECK_THROWS_AS(apply_action(stop, order.order_id, gw), ConflictError);
    apply_action(stop, r.replacement->order_id, gw);
    active = 0;
    for (const auto& o : gw.fetch_snapshot("E1", kTen).orders) active += o.is_active_at(kTen);
    CHECK(active == 0);
}

TEST_CASE("arm assignment") {
    ArmRegistry reg(17);
    const auto a = reg.assign("E1", kTen);
    CHECK(reg.assign("E1", kTen + hours(5)) == a);
    const auto x = reg.assign("EX", kTen, false);
    CHECK_FALSE(x.eligible);
    CHECK(reg.find("EX"));

    std::size_t treat = 0;
    for (int i = 0; i < 10000; ++i) treat += draw_arm(2024, "enc-" + std::to_string(i)) == Arm::treatment;
    const double share = static_cast<double>(treat) / 10000.0;
    CHECK(share >= 0.48);
    CHECK(share <= 0.52);

    const auto dir = std::filesystem::temp_directory_path() / "smartalert_arms";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    {
        ArmRegistry persisted(17, dir / "arms.jsonl");
        persisted.assign("E1", kTen);
        persisted.assign("E2", kTen);
    }
    ArmRegistry reopened(17, dir / "arms.jsonl");
    CHECK(reopened.size() == 2);
    CHECK(reopened.find("E1")->arm == a.arm);
    std::filesystem::remove_all(dir);
}

TEST_CASE("alert recording by arm") {
    EventLog log;
    GateDecision show;
    show.show = true;
    auto e = log.record_alert(attempt_at(kTen), show, Arm::control);
    CHECK_FALSE(e.displayed);
    CHECK(e.triggered());
    e = log.record_alert(attempt_at(kTen + hours(1)), show, Arm::treatment);
    CHECK(e.displayed);
    const auto suppressed = gate(kSeven, 0.95, clean_snapshot(kSeven));
    e = log.record_alert(attempt_at(kSeven), suppressed, Arm::treatment);
    CHECK_FALSE(e.displayed);
    CHECK(e.gate.reasons == std::vector{GateReason::outside_display_hours});
    CHECK(log.size() == 3);
    CHECK(log.last_trigger("E1", kSeven) == kTen + hours(1));

    const auto control_id = log.events()[0].event_id;
    CHECK_THROWS_AS(log.record_outcome({control_id, AlertAction::discontinued, std::nullopt, kTen}), ConflictError);
    CHECK_THROWS_AS(log.record_outcome({"missing", AlertAction::discontinued, std::nullopt, kTen}), NotFound);
    const auto shown_id = log.events()[1].event_id;
    log.record_outcome({shown_id, AlertAction::discontinued, std::nullopt, kTen + hours(1)});
    CHECK(log.find(shown_id)->outcome->action == AlertAction::discontinued);
    CHECK_THROWS_AS(log.record_outcome({shown_id, AlertAction::discontinued, std::nullopt, kTen}), ConflictError);
}

TEST_CASE("event export") {
    const std::string empty = export_events({}, kTen, kTen + hours(1));
    CHECK(empty.find("smartalert-events/1") != std::string::npos);
    CHECK(std::count(empty.begin(), empty.end(), '\n') == 1);
    CHECK(import_events(empty).empty());

    EventLog log;
    GateDecision show;
    show.show = true;
    show.prediction_used = prediction("E1", kTen - hours(1), 0.95);
    show.staleness_hours = 1.0;
    log.record_alert(attempt_at(kTen + hours(2)), show, Arm::treatment);
    log.record_alert(attempt_at(kTen), show, Arm::control);
    log.record_alert(attempt_at(kTen + hours(1)), gate(kSeven, 0.3, clean_snapshot(kSeven)), Arm::treatment);
    log.record_outcome({log.events()[0].event_id, AlertAction::acknowledged_continue, std::string("Other"),
                        kTen + hours(2)});
    const auto events = log.events();
    const std::string text = export_events(events);
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);
    const auto back = import_events(text);
    REQUIRE(back.size() == 3);
    CHECK(back[0].triggered_at == kTen);
    CHECK(back[1].triggered_at == kTen + hours(1));
    CHECK(back[2].triggered_at == kTen + hours(2));
    for (const auto& b : back) {
        auto it = std::find_if(events.begin(), events.end(), [&](const AlertEvent& e) { return e.event_id == b.event_id; });
        REQUIRE(it != events.end());
        CHECK(*it == b);
    }
    CHECK(export_events(back) == text);
    // Window filter is half-open.
    CHECK(import_events(export_events(events, kTen, kTen + hours(2))).size() == 2);
}

TEST_CASE("encounter records") {
    EncounterRecord r;
    r.encounter_id = "E1";
    r.patient_id = "P1";
    r.admitted_at = kTen;
    r.discharged_at = kTen + hours(50);
    r.cbc_draws = {kTen + hours(1), kTen + hours(20)};
    CHECK(*r.length_of_stay_hours() == 50.0);
    const std::vector<EncounterRecord> rs{r};
    CHECK(import_encounters(export_encounters(rs)) == rs);
    r.discharged_at = kTen - hours(1);
    CHECK_THROWS_AS(r.validate(), ValidationError);

    LabSeries s("E1", {lab(LabComponent::WBC, 8, kTen), lab(LabComponent::HGB, 12, kTen),
                       lab(LabComponent::PLT, 200, kTen + hours(24)), lab(LabComponent::NA, 140, kTen + hours(30))});
    CHECK(panel_draw_times(s) == std::vector<Timestamp>{kTen, kTen + hours(24)});
}
