#include "fixtures.hpp"

#include "smartalert/errors.hpp"
#include "smartalert/fhir.hpp"

#include <doctest.h>

#include <chrono>
#include <random>

using namespace smartalert;
using namespace fixtures;

namespace {

const Timestamp kAdmit = make_utc(2024, 8, 20, 8);

void three_draws(FhirStore& store) {
    add_encounter(store, Encounter{});
    for (int d = 1; d <= 3; ++d) add_cbc(store, "E1", kAdmit + hours(24 * d - 3), 8.0 + d * 0.1, 12.0, 200 + d);
}

} // namespace

TEST_CASE("snapshot with three draws has nine results") {
    FhirStore store;
    three_draws(store);
    LocalFhirSource src(store);
    const auto snap = src.fetch_snapshot("E1", kAdmit + hours(96));
    CHECK(snap.labs.size() == 9);
    for (LabComponent c : kCbcPanel) CHECK(snap.labs.for_component(c).size() == 3);
    CHECK(snap.patient_id == "P1");
    CHECK(snap.admission_at == kAdmit);
    CHECK(snap.unit == "5E");
    CHECK(snap.demographics.sex == Sex::female);
    CHECK(snap.unmapped_observations == 0);
}

TEST_CASE("snapshot before any draw is empty but returned") {
    FhirStore store;
    three_draws(store);
    LocalFhirSource src(store);
    const auto snap = src.fetch_snapshot("E1", kAdmit + hours(1));
    CHECK(snap.labs.empty());
    CHECK(snap.encounter_id == "E1");
}

TEST_CASE("unmapped observation codes are counted and dropped") {
    FhirStore store;
    three_draws(store);
    store.put(fhir::make_lab_observation("odd-1", "E1", "99999-9", 1.0, "U", kAdmit + hours(2)));
    LocalFhirSource src(store);
    const auto snap = src.fetch_snapshot("E1", kAdmit + hours(96));
    CHECK(snap.labs.size() == 9);
    CHECK(snap.unmapped_observations == 1);
}

TEST_CASE("malformed resources are skipped, never fatal") {
    FhirStore store;
    three_draws(store);
    Json bad = fhir::make_lab_observation("bad-1", "E1", LabCodeMap::defaults().code_for(LabComponent::WBC), 1.0,
                                          "K/uL", kAdmit + hours(2));
    bad["valueQuantity"] = "garbage";
    store.put(bad);
    LocalFhirSource src(store);
    const auto snap = src.fetch_snapshot("E1", kAdmit + hours(96));
    CHECK(snap.labs.size() == 9);
    CHECK(snap.skipped_resources == 1);
}

TEST_CASE("snapshot never contains records after as_of") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        FhirStore store;
        add_encounter(store, Encounter{});
        const int n = 1 + static_cast<int>(rng() % 8);
        for (int k = 0; k < n; ++k) add_cbc(store, "E1", kAdmit + Seconds{static_cast<long>(rng() % (7 * 86400))}, 8, 12, 200);
        store.put(fhir::make_procedure("proc", "E1", "bedside-procedure", kAdmit + hours(rng() % 150)));
        store.put(fhir::make_procedure("tx", "E1", "rbc-transfusion", kAdmit + hours(rng() % 150), true));
        LocalFhirSource src(store);
        const Timestamp as_of = kAdmit + Seconds{static_cast<long>(rng() % (8 * 86400))};
        const auto snap = src.fetch_snapshot("E1", as_of);
        for (const auto& r : snap.labs.results()) CHECK(r.observed_at <= as_of);
        for (const auto& p : snap.procedures) CHECK(p.performed_at <= as_of);
        for (const auto& t : snap.transfusions) CHECK(t.performed_at <= as_of);
        // Deterministic for an unchanged store.
        CHECK(snapshot_hash(snap) == snapshot_hash(src.fetch_snapshot("E1", as_of)));
        CHECK(snapshot_to_json(snap).dump() == snapshot_to_json(src.fetch_snapshot("E1", as_of)).dump());
    }
}

TEST_CASE("admitted encounter list") {
    FhirStore store;
    LocalFhirSource src(store);
    CHECK(src.list_admitted_encounters(kAdmit).empty());
    add_encounter(store, Encounter{"E1", "P1", kAdmit - hours(30)});
    add_encounter(store, Encounter{"E2", "P2", kAdmit - hours(5)});
    add_encounter(store, Encounter{"E3", "P3", kAdmit});
    add_encounter(store, Encounter{"E4", "P4", kAdmit - hours(50), kAdmit - hours(1)});
    CHECK(src.list_admitted_encounters(kAdmit) == std::vector<std::string>{"E1", "E2", "E3"});
    // Discharge exactly at as_of is no longer admitted.
    CHECK(src.list_admitted_encounters(kAdmit - hours(1)) == std::vector<std::string>{"E1", "E2"});
}

TEST_CASE("unknown encounter is not found") {
    FhirStore store;
    LocalFhirSource src(store);
    CHECK_THROWS_AS(src.fetch_snapshot("nope", kAdmit), NotFound);
}

TEST_CASE("orders round trip and mutate") {
    FhirStore store;
    three_draws(store);
    LocalFhirSource src(store);
    auto order = daily_order("E1", kAdmit);
    src.put_order(order);
    CHECK(src.get_order(order.order_id) == order);
    order.status = OrderStatus::discontinued;
    src.put_order(order);
    CHECK(src.get_order(order.order_id).status == OrderStatus::discontinued);
    const auto snap = src.fetch_snapshot("E1", kAdmit + hours(1));
    REQUIRE(snap.orders.size() == 1);
    CHECK(snap.orders[0].status == OrderStatus::discontinued);
}

TEST_CASE("dataset load and export round trip") {
    FhirStore store;
    three_draws(store);
    FhirStore copy;
    copy.load_dataset(store.to_dataset());
    CHECK(copy.size() == store.size());
    CHECK(copy.to_dataset() == store.to_dataset());
    CHECK_THROWS_AS(copy.load_dataset(Json{{"bundles", 3}}), ParseError);
}

TEST_CASE("http gateway matches the in-process store") {
    FhirStore store;
    three_draws(store);
    store.put(fhir::make_procedure("tx", "E1", "rbc-transfusion", kAdmit + hours(10), true));
    store.put(fhir::make_medication_request("med", "E1", "heparin", "IV", true, true, kAdmit + hours(2)));
    FixtureServer server(store);
    server.start();
    LocalFhirSource local(store);
    for (auto mode : {HttpFhirClient::FetchMode::search, HttpFhirClient::FetchMode::per_resource}) {
        HttpFhirClient http(server.base_url(), LabCodeMap::defaults(), mode);
        const Timestamp as_of = kAdmit + hours(96);
        CHECK(snapshot_to_json(http.fetch_snapshot("E1", as_of)) == snapshot_to_json(local.fetch_snapshot("E1", as_of)));
        CHECK(http.list_admitted_encounters(as_of) == local.list_admitted_encounters(as_of));
        CHECK_THROWS_AS(http.fetch_snapshot("nope", as_of), NotFound);
    }
    HttpFhirClient http(server.base_url());
    auto order = daily_order("E1", kAdmit);
    http.put_order(order);
    order.status = OrderStatus::discontinued;
    http.put_order(order);
    CHECK(http.get_order(order.order_id).status == OrderStatus::discontinued);
    CHECK(local.get_order(order.order_id).status == OrderStatus::discontinued);
    server.stop();
    CHECK_THROWS_AS(http.fetch_snapshot("E1", kAdmit), TransportError);
}

TEST_CASE("injected latency accumulates per request") {
    FhirStore store;
    add_encounter(store, Encounter{});
    // 13 draws x 3 components = 39 observations + 1 order = 40 resources.
    for (int d = 0; d < 13; ++d) add_cbc(store, "E1", kAdmit + hours(6 * d + 1), 8, 12, 200);
    LocalFhirSource(store).put_order(daily_order("E1", kAdmit));
    FixtureServer server(store, std::chrono::milliseconds(200));
    server.start();
    HttpFhirClient http(server.base_url(), LabCodeMap::defaults(), HttpFhirClient::FetchMode::per_resource);
    const auto started = std::chrono::steady_clock::now();
    const auto snap = http.fetch_snapshot("E1", kAdmit + hours(96));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    CHECK(snap.labs.size() == 39);
    CHECK(snap.orders.size() == 1);
    CHECK(secs >= 8.0);
    server.stop();
}
