#include "fixtures.hpp"

#include "smartalert/errors.hpp"
#include "smartalert/pipeline.hpp"

#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

using namespace smartalert;
using namespace fixtures;

namespace {

const Timestamp kT0 = make_utc(2024, 8, 20, 0);

struct DownGateway : FhirSource {
    Json read(std::string_view, const std::string&) override { throw TransportError("down"); }
    std::vector<Json> search_encounter(std::string_view, const std::string&) override { throw TransportError("down"); }
    std::vector<Json> all_encounters() override { throw TransportError("down"); }
    Json put(const Json&) override { throw TransportError("down"); }
};

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("smartalert_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

Predictor constant_predictor(double p) {
    return Predictor(std::make_shared<const ModelArtifact>(constant_artifact(p)));
}

} // namespace

TEST_CASE("tick over healthy encounters") {
    FhirStore store;
    for (int i = 1; i <= 3; ++i) {
        const std::string id = "E" + std::to_string(i);
        add_encounter(store, Encounter{id, "P" + std::to_string(i), kT0 - hours(30)});
        add_cbc(store, id, kT0 - hours(20), 8, 12, 200);
    }
    LocalFhirSource src(store);
    PredictionStore preds;
    PredictionPipeline pipe(src, constant_predictor(0.95), preds);
    const auto tick = pipe.run_tick(kT0);
    CHECK(tick.encounters_attempted == 3);
    CHECK(tick.succeeded == 3);
    CHECK(tick.failed == 0);
    CHECK(preds.size() == 3);
    CHECK(preds.ticks().size() == 1);
    const auto latest = preds.latest("E2", kT0);
    REQUIRE(latest);
    CHECK(latest->prediction.panel_probability == doctest::Approx(0.95));
    CHECK(latest->prediction.model_version == "lr.test");
    CHECK_FALSE(latest->prediction.input_snapshot_hash.empty());
}

TEST_CASE("one malformed encounter does not abort the tick") {
    FhirStore store;
    add_encounter(store, Encounter{"E1", "P1", kT0 - hours(30)});
    add_encounter(store, Encounter{"E2", "P2", kT0 - hours(30)});
    // Patient reference points nowhere.
    store.put(fhir::make_encounter("E3", "ghost", kT0 - hours(30), std::nullopt, "5E", "MED"));
    LocalFhirSource src(store);
    PredictionStore preds;
    PredictionPipeline pipe(src, constant_predictor(0.95), preds);
    const auto tick = pipe.run_tick(kT0);
    CHECK(tick.succeeded == 2);
    CHECK(tick.failed == 1);
    CHECK(preds.latest("E1", kT0));
    CHECK(preds.latest("E2", kT0));
    CHECK_FALSE(preds.latest("E3", kT0));
}

TEST_CASE("empty and unreachable gateways still record a tick") {
    FhirStore store;
    LocalFhirSource src(store);
    PredictionStore preds;
    PredictionPipeline pipe(src, constant_predictor(0.95), preds);
    auto tick = pipe.run_tick(kT0);
    CHECK(tick.encounters_attempted == 0);
    CHECK(preds.ticks().size() == 1);

    DownGateway down;
    PredictionPipeline dead(down, constant_predictor(0.95), preds);
    tick = dead.run_tick(kT0 + hours(6));
    CHECK(tick.gateway_error);
    CHECK(tick.succeeded == 0);
    CHECK(preds.ticks().size() == 2);
}

TEST_CASE("latest prediction selection") {
    PredictionStore preds;
    CHECK_FALSE(preds.latest("E1", kT0));
    preds.append(prediction("E1", kT0, 0.5));
    preds.append(prediction("E1", kT0 + hours(6), 0.6));
    auto l = preds.latest("E1", kT0 + hours(7) + minutes(30));
    REQUIRE(l);
    CHECK(l->prediction.computed_at == kT0 + hours(6));
    CHECK(l->staleness_hours() == doctest::Approx(1.5));
    CHECK_FALSE(preds.latest("E1", kT0 - Seconds{1}));
    // Tie: the later append wins.
    preds.append(prediction("E1", kT0 + hours(6), 0.7));
    CHECK(preds.latest("E1", kT0 + hours(8))->prediction.panel_probability == 0.7);
    // Going back in time is refused; the store is append-only.
    CHECK_THROWS_AS(preds.append(prediction("E1", kT0, 0.1)), ContractError);
    CHECK(preds.history("E1").size() == 3);
}

TEST_CASE("prediction log persists and survives a torn tail") {
    const auto dir = temp_dir("store");
    const auto path = dir / "predictions.log";
    {
        PredictionStore preds(path);
        preds.append(prediction("E1", kT0, 0.5));
        preds.append(prediction("E2", kT0, 0.93));
        ScheduleTick t;
        t.tick_at = kT0;
        t.succeeded = 2;
        preds.append_tick(t);
    }
    {
        PredictionStore preds(path);
        CHECK(preds.size() == 2);
        CHECK(preds.ticks().size() == 1);
        CHECK(preds.latest("E2", kT0)->prediction.panel_probability == 0.93);
    }
    const auto good_size = std::filesystem::file_size(path);
    {
        std::ofstream out(path, std::ios::binary | std::ios::app);
        const char partial[] = {'\x40', '\x00', '\x00', '\x00', '{', '"', 'k'};
        out.write(partial, sizeof partial);
    }
    std::filesystem::remove(path.string() + ".idx");
    {
        PredictionStore preds(path);
        CHECK(preds.truncated_bytes() == 7);
        CHECK(preds.size() == 2);
        CHECK(std::filesystem::file_size(path) == good_size);
        preds.append(prediction("E1", kT0 + hours(6), 0.8));
    }
    PredictionStore preds(path);
    CHECK(preds.size() == 3);
    CHECK(std::filesystem::exists(path.string() + ".idx"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("scheduler under a simulated clock") {
    SimulatedClock clock(kT0);
    PredictionStore preds;
    std::vector<Timestamp> seen;
    Scheduler sched([&](Timestamp t) {
        seen.push_back(t);
        ScheduleTick tick;
        tick.tick_at = t;
        return tick;
    }, clock, preds, kT0);
    const auto ticks = sched.run_until(kT0 + hours(24));
    CHECK(ticks.size() == 5);
    CHECK(seen == std::vector<Timestamp>{kT0, kT0 + hours(6), kT0 + hours(12), kT0 + hours(18), kT0 + hours(24)});
    CHECK(sched.next_boundary() == kT0 + hours(30));
    CHECK(preds.ticks().size() == 5);
}

TEST_CASE("a long tick skips the boundary it overran") {
    SimulatedClock clock(kT0);
    PredictionStore preds;
    bool first = true;
    std::vector<Timestamp> seen;
    Scheduler sched([&](Timestamp t) {
        seen.push_back(t);
        if (first) clock.advance(hours(7));
        first = false;
        return ScheduleTick{};
    }, clock, preds, kT0);
    sched.run_until(kT0 + hours(12));
    CHECK(seen == std::vector<Timestamp>{kT0, kT0 + hours(12)});
    CHECK(sched.skipped_total() == 1);
    CHECK(preds.ticks().front().duration_seconds == doctest::Approx(7 * 3600.0));
    CHECK(preds.ticks().back().skipped_boundaries == 1);
}

TEST_CASE("scheduler resumes after a restart") {
    PredictionStore preds;
    ScheduleTick last;
    last.tick_at = kT0 + hours(6);
    preds.append_tick(last);
    SimulatedClock clock(kT0 + hours(8));
    Scheduler sched([](Timestamp t) {
        ScheduleTick tick;
        tick.tick_at = t;
        return tick;
    }, clock, preds, kT0);
    CHECK(sched.next_boundary() == kT0 + hours(12));
}

TEST_CASE("background scheduler never overlaps ticks") {
    SimulatedClock clock(kT0);
    PredictionStore preds;
    std::atomic<int> active{0}, max_active{0}, count{0};
    Scheduler sched([&](Timestamp) {
        const int now = ++active;
        max_active = std::max(max_active.load(), now);
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
        --active;
        ++count;
        return ScheduleTick{};
    }, clock, preds, kT0);
    sched.start();
    while (count < 20) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    sched.stop();
    CHECK(max_active == 1);
    CHECK_FALSE(sched.running());
    const auto ticks = preds.ticks();
    for (std::size_t i = 1; i < ticks.size(); ++i) CHECK(ticks[i].tick_at - ticks[i - 1].tick_at == hours(6));
}
