#include "fixtures.hpp"

#include "smartalert/errors.hpp"
#include "smartalert/logistic.hpp"
#include "smartalert/predictor.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace smartalert;
using namespace fixtures;

namespace {

const Timestamp kAdmit = make_utc(2024, 8, 20, 8);

PatientSnapshot snapshot_at(Timestamp as_of) {
    PatientSnapshot s;
    s.encounter_id = "E1";
    s.patient_id = "P1";
    s.as_of = as_of;
    s.admission_at = kAdmit;
    s.demographics = {70.0, Sex::male, Race::white};
    s.labs = LabSeries("E1");
    return s;
}

FeatureVector features_with_values(double wbc, double hgb, double plt) {
    FeatureVector fv;
    fv.slots.assign(fv.layout.size(), std::nullopt);
    fv.slots[fv.layout.value_index(LabComponent::WBC, 0)] = wbc;
    fv.slots[fv.layout.value_index(LabComponent::HGB, 0)] = hgb;
    fv.slots[fv.layout.value_index(LabComponent::PLT, 0)] = plt;
    for (LabComponent c : kCbcPanel) fv.slots[fv.layout.hours_since_last_index(c)] = 4.0;
    return fv;
}

// Independent two-parameter penalized logistic fit (intercept unpenalized)
// by Newton steps with an explicit 2x2 solve.
std::array<double, 2> reference_fit(const std::vector<double>& x, const std::vector<double>& y, double l2) {
    double b0 = 0, b1 = 0;
    const double n = static_cast<double>(x.size());
    for (int it = 0; it < 200; ++it) {
        double g0 = 0, g1 = -l2 * b1, h00 = 0, h01 = 0, h11 = -l2;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double p = 1.0 / (1.0 + std::exp(-(b0 + b1 * x[i])));
            g0 += (y[i] - p) / n;
            g1 += (y[i] - p) * x[i] / n;
            const double w = p * (1 - p) / n;
            h00 -= w;
            h01 -= w * x[i];
            h11 -= w * x[i] * x[i];
        }
        const double det = h00 * h11 - h01 * h01;
        const double d0 = (h11 * g0 - h01 * g1) / det, d1 = (h00 * g1 - h01 * g0) / det;
        b0 -= d0;
        b1 -= d1;
        if (std::abs(d0) + std::abs(d1) < 1e-13) break;
    }
    return {b0, b1};
}

} // namespace

TEST_CASE("features from three prior results") {
    const Timestamp as_of = kAdmit + hours(60);
    auto s = snapshot_at(as_of);
    s.labs.add(lab(LabComponent::WBC, 7.0, kAdmit + hours(1)));
    s.labs.add(lab(LabComponent::WBC, 7.5, kAdmit + hours(21)));
    s.labs.add(lab(LabComponent::WBC, 8.1, kAdmit + hours(45)));
    s.labs.add(lab(LabComponent::WBC, 99.0, as_of + hours(1))); // future result is ignored
    s.labs.add(lab(LabComponent::HGB, 10.0, kAdmit + hours(45)));
    const auto fv = extract_features(s, as_of);
    const auto& L = fv.layout;
    CHECK(fv.at(L.value_index(LabComponent::WBC, 0)) == 8.1);
    CHECK(fv.at(L.value_index(LabComponent::WBC, 1)) == 7.5);
    CHECK(fv.at(L.value_index(LabComponent::WBC, 2)) == 7.0);
    CHECK(*fv.at(L.delta_index(LabComponent::WBC)) == doctest::Approx(0.6));
    CHECK(*fv.at(L.hours_since_last_index(LabComponent::WBC)) == doctest::Approx(15.0));
    // One prior result: no delta, missing rather than zero.
    CHECK(fv.at(L.value_index(LabComponent::HGB, 0)) == 10.0);
    CHECK_FALSE(fv.at(L.delta_index(LabComponent::HGB)).has_value());
    CHECK_FALSE(fv.at(L.value_index(LabComponent::HGB, 1)).has_value());
    // No prior result: not predictable.
    CHECK_FALSE(fv.predictable(LabComponent::PLT));
    CHECK(fv.predictable(LabComponent::WBC));
    CHECK(*fv.global(GlobalFeature::hours_since_admission) == doctest::Approx(60.0));
    CHECK(*fv.global(GlobalFeature::sex_female) == 0.0);
    CHECK(extract_features(s, as_of) == fv);
    CHECK_THROWS_AS(extract_features(s, as_of + hours(1)), ContractError);
}

TEST_CASE("exposure flags") {
    const Timestamp as_of = kAdmit + hours(60);
    auto s = snapshot_at(as_of);
    s.transfusions.push_back({as_of - hours(24)});
    auto fv = extract_features(s, as_of);
    CHECK(*fv.global(GlobalFeature::recent_transfusion) == 1.0);
    CHECK(*fv.global(GlobalFeature::recent_procedure) == 0.0);
    s.transfusions = {{as_of - hours(49)}};
    s.procedures.push_back({"bedside-procedure", as_of - hours(2)});
    s.medications.push_back({"heparin", "IV", true, true, as_of - hours(3)});
    fv = extract_features(s, as_of);
    CHECK(*fv.global(GlobalFeature::recent_transfusion) == 0.0);
    CHECK(*fv.global(GlobalFeature::recent_procedure) == 1.0);
    CHECK(*fv.global(GlobalFeature::active_anticoagulant) == 1.0);
}

TEST_CASE("feature layout names round trip") {
    FeatureLayout layout;
    const auto names = layout.names();
    CHECK(names.size() == layout.size());
    CHECK(FeatureLayout::from_names(names) == layout);
    auto broken = names;
    broken[2] = "WBC.bogus";
    CHECK_THROWS_AS(FeatureLayout::from_names(broken), ParseError);
}

TEST_CASE("predictor aggregation") {
    const auto zero = constant_artifact(0.5);
    Predictor pred(std::make_shared<const ModelArtifact>(zero));
    auto p = pred.predict(features_with_values(8, 12, 200));
    for (LabComponent c : kCbcPanel) CHECK(*p.probability.at(c) == doctest::Approx(0.5));
    CHECK(p.panel_probability == doctest::Approx(0.5));

    ModelArtifact mixed = constant_artifact(0.95);
    mixed.components[LabComponent::HGB].coefficients[0] = std::log(0.99 / 0.01);
    mixed.components[LabComponent::PLT].coefficients[0] = std::log(0.92 / 0.08);
    Predictor pm(std::make_shared<const ModelArtifact>(mixed));
    p = pm.predict(features_with_values(8, 12, 200));
    CHECK(*p.probability.at(LabComponent::WBC) == doctest::Approx(0.95));
    CHECK(*p.probability.at(LabComponent::HGB) == doctest::Approx(0.99));
    CHECK(p.panel_probability == doctest::Approx(0.92));

    auto missing = features_with_values(8, 12, 200);
    missing.slots[missing.layout.value_index(LabComponent::WBC, 0)] = std::nullopt;
    missing.not_predictable = {LabComponent::WBC};
    p = pm.predict(missing);
    CHECK(p.panel_probability == 0.0);
    CHECK_FALSE(p.probability.at(LabComponent::WBC).has_value());

    CHECK_THROWS_AS(Predictor().predict(features_with_values(8, 12, 200)), ConfigError);
}

TEST_CASE("probabilities stay in range under fuzzed features") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> coef(0.0, 3.0), val(0.0, 1e3);
    ModelArtifact a = constant_artifact(0.5);
    for (auto& [c, m] : a.components) {
        for (auto& b : m.coefficients) b = coef(rng);
    }
    Predictor pred(std::make_shared<const ModelArtifact>(a));
    for (int i = 0; i < 2000; ++i) {
        auto fv = features_with_values(val(rng), val(rng), val(rng));
        for (auto& s : fv.slots) {
            if (rng() % 3 == 0) s = val(rng);
        }
        const auto p = pred.predict(fv);
        for (const auto& [c, pc] : p.probability) {
            REQUIRE(pc.has_value());
            CHECK(*pc >= 0.0);
            CHECK(*pc <= 1.0);
        }
        CHECK(p.panel_probability >= 0.0);
        CHECK(p.panel_probability <= 1.0);
    }
}

TEST_CASE("logistic fit matches an independent solver on a separable set") {
    logistic::Problem prob;
    prob.cols = 2;
    std::vector<double> xs, ys;
    for (int i = 0; i < 10; ++i) {
        const double x = (i - 4.5) / 3.0;
        const bool y = i >= 5;
        const double row[2] = {1.0, x};
        prob.add_row(row, y);
        xs.push_back(x);
        ys.push_back(y ? 1.0 : 0.0);
    }
    const double l2 = 1e-2;
    const auto fit = logistic::fit(prob, l2, 1e-14, 500);
    const auto ref = reference_fit(xs, ys, l2);
    CHECK(fit.beta[0] == doctest::Approx(ref[0]).epsilon(1e-6));
    CHECK(fit.beta[1] == doctest::Approx(ref[1]).epsilon(1e-6));
    int correct = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double p = logistic::sigmoid(fit.beta[0] + fit.beta[1] * xs[i]);
        correct += (p > 0.5) == (ys[i] > 0.5);
    }
    CHECK(correct == 10);
}

TEST_CASE("analytic gradient matches finite differences") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        logistic::Problem prob;
        prob.cols = 4;
        for (int i = 0; i < 30; ++i) {
            const double row[4] = {1.0, n01(rng), n01(rng), n01(rng)};
            prob.add_row(row, rng() % 2 == 0);
        }
        std::vector<double> beta{n01(rng), n01(rng), n01(rng), n01(rng)};
        const double l2 = 0.1;
        const auto g = logistic::gradient(prob, beta, l2);
        for (std::size_t j = 0; j < beta.size(); ++j) {
            const double h = 1e-5;
            auto up = beta, dn = beta;
            up[j] += h;
            dn[j] -= h;
            const double fd = (logistic::objective(prob, up, l2) - logistic::objective(prob, dn, l2)) / (2 * h);
            CHECK(std::abs(fd - g[j]) <= 1e-6 * std::max(1.0, std::abs(g[j])));
        }
    }
}

namespace {

std::vector<TrainingRow> separable_rows() {
    std::vector<TrainingRow> rows;
    for (int i = 0; i < 10; ++i) {
        TrainingRow r;
        r.component = LabComponent::WBC;
        r.features = features_with_values(5.0 + i, 12, 200);
        r.stable = i < 5;
        rows.push_back(r);
    }
    return rows;
}

double score(const ComponentModel& m, const FeatureVector& fv) {
    const auto x = design_row(m, fv);
    double z = 0;
    for (std::size_t j = 0; j < x.size(); ++j) z += x[j] * m.coefficients[j];
    return logistic::sigmoid(z);
}

} // namespace

TEST_CASE("training a separable component") {
    const auto rows = separable_rows();
    TrainOptions opt;
    opt.min_per_class = 5;
    const auto a = train(rows, opt);
    const auto& m = a.components.at(LabComponent::WBC);
    REQUIRE(m.trainable);
    for (const auto& r : rows) CHECK((score(m, r.features) > 0.5) == r.stable);
    // Components with no rows are untrainable and excluded.
    CHECK_FALSE(a.components.at(LabComponent::HGB).trainable);
    CHECK(a.model_version == "lr.1");
}

TEST_CASE("single-class component is untrainable") {
    auto rows = separable_rows();
    for (auto& r : rows) r.stable = true;
    const auto a = train(rows);
    CHECK_FALSE(a.components.at(LabComponent::WBC).trainable);
    CHECK_FALSE(a.components.at(LabComponent::WBC).untrainable_reason.empty());
}

TEST_CASE("duplicated data gives identical coefficients") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<TrainingRow> rows;
    for (int i = 0; i < 60; ++i) {
        TrainingRow r;
        r.component = LabComponent::HGB;
        r.features = features_with_values(8, 11 + n01(rng), 200);
        r.features.slots[r.features.layout.delta_index(LabComponent::HGB)] = n01(rng);
        r.stable = n01(rng) + *r.features.at(r.features.layout.value_index(LabComponent::HGB, 0)) > 11;
        rows.push_back(r);
    }
    auto doubled = rows;
    doubled.insert(doubled.end(), rows.begin(), rows.end());
    const auto a = train(rows), b = train(doubled);
    const auto& ca = a.components.at(LabComponent::HGB).coefficients;
    const auto& cb = b.components.at(LabComponent::HGB).coefficients;
    REQUIRE(ca.size() == cb.size());
    for (std::size_t j = 0; j < ca.size(); ++j) CHECK(ca[j] == doctest::Approx(cb[j]).epsilon(1e-9));
    // Determinism.
    CHECK(train(rows).content_hash == a.content_hash);
}

TEST_CASE("artifact save and load preserve the hash") {
    TrainOptions opt;
    const auto a = calibrate(train(separable_rows(), opt), separable_rows());
    const auto path = std::filesystem::temp_directory_path() / "smartalert_artifact_test.json";
    a.save(path);
    const auto b = ModelArtifact::load(path);
    CHECK(b.content_hash == a.content_hash);
    CHECK(b.compute_hash() == b.content_hash);
    CHECK(b.to_json() == a.to_json());
    Json tampered = a.to_json();
    tampered["components"]["WBC"]["coefficients"][0] = 123.0;
    CHECK_THROWS(ModelArtifact::from_json(tampered));
    std::filesystem::remove(path);
    CHECK(next_model_version("lr.7") == "lr.8");
    CHECK(next_model_version("") == "lr.1");
}

TEST_CASE("training csv round trip") {
    const auto rows = separable_rows();
    const auto path = std::filesystem::temp_directory_path() / "smartalert_rows_test.csv";
    write_text_file(path, training_csv(rows));
    const auto back = read_training_csv(path);
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].component == rows[i].component);
        CHECK(back[i].stable == rows[i].stable);
        CHECK(back[i].features.slots == rows[i].features.slots);
    }
    CHECK(dataset_hash(back) == dataset_hash(rows));
    std::filesystem::remove(path);
}

TEST_CASE("threshold calibration") {
    std::vector<ScoredLabel> s{{0.9, true}, {0.8, true}, {0.7, false}, {0.6, true}};
    auto c = calibrate_threshold(s);
    CHECK_FALSE(c.unattainable);
    CHECK(c.threshold == doctest::Approx(0.75));
    CHECK(*c.ppv == 1.0);
    CHECK(c.recall == doctest::Approx(2.0 / 3.0));

    std::vector<ScoredLabel> stable{{0.4, true}, {0.6, true}, {0.9, true}};
    c = calibrate_threshold(stable);
    CHECK(c.threshold == doctest::Approx(0.2));
    CHECK(*c.ppv == 1.0);
    CHECK(c.recall == 1.0);

    std::vector<ScoredLabel> unstable{{0.4, false}, {0.6, false}, {0.9, false}};
    c = calibrate_threshold(unstable);
    CHECK(c.unattainable);
    CHECK(c.threshold == 1.0);

    CHECK_THROWS_AS(calibrate_threshold(std::span<const ScoredLabel>{}), ContractError);
}

TEST_CASE("silent evaluation counts") {
    const auto reg = ThresholdRegistry::defaults();
    const Timestamp t0 = make_utc(2024, 3, 8, 6);
    std::vector<StabilityPrediction> log;
    std::map<std::string, LabSeries> realized;
    for (int i = 0; i < 11; ++i) {
        const std::string id = "S" + std::to_string(i);
        auto p = prediction(id, t0 + hours(i), 0.95);
        p.component_probability[LabComponent::HGB] = 0.1;
        p.component_probability[LabComponent::PLT] = std::nullopt;
        log.push_back(p);
        LabSeries s(id);
        s.add(lab(LabComponent::WBC, 8.0, t0 + hours(i) - hours(6)));
        s.add(lab(LabComponent::HGB, 12.0, t0 + hours(i) - hours(6)));
        if (i < 10) {
            // Nine stable, one with a large rise.
            s.add(lab(LabComponent::WBC, i == 0 ? 11.0 : 8.5, t0 + hours(i) + hours(6)));
            s.add(lab(LabComponent::HGB, 12.1, t0 + hours(i) + hours(6)));
        }
        realized[id] = s;
    }
    const std::map<LabComponent, double> taus{{LabComponent::WBC, 0.9}, {LabComponent::HGB, 0.9}, {LabComponent::PLT, 0.9}};
    const auto r = silent_eval(log, realized, reg, taus, t0, t0 + hours(24));
    const auto& wbc = r.components.at(LabComponent::WBC);
    CHECK(wbc.tp == 9);
    CHECK(wbc.fp == 1);
    CHECK(wbc.censored == 1);
    CHECK(*wbc.ppv == doctest::Approx(0.9));
    const auto& hgb = r.components.at(LabComponent::HGB);
    CHECK(hgb.tp + hgb.fp == 0);
    CHECK_FALSE(hgb.ppv.has_value());
    CHECK(r.to_json()["components"]["HGB"]["ppv_undefined"] == true);
    CHECK(r.render().find("undefined") != std::string::npos);
    // Window is half-open.
    CHECK(silent_eval(log, realized, reg, taus, t0 + hours(1), t0 + hours(3)).predictions == 2);
}
