#include "smartalert/cohort.hpp"

#include "smartalert/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace smartalert {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double normal(std::mt19937_64& rng, double mean, double sd) {
    if (sd <= 0.0) return mean;
    return std::normal_distribution<double>(mean, sd)(rng);
}

int poisson(std::mt19937_64& rng, double mean) {
    if (mean <= 0.0) return 0;
    return std::poisson_distribution<int>(mean)(rng);
}

double round_to(double v, double step) { return step > 0.0 ? std::round(v / step) * step : v; }

std::string padded(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
    return buf;
}

Seconds days(double d) { return Seconds{static_cast<std::int64_t>(std::llround(d * 86400.0))}; }

constexpr std::array<std::string_view, 6> kUnits{"4W", "5E", "6N", "7S", "8W", "3E"};
constexpr std::array<std::string_view, 3> kServices{"MED", "SURG", "CARD"};
constexpr std::array<std::string_view, 2> kExcludedServices{"BMT", "HEME"};
constexpr std::array<std::pair<Race, double>, 7> kRaceMix{{{Race::white, 0.55},
                                                           {Race::black, 0.055},
                                                           {Race::asian, 0.16},
                                                           {Race::pacific_islander, 0.01},
                                                           {Race::native_american, 0.005},
                                                           {Race::other, 0.19},
                                                           {Race::unknown, 0.03}}};

} // namespace

std::uint64_t stream_seed(std::uint64_t seed, std::string_view key) {
    return splitmix64(splitmix64(seed) ^ fnv1a64(key));
}

// ---------------------------------------------------------------------------
// Config

Json TrajectoryParams::to_json() const {
    return Json{{"baseline_mean", baseline_mean},
                {"baseline_sd", baseline_sd},
                {"reversion_per_day", reversion_per_day},
                {"noise_sd", noise_sd},
                {"shock_rate_per_day", shock_rate_per_day},
                {"shock_mean", shock_mean},
                {"shock_sd", shock_sd},
                {"resolution", resolution}};
}

TrajectoryParams TrajectoryParams::from_json(const Json& j) {
    TrajectoryParams p;
    p.baseline_mean = require<double>(j, "baseline_mean", "trajectory");
    p.baseline_sd = value_or<double>(j, "baseline_sd", 0.0);
    p.reversion_per_day = value_or<double>(j, "reversion_per_day", 0.5);
    p.noise_sd = value_or<double>(j, "noise_sd", 0.0);
    p.shock_rate_per_day = value_or<double>(j, "shock_rate_per_day", 0.0);
    p.shock_mean = value_or<double>(j, "shock_mean", 0.0);
    p.shock_sd = value_or<double>(j, "shock_sd", 0.0);
    p.resolution = value_or<double>(j, "resolution", 0.1);
    return p;
}

Json BehaviorConfig::to_json() const {
    return Json{{"renewal_probability", renewal_probability},
                {"reorder_probability", reorder_probability},
                {"p_discontinue", p_discontinue},
                {"p_every_other_day", p_every_other_day},
                {"p_weekly", p_weekly},
                {"p_cancel_dialog", p_cancel_dialog},
                {"off_hours_fraction", off_hours_fraction},
                {"draw_minute", draw_minute},
                {"draw_jitter_minutes", draw_jitter_minutes},
                {"order_duration_hours", static_cast<double>(order_duration.count()) / 3600.0}};
}

BehaviorConfig BehaviorConfig::from_json(const Json& j) {
    BehaviorConfig b;
    b.renewal_probability = value_or<double>(j, "renewal_probability", b.renewal_probability);
    b.reorder_probability = value_or<double>(j, "reorder_probability", b.reorder_probability);
    b.p_discontinue = value_or<double>(j, "p_discontinue", 0.0);
    b.p_every_other_day = value_or<double>(j, "p_every_other_day", 0.0);
    b.p_weekly = value_or<double>(j, "p_weekly", 0.0);
    b.p_cancel_dialog = value_or<double>(j, "p_cancel_dialog", 0.0);
    b.off_hours_fraction = value_or<double>(j, "off_hours_fraction", b.off_hours_fraction);
    b.draw_minute = value_or<int>(j, "draw_minute", b.draw_minute);
    b.draw_jitter_minutes = value_or<double>(j, "draw_jitter_minutes", b.draw_jitter_minutes);
    b.order_duration = days(value_or<double>(j, "order_duration_hours", 72.0) / 24.0);
    return b;
}

CohortConfig CohortConfig::defaults() {
    CohortConfig c;
    c.trajectories[LabComponent::WBC] = {8.2, 2.2, 0.6, 0.9, 0.06, 3.0, 1.2, 0.1};
    c.trajectories[LabComponent::HGB] = {11.4, 1.5, 0.4, 0.35, 0.05, -1.6, 0.5, 0.1};
    c.trajectories[LabComponent::PLT] = {235.0, 65.0, 0.5, 16.0, 0.05, -55.0, 20.0, 1.0};
    return c;
}

void CohortConfig::validate() const {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string(name) + " must lie in [0, 1]");
    };
    if (n_encounters == 0) throw ValidationError("n_encounters must be positive");
    if (duration_days <= 0) throw ValidationError("duration_days must be positive");
    if (trajectories.empty()) throw ValidationError("cohort needs at least one lab component");
    for (const auto& [c, t] : trajectories) {
        if (std::find(kCbcPanel.begin(), kCbcPanel.end(), c) == kCbcPanel.end()) {
            throw ValidationError(std::string(to_string(c)) + " trajectories are not supported");
        }
        if (!(t.resolution > 0.0) || t.noise_sd < 0.0 || t.shock_rate_per_day < 0.0 || t.reversion_per_day <= 0.0 ||
            t.baseline_sd < 0.0 || t.shock_sd < 0.0) {
            throw ValidationError(std::string(to_string(c)) + " trajectory parameters are invalid");
        }
    }
    prob(admission_window_fraction, "admission_window_fraction");
    prob(heparin_fraction, "heparin_fraction");
    prob(excluded_fraction, "excluded_fraction");
    prob(icu_on_admission_probability, "icu_on_admission_probability");
    prob(mortality_probability, "mortality_probability");
    prob(readmission_probability, "readmission_probability");
    prob(repeat_patient_fraction, "repeat_patient_fraction");
    prob(behavior.renewal_probability, "renewal_probability");
    prob(behavior.reorder_probability, "reorder_probability");
    prob(behavior.p_discontinue, "p_discontinue");
    prob(behavior.p_every_other_day, "p_every_other_day");
    prob(behavior.p_weekly, "p_weekly");
    prob(behavior.p_cancel_dialog, "p_cancel_dialog");
    prob(behavior.off_hours_fraction, "off_hours_fraction");
    if (behavior.p_acknowledge() < -1e-12) throw ValidationError("alert response probabilities exceed 1");
    if (los_median_hours <= 0.0 || los_log_sd < 0.0) throw ValidationError("length-of-stay parameters are invalid");
    if (procedure_rate_per_day < 0.0 || transfusion_rate_per_day < 0.0 || icu_transfer_rate_per_day < 0.0 ||
        exposure_shock_multiplier < 0.0 || volatility_log_sd < 0.0) {
        throw ValidationError("rates must be non-negative");
    }
    if (behavior.draw_minute < 0 || behavior.draw_minute >= 1440) throw ValidationError("draw_minute out of range");
    if (behavior.order_duration <= Seconds{0}) throw ValidationError("order duration must be positive");
    HospitalZone{time_zone};
}

Json CohortConfig::to_json() const {
    Json traj = Json::object();
    for (const auto& [c, t] : trajectories) traj[std::string(to_string(c))] = t.to_json();
    return Json{{"schema", "smartalert-cohort/1"},
                {"n_encounters", n_encounters},
                {"start", format_rfc3339(start)},
                {"duration_days", duration_days},
                {"admission_window_fraction", admission_window_fraction},
                {"los_median_hours", los_median_hours},
                {"los_log_sd", los_log_sd},
                {"trajectories", traj},
                {"volatility_log_sd", volatility_log_sd},
                {"procedure_rate_per_day", procedure_rate_per_day},
                {"transfusion_rate_per_day", transfusion_rate_per_day},
                {"exposure_shock_multiplier", exposure_shock_multiplier},
                {"heparin_fraction", heparin_fraction},
                {"excluded_fraction", excluded_fraction},
                {"icu_on_admission_probability", icu_on_admission_probability},
                {"icu_transfer_rate_per_day", icu_transfer_rate_per_day},
                {"mortality_probability", mortality_probability},
                {"readmission_probability", readmission_probability},
                {"repeat_patient_fraction", repeat_patient_fraction},
                {"behavior", behavior.to_json()},
                {"time_zone", time_zone},
                {"seed", seed},
                {"trial_seed", trial_seed},
                {"training_seed", training_seed},
                {"validation_seed", validation_seed},
                {"training_encounters", training_encounters},
                {"validation_encounters", validation_encounters}};
}

CohortConfig CohortConfig::from_json(const Json& j) {
    CohortConfig c = defaults();
    try {
        if (j.contains("schema") && j.at("schema") != "smartalert-cohort/1") {
            throw ConfigError("unsupported cohort config schema");
        }
        c.n_encounters = j.value("n_encounters", c.n_encounters);
        if (j.contains("start")) c.start = parse_rfc3339(j.at("start").get<std::string>());
        c.duration_days = j.value("duration_days", c.duration_days);
        c.admission_window_fraction = j.value("admission_window_fraction", c.admission_window_fraction);
        c.los_median_hours = j.value("los_median_hours", c.los_median_hours);
        c.los_log_sd = j.value("los_log_sd", c.los_log_sd);
        if (j.contains("trajectories")) {
            c.trajectories.clear();
            for (const auto& [code, t] : j.at("trajectories").items()) {
                c.trajectories[require_component(code)] = TrajectoryParams::from_json(t);
            }
        }
        c.volatility_log_sd = j.value("volatility_log_sd", c.volatility_log_sd);
        c.procedure_rate_per_day = j.value("procedure_rate_per_day", c.procedure_rate_per_day);
        c.transfusion_rate_per_day = j.value("transfusion_rate_per_day", c.transfusion_rate_per_day);
        c.exposure_shock_multiplier = j.value("exposure_shock_multiplier", c.exposure_shock_multiplier);
        c.heparin_fraction = j.value("heparin_fraction", c.heparin_fraction);
        c.excluded_fraction = j.value("excluded_fraction", c.excluded_fraction);
        c.icu_on_admission_probability = j.value("icu_on_admission_probability", c.icu_on_admission_probability);
        c.icu_transfer_rate_per_day = j.value("icu_transfer_rate_per_day", c.icu_transfer_rate_per_day);
        c.mortality_probability = j.value("mortality_probability", c.mortality_probability);
        c.readmission_probability = j.value("readmission_probability", c.readmission_probability);
        c.repeat_patient_fraction = j.value("repeat_patient_fraction", c.repeat_patient_fraction);
        if (j.contains("behavior")) c.behavior = BehaviorConfig::from_json(j.at("behavior"));
        c.time_zone = j.value("time_zone", c.time_zone);
        c.seed = j.value("seed", c.seed);
        c.trial_seed = j.value("trial_seed", c.trial_seed);
        c.training_seed = j.value("training_seed", c.training_seed);
        c.validation_seed = j.value("validation_seed", c.validation_seed);
        c.training_encounters = j.value("training_encounters", c.training_encounters);
        c.validation_encounters = j.value("validation_encounters", c.validation_encounters);
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("cohort config: ") + e.what());
    } catch (const ParseError& e) {
        throw ConfigError(std::string("cohort config: ") + e.what());
    }
    c.validate();
    return c;
}

CohortConfig CohortConfig::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Plans

std::vector<EncounterPlan> make_plans(const CohortConfig& config, std::uint64_t seed, std::size_t n) {
    config.validate();
    const Timestamp end = config.start + days(config.duration_days);
    const double window_days = config.duration_days * config.admission_window_fraction;
    std::vector<EncounterPlan> plans;
    plans.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        EncounterPlan p;
        p.encounter_id = padded("E", i + 1);
        std::mt19937_64 rng(stream_seed(seed, p.encounter_id + "/plan"));

        if (!plans.empty() && uniform(rng) < config.repeat_patient_fraction) {
            const auto& prev = plans[static_cast<std::size_t>(uniform(rng) * static_cast<double>(plans.size()))];
            p.patient_id = prev.patient_id;
            p.demographics = prev.demographics;
            p.birth = prev.birth;
        } else {
            p.patient_id = padded("P", i + 1);
            const double age = std::clamp(normal(rng, 67.0, 16.0), 18.0, 100.0);
            p.demographics.sex = uniform(rng) < 0.51 ? Sex::female : Sex::male;
            double u = uniform(rng), acc = 0.0;
            p.demographics.race = Race::unknown;
            for (const auto& [race, share] : kRaceMix) {
                acc += share;
                if (u < acc) {
                    p.demographics.race = race;
                    break;
                }
            }
            // Birth at a day boundary so the recorded age is stable.
            p.birth = std::chrono::floor<std::chrono::days>(config.start - days(age * 365.25));
        }
        p.admitted_at = config.start + Seconds{static_cast<std::int64_t>(uniform(rng) * window_days * 86400.0)};
        const double los_hours =
            std::clamp(std::exp(normal(rng, std::log(config.los_median_hours), config.los_log_sd)), 24.0, 30.0 * 24);
        const Timestamp discharge = p.admitted_at + Seconds{static_cast<std::int64_t>(los_hours * 3600.0)};
        if (discharge < end) p.discharged_at = discharge;
        p.demographics.age_years = std::floor(hours_between(p.birth, p.admitted_at) / (24.0 * 365.25));
        p.excluded_population = uniform(rng) < config.excluded_fraction;
        p.unit = std::string(kUnits[static_cast<std::size_t>(uniform(rng) * kUnits.size()) % kUnits.size()]);
        p.service = p.excluded_population
                        ? std::string(kExcludedServices[static_cast<std::size_t>(uniform(rng) * 2) % 2])
                        : std::string(kServices[static_cast<std::size_t>(uniform(rng) * 3) % 3]);
        p.volatility = std::exp(normal(rng, 0.0, config.volatility_log_sd));
        for (const auto& [c, t] : config.trajectories) {
            p.baseline[c] = std::max(t.resolution, normal(rng, t.baseline_mean, t.baseline_sd));
        }
        const Timestamp stay_end = p.discharged_at.value_or(end);
        const double stay_days = hours_between(p.admitted_at, stay_end) / 24.0;
        auto events_over_stay = [&](double rate) {
            std::vector<Timestamp> out;
            const int k = poisson(rng, rate * stay_days);
            for (int j = 0; j < k; ++j) {
                out.push_back(p.admitted_at + days(uniform(rng) * stay_days));
            }
            std::sort(out.begin(), out.end());
            return out;
        };
        p.procedures = events_over_stay(config.procedure_rate_per_day);
        p.transfusions = events_over_stay(config.transfusion_rate_per_day);
        if (uniform(rng) < config.heparin_fraction) p.heparin_start = p.admitted_at + days(uniform(rng) * stay_days / 2);
        p.icu_on_admission = uniform(rng) < config.icu_on_admission_probability;
        if (auto icu = events_over_stay(config.icu_transfer_rate_per_day); !icu.empty()) {
            p.icu_transfers.push_back(icu.front());
        }
        p.died = p.discharged_at && uniform(rng) < config.mortality_probability;
        p.readmitted = p.discharged_at && !p.died && uniform(rng) < config.readmission_probability;
        plans.push_back(std::move(p));
    }
    return plans;
}

// ---------------------------------------------------------------------------
// Lab process

LabProcess::LabProcess(const EncounterPlan& plan, const CohortConfig& config, const ThresholdRegistry& registry,
                       std::uint64_t seed)
    : plan_(&plan), config_(&config), registry_(&registry), rng_(stream_seed(seed, plan.encounter_id + "/labs")) {}

std::vector<LabResult> LabProcess::draw(Timestamp t) {
    if (last_ && t <= *last_) {
        throw ContractError("lab draws must move forward in time");
    }
    std::vector<LabResult> out;
    const double vol = plan_->volatility;
    bool exposed = false;
    if (last_) {
        const Timestamp from = *last_ - hours(48);
        auto in_window = [&](const std::vector<Timestamp>& ts) {
            return std::any_of(ts.begin(), ts.end(), [&](Timestamp x) { return x > from && x <= t; });
        };
        exposed = in_window(plan_->procedures) || in_window(plan_->transfusions);
    }
    for (LabComponent c : kCbcPanel) {
        auto it = config_->trajectories.find(c);
        if (it == config_->trajectories.end()) continue;
        const TrajectoryParams& tp = it->second;
        const double base = plan_->baseline.at(c);
        const double q = tp.resolution;
        double value;
        if (!last_) {
            value = round_to(normal(rng_, base, tp.noise_sd * std::sqrt(vol)), q);
        } else {
            const double dt = hours_between(*last_, t) / 24.0;
            const double prev = value_.at(c);
            const double decay = std::exp(-tp.reversion_per_day * dt);
            const double sd = tp.noise_sd * std::sqrt(vol) *
                              std::sqrt((1.0 - decay * decay) / (2.0 * tp.reversion_per_day));
            double candidate = base + (prev - base) * decay + normal(rng_, 0.0, sd);
            double rate = tp.shock_rate_per_day * vol * (exposed ? config_->exposure_shock_multiplier : 1.0);
            if (plan_->heparin_start && *plan_->heparin_start <= t && c != LabComponent::WBC) rate *= 2.0;
            const int shocks = poisson(rng_, rate * dt);
            for (int k = 0; k < shocks; ++k) candidate += normal(rng_, tp.shock_mean, tp.shock_sd);
            value = round_to(candidate, q);
            if (shocks == 0) {
                // Keep the step inside the acceptable band on the reporting grid.
                const auto& th = registry_->thresholds(c);
                value = std::clamp(value, prev + th.acceptable_decrease, prev + th.acceptable_increase);
                value = round_to(value, q);
                for (int guard = 0; guard < 1000; ++guard) {
                    const double delta = value - prev;
                    if (delta > th.acceptable_increase) value -= q;
                    else if (delta < th.acceptable_decrease) value += q;
                    else break;
                }
            }
        }
        value = std::max(value, q);
        value_[c] = value;
        out.push_back({c, value, t, ResultStatus::final});
    }
    last_ = t;
    return out;
}

// ---------------------------------------------------------------------------
// Resources

std::vector<Json> plan_resources(const EncounterPlan& plan) {
    std::vector<Json> out;
    out.push_back(fhir::make_patient(plan.patient_id, plan.demographics.sex, plan.demographics.race, plan.birth));
    out.push_back(
        fhir::make_encounter(plan.encounter_id, plan.patient_id, plan.admitted_at, plan.discharged_at, plan.unit,
                             plan.service));
    for (std::size_t i = 0; i < plan.procedures.size(); ++i) {
        out.push_back(fhir::make_procedure(plan.encounter_id + "-proc-" + std::to_string(i + 1), plan.encounter_id,
                                           "bedside-procedure", plan.procedures[i]));
    }
    for (std::size_t i = 0; i < plan.transfusions.size(); ++i) {
        out.push_back(fhir::make_procedure(plan.encounter_id + "-tx-" + std::to_string(i + 1), plan.encounter_id,
                                           "rbc-transfusion", plan.transfusions[i], true));
    }
    if (plan.heparin_start) {
        out.push_back(fhir::make_medication_request(plan.encounter_id + "-hep", plan.encounter_id, "heparin", "IV",
                                                    true, true, *plan.heparin_start));
    }
    return out;
}

std::vector<Json> lab_resources(const std::string& encounter_id, std::span<const LabResult> results,
                                const LabCodeMap& codes, const ThresholdRegistry& registry) {
    std::vector<Json> out;
    for (const auto& r : results) {
        const std::string id = encounter_id + "-" + std::string(to_string(r.component)) + "-" +
                               std::to_string(r.observed_at.time_since_epoch().count());
        out.push_back(fhir::make_lab_observation(id, encounter_id, codes.code_for(r.component), r.value,
                                                 registry.info(r.component).unit, r.observed_at, r.status));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Natural-history cohort

namespace {

// Stat draw shortly after admission, then the morning draw of every later
// local day within the stay.
std::vector<Timestamp> natural_draw_times(const EncounterPlan& plan, const CohortConfig& config,
                                          const HospitalZone& zone, std::uint64_t seed, Timestamp end) {
    std::mt19937_64 rng(stream_seed(seed, plan.encounter_id + "/natural-draws"));
    const Timestamp stay_end = plan.discharged_at.value_or(end);
    std::vector<Timestamp> out;
    const Timestamp stat = plan.admitted_at + minutes(30);
    if (stat < stay_end) out.push_back(stat);
    for (auto day = zone.local_day(plan.admitted_at) + 1; day <= zone.local_day(stay_end); ++day) {
        const double jitter = std::clamp(normal(rng, 0.0, config.behavior.draw_jitter_minutes),
                                         -3.0 * config.behavior.draw_jitter_minutes,
                                         3.0 * config.behavior.draw_jitter_minutes);
        const Timestamp t = zone.from_local(day, config.behavior.draw_minute) +
                            Seconds{static_cast<std::int64_t>(jitter * 60.0)};
        if ((out.empty() || t > out.back()) && t < stay_end) out.push_back(t);
    }
    return out;
}

} // namespace

GeneratedCohort generate_cohort(const CohortConfig& config, std::uint64_t seed, std::size_t n) {
    config.validate();
    GeneratedCohort out;
    out.plans = make_plans(config, seed, n);
    const HospitalZone zone(config.time_zone);
    const ThresholdRegistry registry = ThresholdRegistry::defaults();
    const LabCodeMap codes = LabCodeMap::defaults();
    const Timestamp end = config.start + days(config.duration_days);
    std::vector<Json> resources;
    for (const auto& plan : out.plans) {
        auto base = plan_resources(plan);
        resources.insert(resources.end(), base.begin(), base.end());
        LabProcess process(plan, config, registry, seed);
        LabSeries series(plan.encounter_id, {});
        for (Timestamp t : natural_draw_times(plan, config, zone, seed, end)) {
            auto results = process.draw(t);
            for (const auto& r : results) series.add(r);
            auto obs = lab_resources(plan.encounter_id, results, codes, registry);
            resources.insert(resources.end(), obs.begin(), obs.end());
        }
        StandingOrder order;
        order.order_id = plan.encounter_id + "-cbc-1";
        order.encounter_id = plan.encounter_id;
        order.start_at = plan.admitted_at;
        order.end_at = plan.discharged_at.value_or(end) + config.behavior.order_duration;
        resources.push_back(fhir::order_to_service_request(order));
        out.labs.emplace(plan.encounter_id, std::move(series));
    }
    out.dataset = Json{{"schema", "smartalert-fixture/1"}, {"bundles", Json::array({fhir::make_bundle(resources)})}};
    return out;
}

GeneratedCohort generate_cohort(const CohortConfig& config) {
    return generate_cohort(config, config.seed, config.n_encounters);
}

std::vector<TrainingRow> training_rows(const CohortConfig& config, std::uint64_t seed, std::size_t n,
                                       const FeatureConfig& features) {
    const GeneratedCohort cohort = generate_cohort(config, seed, n);
    FhirStore store;
    store.load_dataset(cohort.dataset);
    LocalFhirSource source(store);
    const ThresholdRegistry registry = ThresholdRegistry::defaults();
    std::vector<TrainingRow> rows;
    for (const auto& plan : cohort.plans) {
        const LabSeries& labs = cohort.labs.at(plan.encounter_id);
        const auto draws = panel_draw_times(labs, features.layout.panel);
        std::mt19937_64 rng(stream_seed(seed, plan.encounter_id + "/as-of"));
        for (std::size_t i = 0; i + 1 < draws.size(); ++i) {
            const auto gap = (draws[i + 1] - draws[i]).count();
            const Timestamp as_of =
                draws[i] + Seconds{static_cast<std::int64_t>(uniform(rng) * static_cast<double>(gap))};
            const PatientSnapshot snapshot = source.fetch_snapshot(plan.encounter_id, as_of);
            const FeatureVector fv = extract_features(snapshot, as_of, features);
            for (LabComponent c : features.layout.panel) {
                if (!fv.predictable(c)) continue;
                const auto results = labs.for_component(c);
                auto prev = std::find_if(results.begin(), results.end(),
                                         [&](const LabResult& r) { return r.observed_at == draws[i]; });
                auto next = std::find_if(results.begin(), results.end(),
                                         [&](const LabResult& r) { return r.observed_at == draws[i + 1]; });
                if (prev == results.end() || next == results.end()) continue;
                rows.push_back({c, fv, label_stability(*prev, *next, registry.thresholds(c)).stable});
            }
        }
    }
    return rows;
}

TrainedModel train_reference_model(const CohortConfig& config, double target_ppv) {
    TrainedModel out;
    const auto train_set = training_rows(config, config.training_seed, config.training_encounters);
    const auto validate_set = training_rows(config, config.validation_seed, config.validation_encounters);
    out.training_rows = train_set.size();
    out.validation_rows = validate_set.size();
    TrainOptions options;
    options.trained_at = format_rfc3339(config.start);
    out.artifact = calibrate(train(train_set, options), validate_set, target_ppv);
    return out;
}

// ---------------------------------------------------------------------------
// Silent-evaluation cohort

SilentEvalCohort make_silent_eval_cohort(const SilentEvalSpec& spec, const ThresholdRegistry& registry) {
    SilentEvalCohort out;
    std::mt19937_64 rng(stream_seed(spec.seed, "silent-eval"));
    std::map<LabComponent, std::size_t> positives, stable_positives;
    out.from = spec.start;
    for (std::size_t i = 0; i < spec.encounters; ++i) {
        const std::string id = padded("S", i + 1);
        const Timestamp at = spec.start + hours(static_cast<std::int64_t>(i));
        StabilityPrediction p;
        p.encounter_id = id;
        p.computed_at = at;
        p.model_version = "synthetic";
        LabSeries series(id, {});
        double panel = 1.0;
        for (const auto& [c, target] : spec.target_ppv) {
            const auto& th = registry.thresholds(c);
            const double tau = spec.thresholds.count(c) ? spec.thresholds.at(c) : 0.9;
            const bool positive = uniform(rng) < spec.positive_share;
            bool stable;
            double prob;
            if (positive) {
                prob = tau + (1.0 - tau) * uniform(rng, 0.01, 1.0);
                stable = uniform(rng) < target;
                ++positives[c];
                if (stable) ++stable_positives[c];
            } else {
                prob = tau * uniform(rng, 0.0, 1.0);
                stable = uniform(rng) < spec.negative_stable_rate;
            }
            const double prev = (th.stop_min + th.stop_max) / 2.0;
            const double next = stable ? prev + uniform(rng, 0.5 * th.acceptable_decrease, 0.5 * th.acceptable_increase)
                                       : prev + th.acceptable_increase * 1.5 + 1.0;
            series.add({c, prev, at - hours(6), ResultStatus::final});
            series.add({c, next, at + hours(6), ResultStatus::final});
            p.component_probability[c] = prob;
            panel = std::min(panel, prob);
        }
        p.panel_probability = panel;
        out.log.push_back(std::move(p));
        out.realized.emplace(id, std::move(series));
    }
    out.to = spec.start + hours(static_cast<std::int64_t>(spec.encounters) + 1);
    for (const auto& [c, n] : positives) {
        out.generator_ppv[c] = n ? static_cast<double>(stable_positives[c]) / static_cast<double>(n) : 0.0;
    }
    return out;
}

} // namespace smartalert
