#include "smartalert/cohort.hpp"
#include "smartalert/service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace smartalert;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;

int report_error(std::string_view code, std::string_view message, int exit_code) {
    std::cerr << Json{{"error", {{"code", code}, {"message", message}}}}.dump() << "\n";
    return exit_code;
}

std::vector<StabilityPrediction> load_predictions(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    char magic[8] = {};
    in.read(magic, 8);
    in.close();
    if (std::string_view(magic, 8) == "SALOG001") {
        PredictionStore store(path);
        return store.all();
    }
    std::vector<StabilityPrediction> out;
    std::istringstream lines(read_text_file(path));
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        out.push_back(StabilityPrediction::from_json(Json::parse(line)));
    }
    return out;
}

std::map<std::string, LabSeries> load_realized(const std::filesystem::path& dataset, const LabCodeMap& codes) {
    FhirStore store;
    store.load_file(dataset);
    LocalFhirSource source(store, codes);
    std::map<std::string, LabSeries> out;
    const Timestamp far = make_utc(2200, 1, 1);
    for (const auto& enc : store.of_type("Encounter")) {
        const std::string id = enc.at("id").get<std::string>();
        out.emplace(id, source.fetch_snapshot(id, far).labs);
    }
    return out;
}

std::map<LabComponent, double> parse_thresholds(const std::vector<std::string>& items) {
    std::map<LabComponent, double> out;
    for (const auto& item : items) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ValidationError("threshold must look like WBC=0.9, got '" + item + "'");
        out[require_component(item.substr(0, eq))] = std::stod(item.substr(eq + 1));
    }
    return out;
}

volatile std::sig_atomic_t g_stop = 0;
Service* g_service = nullptr;

void on_signal(int) {
    g_stop = 1;
    if (g_service) g_service->stop();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SmartAlert lab-stability service and tools"};
    app.require_subcommand(1);

    // serve
    auto* serve = app.add_subcommand("serve", "Run the fixture gateway, prediction scheduler and /v1 API");
    std::string serve_config;
    serve->add_option("--config", serve_config, "Service config JSON")->required();

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Run the simulated pilot and write its logs");
    std::string sim_config, sim_model, sim_out = "sim-out", sim_alert;
    int sim_days = 0;
    std::uint64_t sim_seed = 0;
    double sim_target = 0.90;
    simulate->add_option("--config", sim_config, "Cohort config JSON")->required();
    simulate->add_option("--duration", sim_days, "Simulated days (overrides config)");
    simulate->add_option("--seed", sim_seed, "Cohort seed (overrides config)");
    simulate->add_option("--model", sim_model, "Model artifact; trained from the config when absent");
    simulate->add_option("--alert", sim_alert, "Alert config JSON");
    simulate->add_option("--target-ppv", sim_target, "PPV target when training");
    simulate->add_option("--out", sim_out, "Output directory");

    // silent-eval
    auto* seval = app.add_subcommand("silent-eval", "Score logged predictions against realized results");
    std::string se_from, se_to, se_predictions, se_dataset, se_model, se_thresholds_path;
    std::vector<std::string> se_taus;
    bool se_retro = false, se_json = false;
    seval->add_option("--from", se_from, "Window start (RFC-3339)")->required();
    seval->add_option("--to", se_to, "Window end, exclusive (RFC-3339)")->required();
    seval->add_option("--predictions", se_predictions, "Prediction log (store file or JSON lines)")->required();
    seval->add_option("--dataset", se_dataset, "Fixture dataset with the realized results")->required();
    seval->add_option("--model", se_model, "Model artifact supplying the decision thresholds");
    seval->add_option("--tau", se_taus, "Decision threshold override, e.g. WBC=0.9");
    seval->add_option("--thresholds", se_thresholds_path, "Stability threshold registry JSON");
    seval->add_flag("--retrospective", se_retro, "Label the report as retrospective");
    seval->add_flag("--json", se_json, "Print JSON instead of text");

    // analyze
    auto* analyze = app.add_subcommand("analyze", "Build the outcome report from trial logs");
    std::string an_events, an_encounters, an_json_out;
    analyze->add_option("--events", an_events, "Event export (JSON lines)")->required();
    analyze->add_option("--encounters", an_encounters, "Encounter export (JSON lines)")->required();
    analyze->add_option("--json-out", an_json_out, "Also write the report JSON here");

    // calibrate
    auto* calib = app.add_subcommand("calibrate", "Train and calibrate a model artifact");
    std::string cal_train, cal_validate, cal_out = "model.json", cal_previous;
    double cal_target = 0.90, cal_l2 = 1e-3;
    calib->add_option("--train", cal_train, "Training CSV")->required();
    calib->add_option("--validate", cal_validate, "Validation CSV")->required();
    calib->add_option("--target-ppv", cal_target, "PPV target");
    calib->add_option("--l2", cal_l2, "L2 penalty");
    calib->add_option("--previous-version", cal_previous, "Version of the artifact being replaced");
    calib->add_option("--out", cal_out, "Artifact path");

    // savings
    auto* sav = app.add_subcommand("savings", "Projected annual tests and charges avoided");
    double sv_annual = 0, sv_rep = 0, sv_red = 0, sv_charge = 0;
    sav->add_option("--annual", sv_annual, "Annual CBC volume")->required();
    sav->add_option("--repetitive", sv_rep, "Share that is repetitive")->required();
    sav->add_option("--reduction", sv_red, "Relative reduction")->required();
    sav->add_option("--charge", sv_charge, "Charge per test (dollars)");

    // training-data
    auto* tdata = app.add_subcommand("training-data", "Write labeled rows from a natural-history cohort");
    std::string td_config, td_out;
    std::uint64_t td_seed = 1;
    std::size_t td_n = 200;
    tdata->add_option("--config", td_config, "Cohort config JSON");
    tdata->add_option("--seed", td_seed, "Cohort seed");
    tdata->add_option("--encounters", td_n, "Number of encounters");
    tdata->add_option("--out", td_out, "CSV path")->required();

    // defaults
    auto* defs = app.add_subcommand("defaults", "Print a built-in configuration document");
    std::string def_what;
    defs->add_option("what", def_what, "thresholds, code-map, cohort or alert")
        ->required()
        ->check(CLI::IsMember({"thresholds", "code-map", "cohort", "alert"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        return report_error("usage", e.what(), kExitInvalid);
    }

    try {
        if (*serve) {
            const ServiceConfig config = ServiceConfig::load(serve_config);
            const Seconds offset =
                config.clock_start
                    ? *config.clock_start - std::chrono::floor<Seconds>(std::chrono::system_clock::now())
                    : Seconds{0};
            WallClock clock(offset);
            Service service(config, clock);
            g_service = &service;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            // Warm-up so the first order attempts do not wait for a boundary.
            if (service.predictions().size() == 0) service.pipeline().run_tick(clock.now());
            service.scheduler().start();
            std::cerr << Json{{"event", "listening"}, {"bind", config.host + ":" + std::to_string(config.port)}}.dump()
                      << "\n";
            const bool ok = service.listen(config.host, config.port);
            service.scheduler().stop();
            g_service = nullptr;
            if (!ok && !g_stop) return report_error("bind", "could not bind " + config.host, kExitFailure);
            return 0;
        }

        if (*simulate) {
            CohortConfig config = CohortConfig::load(sim_config);
            if (sim_days > 0) config.duration_days = sim_days;
            if (sim_seed > 0) config.seed = sim_seed;
            config.validate();
            const std::filesystem::path out(sim_out);
            std::filesystem::create_directories(out);
            ModelArtifact artifact;
            if (sim_model.empty()) {
                artifact = train_reference_model(config, sim_target).artifact;
            } else {
                artifact = ModelArtifact::load(sim_model);
            }
            artifact.save(out / "model.json");
            const AlertConfig alert = sim_alert.empty() ? AlertConfig{} : AlertConfig::from_json(read_json_file(sim_alert));
            const PilotResult r = run_pilot(config, artifact, alert);
            write_text_file(out / "events.jsonl", export_events(r.events));
            write_text_file(out / "encounters.jsonl", export_encounters(r.encounters));
            std::string preds;
            for (const auto& p : r.predictions) preds += p.to_json().dump() + "\n";
            write_text_file(out / "predictions.jsonl", preds);
            std::vector<Json> resources;
            const LabCodeMap codes = LabCodeMap::defaults();
            const ThresholdRegistry registry = ThresholdRegistry::defaults();
            for (const auto& plan : make_plans(config, config.seed, config.n_encounters)) {
                for (auto& res : plan_resources(plan)) resources.push_back(std::move(res));
                if (auto it = r.labs.find(plan.encounter_id); it != r.labs.end()) {
                    const auto results = it->second.results();
                    for (auto& res : lab_resources(plan.encounter_id, results, codes, registry)) {
                        resources.push_back(std::move(res));
                    }
                }
            }
            for (const auto& o : r.orders) resources.push_back(fhir::order_to_service_request(o));
            write_json_file(out / "dataset.json",
                            Json{{"schema", "smartalert-fixture/1"}, {"bundles", Json::array({fhir::make_bundle(resources)})}},
                            0);
            const TrialReport report = build_report(r.events, r.encounters);
            std::size_t displayed = 0;
            for (const auto& e : r.events) displayed += e.displayed ? 1 : 0;
            Json summary{{"encounters", r.encounters.size()},
                         {"order_attempts", r.order_attempts},
                         {"events", r.events.size()},
                         {"displayed", displayed},
                         {"ticks", r.ticks.size()},
                         {"predictions", r.predictions.size()},
                         {"event_log_hash", r.event_log_hash},
                         {"model_version", artifact.model_version},
                         {"relative_reduction_52h",
                          report.relative_reduction_52h ? Json(*report.relative_reduction_52h) : Json()},
                         {"out", out.string()}};
            std::cout << summary.dump(2) << "\n";
            return 0;
        }

        if (*seval) {
            const Timestamp from = parse_rfc3339(se_from), to = parse_rfc3339(se_to);
            if (!(from < to)) throw ValidationError("--from must precede --to");
            const ThresholdRegistry registry =
                se_thresholds_path.empty() ? ThresholdRegistry::defaults() : ThresholdRegistry::load(se_thresholds_path);
            std::map<LabComponent, double> taus;
            if (!se_model.empty()) taus = ModelArtifact::load(se_model).thresholds();
            for (const auto& [c, v] : parse_thresholds(se_taus)) taus[c] = v;
            if (taus.empty()) throw ValidationError("give --model or at least one --tau");
            const auto log = load_predictions(se_predictions);
            const auto realized = load_realized(se_dataset, LabCodeMap::defaults());
            const EvalReport report = silent_eval(log, realized, registry, taus, from, to,
                                                  se_retro ? EvalMode::retrospective : EvalMode::silent_prospective);
            std::cout << (se_json ? report.to_json().dump(2) + "\n" : report.render());
            return 0;
        }

        if (*analyze) {
            const auto events = import_events(read_text_file(an_events));
            const auto encounters = import_encounters(read_text_file(an_encounters));
            const TrialReport report = build_report(events, encounters);
            if (!an_json_out.empty()) write_json_file(an_json_out, report.to_json());
            std::cout << report.render();
            return 0;
        }

        if (*calib) {
            const auto train_rows = read_training_csv(cal_train);
            const auto validate_rows = read_training_csv(cal_validate);
            TrainOptions options;
            options.l2 = cal_l2;
            options.previous_version = cal_previous;
            const ModelArtifact artifact = calibrate(train(train_rows, options), validate_rows, cal_target);
            artifact.save(cal_out);
            Json summary{{"artifact", cal_out}, {"model_version", artifact.model_version}, {"components", Json::object()}};
            for (const auto& [c, m] : artifact.components) {
                summary["components"][std::string(to_string(c))] =
                    Json{{"trainable", m.trainable},
                         {"threshold", m.threshold},
                         {"threshold_unattainable", m.threshold_unattainable},
                         {"validation_ppv", m.validation_ppv ? Json(*m.validation_ppv) : Json()},
                         {"validation_recall", m.validation_recall ? Json(*m.validation_recall) : Json()}};
            }
            std::cout << summary.dump(2) << "\n";
            return 0;
        }

        if (*sav) {
            const Savings s = savings(sv_annual, sv_rep, sv_red, sv_charge);
            Json out{{"tests_avoided", s.tests_avoided}};
            if (sv_charge > 0) out["dollars"] = s.dollars;
            std::cout << out.dump() << "\n";
            return 0;
        }

        if (*defs) {
            Json doc;
            if (def_what == "thresholds") doc = ThresholdRegistry::defaults().to_json();
            if (def_what == "code-map") doc = LabCodeMap::defaults().to_json();
            if (def_what == "cohort") doc = CohortConfig::defaults().to_json();
            if (def_what == "alert") doc = AlertConfig{}.to_json();
            std::cout << doc.dump(2) << "\n";
            return 0;
        }

        if (*tdata) {
            const CohortConfig config = td_config.empty() ? CohortConfig::defaults() : CohortConfig::load(td_config);
            const auto rows = training_rows(config, td_seed, td_n);
            write_text_file(td_out, training_csv(rows));
            std::cout << Json{{"rows", rows.size()}, {"out", td_out}}.dump() << "\n";
            return 0;
        }
    } catch (const ValidationError& e) {
        return report_error("validation", e.what(), kExitInvalid);
    } catch (const ConfigError& e) {
        return report_error("config", e.what(), kExitInvalid);
    } catch (const ParseError& e) {
        return report_error("parse", e.what(), kExitInvalid);
    } catch (const ContractError& e) {
        return report_error("contract", e.what(), kExitInvalid);
    } catch (const std::exception& e) {
        return report_error("failure", e.what(), kExitFailure);
    }
    return 0;
}
