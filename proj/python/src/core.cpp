#include "smartalert/analytics.hpp"
#include "smartalert/cohort.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace smartalert;

namespace {

std::string label_json(const std::string& component, double previous, double next) {
    const LabComponent c = require_component(component);
    const auto& t = ThresholdRegistry::defaults().thresholds(c);
    const Timestamp t0 = make_utc(2024, 1, 1);
    const StabilityLabel l = label_stability({c, previous, t0}, {c, next, t0 + hours(24)}, t);
    Json reasons = Json::array();
    for (auto r : l.reasons) reasons.push_back(to_string(r));
    return Json{{"component", component}, {"delta", l.delta}, {"stable", l.stable}, {"reasons", reasons}}.dump();
}

std::string poisson_json(const std::vector<std::int64_t>& t, const std::vector<std::int64_t>& c) {
    const PoissonComparison r = poisson_rate_compare(t, c);
    return Json{{"mean_treatment", r.mean_treatment},
                {"mean_control", r.mean_control},
                {"rate_ratio", r.rate_ratio},
                {"p", r.p ? Json(*r.p) : Json()},
                {"method", r.method}}
        .dump();
}

py::tuple mann_whitney(const std::vector<double>& x, const std::vector<double>& y) {
    const MannWhitney r = mann_whitney_u(x, y);
    return py::make_tuple(r.u, r.p, r.method);
}

std::string calibrate_json(const std::vector<double>& scores, const std::vector<bool>& labels, double target) {
    if (scores.size() != labels.size()) throw ContractError("scores and labels differ in length");
    std::vector<ScoredLabel> scored;
    for (std::size_t i = 0; i < scores.size(); ++i) scored.push_back({scores[i], labels[i]});
    const ThresholdChoice ch = calibrate_threshold(scored, target);
    return Json{{"threshold", ch.threshold},
                {"unattainable", ch.unattainable},
                {"ppv", ch.ppv ? Json(*ch.ppv) : Json()},
                {"recall", ch.recall}}
        .dump();
}

std::string cohort_dataset(const std::string& config_json, std::uint64_t seed, std::size_t n) {
    const CohortConfig config = CohortConfig::from_json(Json::parse(config_json));
    return generate_cohort(config, seed, n).dataset.dump();
}

std::string report_json(const std::string& events_jsonl, const std::string& encounters_jsonl) {
    const auto events = import_events(events_jsonl);
    const auto encounters = import_encounters(encounters_jsonl);
    return build_report(events, encounters).to_json().dump();
}

std::string render_report(const std::string& events_jsonl, const std::string& encounters_jsonl) {
    return build_report(import_events(events_jsonl), import_encounters(encounters_jsonl)).render();
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "SmartAlert core bindings";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

    m.def("label_json", &label_json, py::arg("component"), py::arg("previous"), py::arg("next"));
    m.def("relative_reduction", &relative_reduction, py::arg("mean_treatment"), py::arg("mean_control"));
    m.def(
        "savings",
        [](double annual, double repetitive, double reduction, double charge) {
            const Savings s = savings(annual, repetitive, reduction, charge);
            return py::make_tuple(s.tests_avoided, s.dollars);
        },
        py::arg("annual"), py::arg("repetitive"), py::arg("reduction"), py::arg("charge") = 0.0);
    m.def(
        "fisher_exact",
        [](std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) { return fisher_exact(a, b, c, d).p; },
        py::arg("a"), py::arg("b"), py::arg("c"), py::arg("d"));
    m.def("mann_whitney", &mann_whitney, py::arg("x"), py::arg("y"));
    m.def("poisson_json", &poisson_json, py::arg("treatment"), py::arg("control"));
    m.def("calibrate_json", &calibrate_json, py::arg("scores"), py::arg("labels"), py::arg("target_ppv") = 0.90);
    m.def("cohort_dataset", &cohort_dataset, py::arg("config_json"), py::arg("seed"), py::arg("n"));
    m.def("report_json", &report_json, py::arg("events_jsonl"), py::arg("encounters_jsonl"));
    m.def("render_report", &render_report, py::arg("events_jsonl"), py::arg("encounters_jsonl"));
    m.def("format_rate", &format_rate, py::arg("value"));
    m.def("format_mean", &format_mean, py::arg("value"));
}
