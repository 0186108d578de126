#include "smartalert/errors.hpp"
#include "smartalert/logistic.hpp"
#include "smartalert/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace smartalert {

namespace {

constexpr double kAgeCenter = 65.0;
constexpr double kAgeScale = 15.0;

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) {
        if (!field.empty() && field.back() == '\r') field.pop_back();
        out.push_back(field);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Design

const std::vector<std::string>& design_names() {
    static const std::vector<std::string> names{
        "intercept",          "value_z",          "value_z2",        "delta_z",
        "delta_z2",           "delta_missing",    "hours_since_last_days",
        "recent_transfusion", "recent_procedure", "active_anticoagulant",
        "age_z",              "sex_female",       "sex_missing"};
    return names;
}

std::vector<double> design_row(const ComponentModel& model, const FeatureVector& fv) {
    const LabComponent c = model.component;
    const auto& layout = fv.layout;
    const auto newest = fv.at(layout.value_index(c, 0));
    if (!newest) {
        throw ContractError(std::string(to_string(c)) + " has no prior result");
    }
    const double z = (*newest - model.value_center) / model.value_scale;
    const auto delta = fv.at(layout.delta_index(c));
    const double dz = delta ? *delta / model.delta_scale : 0.0;
    const double since = fv.at(layout.hours_since_last_index(c)).value_or(0.0) / 24.0;
    const auto age = fv.global(GlobalFeature::age_years);
    const auto female = fv.global(GlobalFeature::sex_female);
    return {1.0,
            z,
            z * z,
            dz,
            dz * dz,
            delta ? 0.0 : 1.0,
            since,
            fv.global(GlobalFeature::recent_transfusion).value_or(0.0),
            fv.global(GlobalFeature::recent_procedure).value_or(0.0),
            fv.global(GlobalFeature::active_anticoagulant).value_or(0.0),
            age ? (*age - kAgeCenter) / kAgeScale : 0.0,
            female.value_or(0.0),
            female ? 0.0 : 1.0};
}

// ---------------------------------------------------------------------------
// Artifact

Json ModelArtifact::to_json() const {
    Json comps = Json::object();
    for (const auto& [c, m] : components) {
        Json jm{{"trainable", m.trainable},
                {"design", design_names()},
                {"coefficients", m.coefficients},
                {"value_center", m.value_center},
                {"value_scale", m.value_scale},
                {"delta_scale", m.delta_scale},
                {"training_rows", m.training_rows},
                {"training_positives", m.training_positives},
                {"threshold", m.threshold},
                {"threshold_unattainable", m.threshold_unattainable},
                {"validation_ppv", m.validation_ppv ? Json(*m.validation_ppv) : Json()},
                {"validation_recall", m.validation_recall ? Json(*m.validation_recall) : Json()}};
        if (!m.trainable) jm["untrainable_reason"] = m.untrainable_reason;
        comps[std::string(to_string(c))] = std::move(jm);
    }
    Json panel = Json::array();
    for (auto c : layout.panel) panel.push_back(std::string(to_string(c)));
    return Json{{"schema", "smartalert-model/1"},
                {"model_version", model_version},
                {"model_family", "logistic_regression"},
                {"feature_layout", {{"history_depth", layout.history_depth}, {"panel", panel}, {"names", layout.names()}}},
                {"components", comps},
                {"training", {{"dataset_hash", dataset_hash}, {"trained_at", trained_at}, {"l2", l2}}},
                {"content_hash", content_hash}};
}

ModelArtifact ModelArtifact::from_json(const Json& doc) {
    try {
        if (doc.value("schema", "") != "smartalert-model/1") {
            throw ConfigError("unsupported model artifact schema");
        }
        ModelArtifact a;
        a.model_version = doc.at("model_version").get<std::string>();
        const auto& fl = doc.at("feature_layout");
        a.layout.history_depth = fl.at("history_depth").get<std::size_t>();
        a.layout.panel.clear();
        for (const auto& c : fl.at("panel")) a.layout.panel.push_back(require_component(c.get<std::string>()));
        for (const auto& [code, jm] : doc.at("components").items()) {
            ComponentModel m;
            m.component = require_component(code);
            m.trainable = jm.at("trainable").get<bool>();
            m.untrainable_reason = jm.value("untrainable_reason", "");
            m.coefficients = jm.at("coefficients").get<std::vector<double>>();
            if (m.trainable && m.coefficients.size() != design_names().size()) {
                throw ConfigError("coefficient count mismatch for " + code);
            }
            m.value_center = jm.at("value_center").get<double>();
            m.value_scale = jm.at("value_scale").get<double>();
            m.delta_scale = jm.at("delta_scale").get<double>();
            m.training_rows = jm.value("training_rows", std::size_t{0});
            m.training_positives = jm.value("training_positives", std::size_t{0});
            m.threshold = jm.at("threshold").get<double>();
            m.threshold_unattainable = jm.at("threshold_unattainable").get<bool>();
            if (!jm["validation_ppv"].is_null()) m.validation_ppv = jm["validation_ppv"].get<double>();
            if (!jm["validation_recall"].is_null()) m.validation_recall = jm["validation_recall"].get<double>();
            a.components.emplace(m.component, std::move(m));
        }
        for (auto c : a.layout.panel) {
            if (!a.components.count(c)) {
                throw ConfigError("artifact lacks a model entry for " + std::string(to_string(c)));
            }
        }
        const auto& tr = doc.at("training");
        a.dataset_hash = tr.value("dataset_hash", "");
        a.trained_at = tr.value("trained_at", "");
        a.l2 = tr.value("l2", 0.0);
        a.content_hash = doc.value("content_hash", "");
        if (!a.content_hash.empty() && a.content_hash != a.compute_hash()) {
            throw ConfigError("model artifact content hash mismatch");
        }
        return a;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed model artifact: ") + e.what());
    } catch (const ParseError& e) {
        throw ConfigError(std::string("malformed model artifact: ") + e.what());
    }
}

ModelArtifact ModelArtifact::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

void ModelArtifact::save(const std::filesystem::path& path) const { write_json_file(path, to_json()); }

std::string ModelArtifact::compute_hash() const {
    Json j = to_json();
    j.erase("content_hash");
    j["training"].erase("trained_at");
    return hex64(fnv1a64(j.dump()));
}

std::map<LabComponent, double> ModelArtifact::thresholds() const {
    std::map<LabComponent, double> out;
    for (const auto& [c, m] : components) out[c] = m.threshold;
    return out;
}

std::string next_model_version(const std::string& previous) {
    if (previous.empty()) return "lr.1";
    const auto dot = previous.rfind('.');
    try {
        const long n = std::stol(previous.substr(dot == std::string::npos ? 0 : dot + 1));
        return "lr." + std::to_string(n + 1);
    } catch (const std::exception&) {
        throw ContractError("cannot increment model version '" + previous + "'");
    }
}

// ---------------------------------------------------------------------------
// Predictor

Predictor::Predictor(std::shared_ptr<const ModelArtifact> artifact) : artifact_(std::move(artifact)) {}

const ModelArtifact& Predictor::artifact() const {
    if (!artifact_) throw ConfigError("no model artifact loaded");
    return *artifact_;
}

Prediction Predictor::predict(const FeatureVector& features) const {
    const ModelArtifact& a = artifact();
    if (!(features.layout == a.layout)) {
        throw ContractError("feature layout does not match the model artifact");
    }
    Prediction out;
    double panel = 1.0;
    for (LabComponent c : a.layout.panel) {
        const ComponentModel& m = a.components.at(c);
        if (!features.predictable(c) || !m.trainable) {
            out.probability[c] = std::nullopt;
            out.not_predictable.push_back(c);
            continue;
        }
        const auto row = design_row(m, features);
        double z = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) z += row[j] * m.coefficients[j];
        const double p = logistic::sigmoid(z);
        out.probability[c] = p;
        panel = std::min(panel, p);
    }
    out.panel_probability = out.not_predictable.empty() && !a.layout.panel.empty() ? panel : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// StabilityPrediction

Json StabilityPrediction::to_json() const {
    Json comps = Json::object();
    for (const auto& [c, p] : component_probability) comps[std::string(to_string(c))] = p ? Json(*p) : Json();
    return Json{{"encounter_id", encounter_id},
                {"computed_at", format_rfc3339(computed_at)},
                {"components", comps},
                {"panel_probability", panel_probability},
                {"model_version", model_version},
                {"input_snapshot_hash", input_snapshot_hash}};
}

StabilityPrediction StabilityPrediction::from_json(const Json& j) {
    StabilityPrediction p;
    p.encounter_id = j.at("encounter_id").get<std::string>();
    p.computed_at = parse_rfc3339(j.at("computed_at").get<std::string>());
    for (const auto& [code, v] : j.at("components").items()) {
        p.component_probability[require_component(code)] =
            v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    }
    p.panel_probability = j.at("panel_probability").get<double>();
    p.model_version = j.value("model_version", "");
    p.input_snapshot_hash = j.value("input_snapshot_hash", "");
    return p;
}

// ---------------------------------------------------------------------------
// Training

ModelArtifact train(std::span<const TrainingRow> rows, const TrainOptions& options) {
    if (rows.empty()) {
        throw ContractError("training set is empty");
    }
    ModelArtifact a;
    a.layout = rows.front().features.layout;
    for (const auto& r : rows) {
        if (!(r.features.layout == a.layout)) {
            throw ContractError("training rows disagree on feature layout");
        }
    }
    a.model_version = next_model_version(options.previous_version);
    a.dataset_hash = dataset_hash(rows);
    a.trained_at = options.trained_at;
    a.l2 = options.l2;

    for (LabComponent c : a.layout.panel) {
        ComponentModel m;
        m.component = c;
        std::vector<const TrainingRow*> mine;
        for (const auto& r : rows) {
            if (r.component == c && r.features.predictable(c)) mine.push_back(&r);
        }
        std::size_t positives = 0;
        double sum = 0.0, sum_sq = 0.0, delta_sq = 0.0;
        std::size_t deltas = 0;
        for (const auto* r : mine) {
            positives += r->stable ? 1 : 0;
            const double v = *r->features.at(a.layout.value_index(c, 0));
            sum += v;
            sum_sq += v * v;
            if (auto d = r->features.at(a.layout.delta_index(c))) {
                delta_sq += *d * *d;
                ++deltas;
            }
        }
        const std::size_t negatives = mine.size() - positives;
        m.training_rows = mine.size();
        m.training_positives = positives;
        if (positives < std::max<std::size_t>(options.min_per_class, 1) ||
            negatives < std::max<std::size_t>(options.min_per_class, 1)) {
            m.trainable = false;
            m.untrainable_reason = positives == 0 || negatives == 0 ? "single-class" : "too few examples per class";
            a.components.emplace(c, std::move(m));
            continue;
        }
        const double n = static_cast<double>(mine.size());
        m.value_center = sum / n;
        const double var = std::max(0.0, sum_sq / n - m.value_center * m.value_center);
        m.value_scale = var > 1e-12 ? std::sqrt(var) : 1.0;
        const double rms = deltas ? std::sqrt(delta_sq / static_cast<double>(deltas)) : 0.0;
        m.delta_scale = rms > 1e-12 ? rms : 1.0;

        logistic::Problem problem;
        for (const auto* r : mine) problem.add_row(design_row(m, r->features), r->stable);
        const auto fit = logistic::fit(problem, options.l2, options.tolerance, options.max_iterations);
        m.coefficients = fit.beta;
        m.trainable = true;
        a.components.emplace(c, std::move(m));
    }
    a.rehash();
    return a;
}

std::string training_csv(std::span<const TrainingRow> rows) {
    std::ostringstream out;
    const FeatureLayout layout = rows.empty() ? FeatureLayout{} : rows.front().features.layout;
    out << "component,stable";
    for (const auto& n : layout.names()) out << ',' << n;
    out << '\n';
    for (const auto& r : rows) {
        out << to_string(r.component) << ',' << (r.stable ? 1 : 0);
        for (const auto& v : r.features.slots) {
            out << ',';
            if (v) out << format_number(*v);
            else out << "NA";
        }
        out << '\n';
    }
    return out.str();
}

std::vector<TrainingRow> read_training_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError("'" + path.string() + "' is empty");
    }
    const auto header = split_csv_line(line);
    if (header.size() < 2 || header[0] != "component" || header[1] != "stable") {
        throw ParseError("training file must start with 'component,stable'");
    }
    const std::vector<std::string> names(header.begin() + 2, header.end());
    const FeatureLayout layout = FeatureLayout::from_names(names);
    std::vector<TrainingRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                             " fields");
        }
        TrainingRow row;
        row.component = require_component(fields[0]);
        if (fields[1] != "0" && fields[1] != "1") {
            throw ParseError("line " + std::to_string(line_no) + ": stable must be 0 or 1");
        }
        row.stable = fields[1] == "1";
        row.features.layout = layout;
        row.features.slots.reserve(names.size());
        for (std::size_t i = 2; i < fields.size(); ++i) {
            if (fields[i] == "NA") {
                row.features.slots.emplace_back(std::nullopt);
            } else {
                try {
                    row.features.slots.emplace_back(std::stod(fields[i]));
                } catch (const std::exception&) {
                    throw ParseError("line " + std::to_string(line_no) + ": bad number '" + fields[i] + "'");
                }
            }
        }
        for (LabComponent c : layout.panel) {
            if (!row.features.at(layout.value_index(c, 0))) row.features.not_predictable.push_back(c);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string dataset_hash(std::span<const TrainingRow> rows) { return hex64(fnv1a64(training_csv(rows))); }

} // namespace smartalert
