#pragma once

#include "smartalert/alert.hpp"
#include "smartalert/analytics.hpp"
#include "smartalert/pipeline.hpp"
#include "smartalert/trial.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace smartalert {

struct ServiceConfig {
    std::filesystem::path dataset;
    std::filesystem::path thresholds;
    std::filesystem::path model;
    std::optional<std::filesystem::path> code_map;
    // Directory for the prediction log, arm registry and event log; in
    // memory when absent.
    std::optional<std::filesystem::path> state_dir;
    Seconds interval = hours(6);
    // Scheduler anchor; boundaries fall at anchor + k * interval.
    Timestamp anchor = make_utc(2024, 1, 1);
    AlertConfig alert;
    std::uint64_t trial_seed = 1;
    std::string host = "127.0.0.1";
    int port = 8080;
    // "local" reads the dataset in process; "http" serves it through the
    // fixture server and reads it back over HTTP.
    std::string gateway = "local";
    int fixture_latency_ms = 0;
    std::string time_zone = kDefaultZoneRule;
    // Service time at startup; the clock then runs at wall speed. Lets
    // fixture data dated in the past look current. Wall time when absent.
    std::optional<Timestamp> clock_start;

    /// Relative paths resolve against `base_dir`. Throws ConfigError.
    static ServiceConfig from_json(const Json& j, const std::filesystem::path& base_dir = {});
    static ServiceConfig load(const std::filesystem::path& path);
    Json to_json() const;
    /// Referenced files exist and the time zone parses. Throws ConfigError.
    void validate() const;
};

struct ApiResponse {
    int status = 200;
    Json body;
};

/// The /v1 API over in-process components. Transport-independent so the
/// same handler backs the HTTP server and direct calls.
class Service {
public:
    struct Parts {
        FhirSource* gateway = nullptr;
        Predictor predictor;
        ThresholdRegistry registry = ThresholdRegistry::defaults();
        AlertConfig alert;
        std::uint64_t trial_seed = 1;
        Clock* clock = nullptr;
        Timestamp anchor = make_utc(2024, 1, 1);
        Seconds interval = hours(6);
        std::optional<std::filesystem::path> state_dir;
    };

    explicit Service(Parts parts);
    /// Loads every artifact named in the config and wires the gateway.
    Service(const ServiceConfig& config, Clock& clock);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    ApiResponse handle(std::string_view method, std::string_view path,
                       const std::map<std::string, std::string>& query = {}, std::string_view body = {});

    ApiResponse order_attempt(const Json& body);
    ApiResponse alert_action(const std::string& event_id, const Json& body);
    ApiResponse prediction(const std::string& encounter_id, std::optional<Timestamp> as_of);
    ApiResponse labs(const std::string& encounter_id, std::optional<Timestamp> as_of, Seconds window);
    ApiResponse report();
    ApiResponse health();

    Scheduler& scheduler() { return *scheduler_; }
    PredictionPipeline& pipeline() { return *pipeline_; }
    PredictionStore& predictions() { return *predictions_; }
    EventLog& events() { return *events_; }
    ArmRegistry& arms() { return *arms_; }
    FhirSource& gateway() { return *gateway_; }

    /// Serves the API until stop(). Returns false if the bind fails.
    bool listen(const std::string& host, int port);
    /// Binds to an ephemeral port on a background thread; returns the port.
    int start_background(const std::string& host = "127.0.0.1");
    void stop();

private:
    struct Owned;
    std::unique_ptr<Owned> owned_;
    FhirSource* gateway_ = nullptr;
    Clock* clock_ = nullptr;
    ThresholdRegistry registry_;
    AlertConfig alert_;
    std::unique_ptr<PredictionStore> predictions_;
    std::unique_ptr<PredictionPipeline> pipeline_;
    std::unique_ptr<Scheduler> scheduler_;
    std::unique_ptr<ArmRegistry> arms_;
    std::unique_ptr<EventLog> events_;
    std::mutex order_mu_;
    struct Http;
    std::unique_ptr<Http> http_;

    void init(Parts parts);
};

} // namespace smartalert
