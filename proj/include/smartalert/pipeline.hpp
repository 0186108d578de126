#pragma once

#include "smartalert/fhir.hpp"
#include "smartalert/predictor.hpp"

#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stop_token>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

namespace smartalert {

struct ScheduleTick {
    Timestamp tick_at{};
    std::size_t encounters_attempted = 0;
    std::size_t succeeded = 0;
    std::size_t failed = 0;
    double duration_seconds = 0.0;
    // Boundaries passed over because the previous tick ran long.
    std::size_t skipped_boundaries = 0;
    // The admitted list could not be fetched at all.
    bool gateway_error = false;

    Json to_json() const;
    static ScheduleTick from_json(const Json& j);
    friend bool operator==(const ScheduleTick&, const ScheduleTick&) = default;
};

struct LatestPrediction {
    StabilityPrediction prediction;
    Seconds staleness{};
    double staleness_hours() const { return static_cast<double>(staleness.count()) / 3600.0; }
};

/// Append-only flowsheet of predictions and tick records.
///
/// On disk: the 8-byte magic `SALOG001`, then records of a 4-byte
/// little-endian payload length followed by that many bytes of JSON. The
/// sidecar `<log>.idx` carries one line per record:
///   offset <TAB> length <TAB> kind <TAB> encounter <TAB> computed_at
/// A torn final record is truncated on open and the sidecar is rebuilt.
class PredictionStore {
public:
    /// In-memory only.
    PredictionStore();
    /// Opens or creates the log. Throws TransportError / ParseError.
    explicit PredictionStore(const std::filesystem::path& log_path);
    ~PredictionStore();
    PredictionStore(const PredictionStore&) = delete;
    PredictionStore& operator=(const PredictionStore&) = delete;

    /// Throws ContractError when computed_at precedes the encounter's latest record.
    void append(const StabilityPrediction& p);
    void append_tick(const ScheduleTick& tick);

    /// Greatest computed_at <= as_of; a same-time tie goes to the later append.
    std::optional<LatestPrediction> latest(const std::string& encounter_id, Timestamp as_of) const;
    std::vector<StabilityPrediction> history(const std::string& encounter_id) const;
    std::vector<StabilityPrediction> all() const;
    std::vector<ScheduleTick> ticks() const;
    std::optional<ScheduleTick> last_tick() const;
    std::size_t size() const;
    std::size_t encounter_count() const;
    std::size_t truncated_bytes() const { return truncated_bytes_; }
    const std::optional<std::filesystem::path>& path() const { return path_; }

private:
    void write_record(const Json& record, std::string_view kind, const std::string& encounter,
                      const std::string& computed_at);
    void replay();

    mutable std::shared_mutex mu_;
    std::optional<std::filesystem::path> path_;
    std::FILE* log_ = nullptr;
    std::FILE* idx_ = nullptr;
    std::uint64_t offset_ = 0;
    std::size_t truncated_bytes_ = 0;
    std::vector<StabilityPrediction> records_;
    std::unordered_map<std::string, std::vector<std::size_t>> by_encounter_;
    std::vector<ScheduleTick> ticks_;
};

// ---------------------------------------------------------------------------
// Clocks

class Clock {
public:
    virtual ~Clock() = default;
    virtual Timestamp now() const = 0;
    /// Blocks until `t` or until stop is requested. Returns false when stopped.
    virtual bool wait_until(Timestamp t, std::stop_token stop) = 0;
};

/// Time moves only when told to. Waiting jumps straight to the target.
class SimulatedClock : public Clock {
public:
    explicit SimulatedClock(Timestamp start) : now_(start) {}
    Timestamp now() const override;
    bool wait_until(Timestamp t, std::stop_token stop) override;
    void advance(Seconds d);
    void set(Timestamp t);

private:
    mutable std::mutex mu_;
    Timestamp now_;
};

/// System time shifted by a fixed offset, so a dataset recorded at another
/// date can be replayed live.
class WallClock : public Clock {
public:
    explicit WallClock(Seconds offset = Seconds{0}) : offset_(offset) {}
    Timestamp now() const override;
    bool wait_until(Timestamp t, std::stop_token stop) override;

private:
    Seconds offset_;
    std::mutex mu_;
    std::condition_variable_any cv_;
};

// ---------------------------------------------------------------------------
// Pipeline

class PredictionPipeline {
public:
    PredictionPipeline(FhirSource& gateway, Predictor predictor, PredictionStore& store,
                       FeatureConfig features = {});

    /// Fetch, extract, predict and append for every admitted encounter.
    /// Per-encounter failures are counted and never abort the tick. The tick
    /// record is persisted.
    ScheduleTick run_tick(Timestamp as_of);
    /// Same as run_tick without persisting the tick record (the scheduler
    /// persists it once duration and skips are known).
    ScheduleTick execute_tick(Timestamp as_of);

    /// Single-encounter prediction computed at request time (not stored).
    StabilityPrediction predict_now(const std::string& encounter_id, Timestamp as_of);

    void set_predictor(Predictor predictor);
    Predictor predictor() const;
    PredictionStore& store() { return store_; }

private:
    StabilityPrediction compute(const std::string& encounter_id, Timestamp as_of, const Predictor& predictor);

    FhirSource& gateway_;
    mutable std::mutex predictor_mu_;
    Predictor predictor_;
    PredictionStore& store_;
    FeatureConfig features_;
};

/// Periodic driver: ticks at t0 + k * interval. A tick that runs past the
/// next boundary skips it (no overlap, no catch-up). After a restart the next
/// tick is the first boundary after the persisted last tick and not before
/// now.
class Scheduler {
public:
    using Runner = std::function<ScheduleTick(Timestamp)>;

    static Runner runner_for(PredictionPipeline& pipeline);

    Scheduler(Runner runner, Clock& clock, PredictionStore& store, Timestamp t0, Seconds interval = hours(6));
    ~Scheduler();

    Timestamp next_boundary() const;
    /// Runs due ticks in the calling thread until the next boundary would be
    /// after `end`. Returns the ticks run.
    std::vector<ScheduleTick> run_until(Timestamp end);

    /// Background loop on its own thread until stop().
    void start();
    void stop();

    std::size_t ticks_run() const;
    std::size_t skipped_total() const;
    std::optional<ScheduleTick> last_tick() const;
    bool running() const;
    Seconds interval() const { return interval_; }

private:
    std::optional<ScheduleTick> step(std::stop_token stop);
    Timestamp first_boundary_at_or_after(Timestamp t) const;

    Runner runner_;
    Clock& clock_;
    PredictionStore& store_;
    Timestamp t0_;
    Seconds interval_;
    mutable std::mutex mu_;
    Timestamp next_{};
    std::size_t pending_skips_ = 0;
    std::size_t ticks_run_ = 0;
    std::size_t skipped_total_ = 0;
    std::optional<ScheduleTick> last_;
    bool in_tick_ = false;
    std::jthread thread_;
};

} // namespace smartalert
