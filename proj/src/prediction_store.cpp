#include "smartalert/errors.hpp"
#include "smartalert/pipeline.hpp"

#include <algorithm>
#include <cstring>
#include <mutex>

namespace smartalert {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'L', 'O', 'G', '0', '0', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

std::string index_line(std::uint64_t offset, std::size_t length, std::string_view kind, const std::string& encounter,
                       const std::string& computed_at) {
    std::string line = std::to_string(offset);
    line += '\t';
    line += std::to_string(length);
    line += '\t';
    line += kind;
    line += '\t';
    line += encounter;
    line += '\t';
    line += computed_at;
    line += '\n';
    return line;
}

} // namespace

// ---------------------------------------------------------------------------
// ScheduleTick

Json ScheduleTick::to_json() const {
    return Json{{"tick_at", format_rfc3339(tick_at)},
                {"encounters_attempted", encounters_attempted},
                {"succeeded", succeeded},
                {"failed", failed},
                {"duration_seconds", duration_seconds},
                {"skipped_boundaries", skipped_boundaries},
                {"gateway_error", gateway_error}};
}

ScheduleTick ScheduleTick::from_json(const Json& j) {
    ScheduleTick t;
    t.tick_at = parse_rfc3339(require<std::string>(j, "tick_at", "tick"));
    t.encounters_attempted = require<std::size_t>(j, "encounters_attempted", "tick");
    t.succeeded = require<std::size_t>(j, "succeeded", "tick");
    t.failed = require<std::size_t>(j, "failed", "tick");
    t.duration_seconds = value_or<double>(j, "duration_seconds", 0.0);
    t.skipped_boundaries = value_or<std::size_t>(j, "skipped_boundaries", 0);
    t.gateway_error = value_or<bool>(j, "gateway_error", false);
    return t;
}

// ---------------------------------------------------------------------------
// PredictionStore

PredictionStore::PredictionStore() = default;

PredictionStore::PredictionStore(const std::filesystem::path& log_path) : path_(log_path) { replay(); }

PredictionStore::~PredictionStore() {
    if (log_) std::fclose(log_);
    if (idx_) std::fclose(idx_);
}

void PredictionStore::replay() {
    const auto& path = *path_;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::string bytes;
    if (std::filesystem::exists(path)) bytes = read_text_file(path);

    std::string index;
    std::uint64_t good = 0;
    if (bytes.empty()) {
        bytes.assign(kMagic, sizeof kMagic);
        write_text_file(path, bytes);
        good = sizeof kMagic;
    } else {
        if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
            throw ParseError("'" + path.string() + "' is not a prediction log");
        }
        std::uint64_t pos = sizeof kMagic;
        good = pos;
        while (pos + 4 <= bytes.size()) {
            const std::uint32_t len = get_u32(bytes.data() + pos);
            if (pos + 4 + len > bytes.size()) break;
            Json record;
            try {
                record = Json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos + 4),
                                     bytes.begin() + static_cast<std::ptrdiff_t>(pos + 4 + len));
            } catch (const Json::exception&) {
                break;
            }
            const std::string kind = record.value("kind", "");
            if (kind == "prediction") {
                auto p = StabilityPrediction::from_json(record.at("data"));
                auto& ids = by_encounter_[p.encounter_id];
                if (!ids.empty() && p.computed_at < records_[ids.back()].computed_at) {
                    throw ParseError("prediction log is out of order for " + p.encounter_id);
                }
                ids.push_back(records_.size());
                index += index_line(pos, len, kind, p.encounter_id, format_rfc3339(p.computed_at));
                records_.push_back(std::move(p));
            } else if (kind == "tick") {
                auto t = ScheduleTick::from_json(record.at("data"));
                index += index_line(pos, len, kind, "", format_rfc3339(t.tick_at));
                ticks_.push_back(t);
            } else {
                throw ParseError("unknown record kind '" + kind + "' in prediction log");
            }
            pos += 4 + len;
            good = pos;
        }
        if (good < bytes.size()) {
            truncated_bytes_ = bytes.size() - good;
            log(LogLevel::warn, "prediction log: dropping " + std::to_string(truncated_bytes_) + " torn bytes");
            std::filesystem::resize_file(path, good);
        }
    }
    std::filesystem::path idx_path = path;
    idx_path += ".idx";
    write_text_file(idx_path, index);

    offset_ = good;
    log_ = std::fopen(path.c_str(), "ab");
    idx_ = std::fopen(idx_path.c_str(), "ab");
    if (!log_ || !idx_) {
        throw TransportError("cannot open prediction log '" + path.string() + "' for append");
    }
}

void PredictionStore::write_record(const Json& record, std::string_view kind, const std::string& encounter,
                                   const std::string& computed_at) {
    if (!log_) return;
    const std::string body = record.dump();
    std::string frame;
    put_u32(frame, static_cast<std::uint32_t>(body.size()));
    frame += body;
    if (std::fwrite(frame.data(), 1, frame.size(), log_) != frame.size() || std::fflush(log_) != 0) {
        throw TransportError("prediction log write failed");
    }
    const std::string line = index_line(offset_, body.size(), kind, encounter, computed_at);
    std::fwrite(line.data(), 1, line.size(), idx_);
    std::fflush(idx_);
    offset_ += frame.size();
}

void PredictionStore::append(const StabilityPrediction& p) {
    std::unique_lock lock(mu_);
    auto& ids = by_encounter_[p.encounter_id];
    if (!ids.empty() && p.computed_at < records_[ids.back()].computed_at) {
        throw ContractError("prediction for " + p.encounter_id + " at " + format_rfc3339(p.computed_at) +
                            " precedes the stored latest");
    }
    write_record(Json{{"kind", "prediction"}, {"data", p.to_json()}}, "prediction", p.encounter_id,
                 format_rfc3339(p.computed_at));
    ids.push_back(records_.size());
    records_.push_back(p);
}

void PredictionStore::append_tick(const ScheduleTick& tick) {
    std::unique_lock lock(mu_);
    write_record(Json{{"kind", "tick"}, {"data", tick.to_json()}}, "tick", "", format_rfc3339(tick.tick_at));
    ticks_.push_back(tick);
}

std::optional<LatestPrediction> PredictionStore::latest(const std::string& encounter_id, Timestamp as_of) const {
    std::shared_lock lock(mu_);
    auto it = by_encounter_.find(encounter_id);
    if (it == by_encounter_.end()) return std::nullopt;
    const auto& ids = it->second;
    // computed_at is non-decreasing along ids; take the last one <= as_of.
    auto pos = std::upper_bound(ids.begin(), ids.end(), as_of,
                                [&](Timestamp t, std::size_t i) { return t < records_[i].computed_at; });
    if (pos == ids.begin()) return std::nullopt;
    const auto& p = records_[*(pos - 1)];
    return LatestPrediction{p, as_of - p.computed_at};
}

std::vector<StabilityPrediction> PredictionStore::history(const std::string& encounter_id) const {
    std::shared_lock lock(mu_);
    std::vector<StabilityPrediction> out;
    auto it = by_encounter_.find(encounter_id);
    if (it == by_encounter_.end()) return out;
    for (auto i : it->second) out.push_back(records_[i]);
    return out;
}

std::vector<StabilityPrediction> PredictionStore::all() const {
    std::shared_lock lock(mu_);
    return records_;
}

std::vector<ScheduleTick> PredictionStore::ticks() const {
    std::shared_lock lock(mu_);
    return ticks_;
}

std::optional<ScheduleTick> PredictionStore::last_tick() const {
    std::shared_lock lock(mu_);
    if (ticks_.empty()) return std::nullopt;
    return ticks_.back();
}

std::size_t PredictionStore::size() const {
    std::shared_lock lock(mu_);
    return records_.size();
}

std::size_t PredictionStore::encounter_count() const {
    std::shared_lock lock(mu_);
    return by_encounter_.size();
}

} // namespace smartalert
