#pragma once

#include "smartalert/json_io.hpp"
#include "smartalert/time.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace smartalert {

/// Lab components carried by the threshold registry. The CBC panel uses the
/// first three; the rest are registry rows only.
enum class LabComponent { WBC, HGB, PLT, NA, K, CR, CA, MG, PHOS, AST, ALT, TBILI, ALKPHOS };

inline constexpr std::array<LabComponent, 13> kAllComponents{
    LabComponent::WBC, LabComponent::HGB, LabComponent::PLT,  LabComponent::NA,    LabComponent::K,
    LabComponent::CR,  LabComponent::CA,  LabComponent::MG,   LabComponent::PHOS,  LabComponent::AST,
    LabComponent::ALT, LabComponent::TBILI, LabComponent::ALKPHOS};

inline constexpr std::array<LabComponent, 3> kCbcPanel{LabComponent::WBC, LabComponent::HGB,
                                                       LabComponent::PLT};

std::string_view to_string(LabComponent c);
std::optional<LabComponent> parse_component(std::string_view code);
LabComponent require_component(std::string_view code);

enum class ResultStatus { final, corrected };

std::string_view to_string(ResultStatus s);
ResultStatus parse_result_status(std::string_view s);

struct LabResult {
    LabComponent component = LabComponent::WBC;
    double value = 0.0;
    Timestamp observed_at{};
    ResultStatus status = ResultStatus::final;

    friend bool operator==(const LabResult&, const LabResult&) = default;
};

/// Time-ordered results for one encounter. At most one effective result per
/// component and timestamp: a corrected result supersedes a final one, and
/// otherwise the later insertion wins.
class LabSeries {
public:
    LabSeries() = default;
    explicit LabSeries(std::string encounter_id, std::vector<LabResult> results = {});

    /// Throws ContractError on a non-finite or negative value.
    void add(const LabResult& result);

    const std::string& encounter_id() const { return encounter_id_; }
    std::span<const LabResult> results() const { return results_; }
    std::size_t size() const { return results_.size(); }
    bool empty() const { return results_.empty(); }

    std::vector<LabResult> for_component(LabComponent c) const;
    LabSeries until(Timestamp as_of) const;

    friend bool operator==(const LabSeries&, const LabSeries&) = default;

private:
    std::string encounter_id_;
    std::vector<LabResult> results_;
};

struct ComponentInfo {
    LabComponent code = LabComponent::WBC;
    std::string display_name;
    std::string unit;
};

/// Clinician-consensus bounds for calling a consecutive result pair stable.
struct StabilityThresholds {
    LabComponent component = LabComponent::WBC;
    double ref_low = 0.0;
    double ref_high = 0.0;
    double acceptable_decrease = 0.0; // <= 0
    double acceptable_increase = 0.0; // >= 0
    double stop_min = 0.0;
    double stop_max = 0.0;
    // Spread across respondents; metadata only.
    std::optional<std::array<double, 4>> std_dev;

    void validate() const;
};

enum class StabilityReason { delta_below, delta_above, below_min, above_max };
std::string_view to_string(StabilityReason r);

struct StabilityLabel {
    LabComponent component = LabComponent::WBC;
    double previous_value = 0.0;
    double next_value = 0.0;
    double delta = 0.0;
    bool stable = true;
    std::vector<StabilityReason> reasons;
};

/// Pure labeler. Intervals are closed on both ends, with a 1e-9 relative
/// slack so decimal inputs that land on a bound count as inside it. Throws ContractError on
/// component mismatch, non-finite values, or non-increasing timestamps.
StabilityLabel label_stability(const LabResult& prev, const LabResult& next,
                               const StabilityThresholds& t);

class ThresholdRegistry {
public:
    /// Consensus means for all thirteen surveyed components, CBC panel defined.
    static ThresholdRegistry defaults();
    static ThresholdRegistry from_json(const Json& doc);
    static ThresholdRegistry load(const std::filesystem::path& path);
    Json to_json() const;

    const std::string& version() const { return version_; }
    const StabilityThresholds& thresholds(LabComponent c) const;
    const ComponentInfo& info(LabComponent c) const;
    bool contains(LabComponent c) const { return thresholds_.count(c) != 0; }
    const std::vector<LabComponent>& panel(std::string_view name) const;
    std::vector<std::string> panel_names() const;

    void set(ComponentInfo info, StabilityThresholds t);
    void set_panel(std::string name, std::vector<LabComponent> members);

private:
    std::string version_ = "unversioned";
    std::map<LabComponent, ComponentInfo> info_;
    std::map<LabComponent, StabilityThresholds> thresholds_;
    std::map<std::string, std::vector<LabComponent>, std::less<>> panels_;
};

class InsufficientHistory : public ContractError {
public:
    explicit InsufficientHistory(LabComponent c);
    LabComponent component() const { return component_; }

private:
    LabComponent component_;
};

struct PanelLabel {
    std::map<LabComponent, StabilityLabel> components;
    bool stable = false;
};

/// Labels the latest consecutive result pair of every panel component and
/// takes the conjunction. Throws InsufficientHistory naming the first
/// component with fewer than two results.
PanelLabel label_panel(const LabSeries& series, std::span<const LabComponent> panel,
                       const ThresholdRegistry& registry);

} // namespace smartalert
