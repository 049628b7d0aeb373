#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "aslperf/core.hpp"
#include "aslperf/features.hpp"
#include "aslperf/phantom.hpp"
#include "aslperf/reffit.hpp"
#include "aslperf/wdsr.hpp"

namespace aslperf::io {

/// Schema violation; `field()` is the dotted path of the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error("config: " + field + ": " + message), field_(std::move(field)) {}
    [[nodiscard]] const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

struct SplitConfig {
    int train = 300;
    int val = 100;
    int test = 100;
    std::uint64_t seed = 7;
    bool operator==(const SplitConfig&) const = default;
    [[nodiscard]] int total() const { return train + val + test; }
};

struct TrainingConfig {
    wdsr::WdsrConfig net;  ///< in/out channels are set per variant at train time
    int micro_batch = 8;
    bool operator==(const TrainingConfig&) const = default;
};

struct ExperimentConfig {
    AcquisitionProtocol protocol;
    phantom::PhantomSpec phantom;
    double mask_threshold = kDefaultMaskThreshold;
    reffit::FitConfig fit;
    /// count 0 selects default_slice_range(nz).
    features::SliceRange slices{0, 0};
    features::TargetScaling scaling;
    TrainingConfig training;
    SplitConfig split;
    std::string work_dir = "aslperf-out";

    bool operator==(const ExperimentConfig&) const = default;

    [[nodiscard]] features::SliceRange slice_range() const {
        return slices.count > 0 ? slices : features::default_slice_range(phantom.dims.nz);
    }
};

/// Canonical JSON text (sorted keys, two-space indent, trailing newline).
std::string to_json(const ExperimentConfig& cfg);

/// Strict parse: every key is required, unknown keys are rejected, and all
/// nested validations run. Errors carry the dotted field path.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

/// Cross-field checks, for configs built in code.
void validate(const ExperimentConfig& cfg);

}  // namespace aslperf::io
