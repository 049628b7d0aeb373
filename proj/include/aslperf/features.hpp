#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aslperf/core.hpp"

namespace aslperf::features {

enum class Variant { OnePld, TwoPld };
enum class Target { Cbf, Att };

std::string_view variant_name(Variant v);
std::optional<Variant> variant_from_name(std::string_view name);
std::string_view target_name(Target t);
std::optional<Target> target_from_name(std::string_view name);

/// Number of input channels fed to the network for a variant.
constexpr int channel_count(Variant v) { return v == Variant::OnePld ? 2 : 3; }

inline constexpr double kShortPld = 0.7;
inline constexpr double kLongPld = 1.7;

struct TargetScaling {
    double cbf_scale = 1.0 / 150.0;  ///< per ml/100g/min
    double att_scale = 1.0 / 3.0;    ///< per second
    bool operator==(const TargetScaling&) const = default;

    [[nodiscard]] double scale_for(Target t) const { return t == Target::Cbf ? cbf_scale : att_scale; }
};

struct SliceRange {
    int first = 0;
    int count = 0;
    [[nodiscard]] bool contains(int z) const { return z >= first && z < first + count; }
    bool operator==(const SliceRange&) const = default;
};

/// Axial slices 26..45 (one-based) when the volume is deep enough, otherwise
/// the central min(20, nz) slices.
SliceRange default_slice_range(int nz);

struct ModelInput {
    Variant variant = Variant::OnePld;
    int width = 0;
    int height = 0;
    std::vector<std::vector<float>> channels;  ///< each width*height, x fastest
    int slice_index = 0;
    std::string subject_id;
};

/// Per-voxel mean and population sd across the repeats at one PLD, after
/// dividing each repeat by the pooled M0. Zero outside the mask.
std::pair<VolumeF32, VolumeF32> mean_std_pwi(const PerfusionSeries& series, std::size_t pld_index);

/// Whole-volume input channels in network order:
///   one-PLD: [mean PWI/M0 at 1.7 s, sd of PWI/M0 at 1.7 s]
///   two-PLD: [mean PWI/M0 at 0.7 s, mean PWI/M0 at 1.7 s, weighted delay * att_scale]
std::vector<VolumeF32> feature_volumes(const PerfusionSeries& series, Variant variant,
                                       const TargetScaling& scaling = {});

/// Network inputs for every slice in `range` (default range when omitted).
std::vector<ModelInput> build_input(const PerfusionSeries& series, Variant variant,
                                    const TargetScaling& scaling = {}, std::optional<SliceRange> range = {},
                                    const std::string& subject_id = {});

/// Slices a set of channel volumes into ModelInputs.
std::vector<ModelInput> slice_inputs(const std::vector<VolumeF32>& channels, Variant variant, SliceRange range,
                                     const std::string& subject_id = {});

/// Physical map -> dimensionless network target.
VolumeF32 scale_target(const VolumeF32& map, Target which, const TargetScaling& scaling);
/// Dimensionless network output -> physical map.
VolumeF32 unscale_target(const VolumeF32& scaled, Target which, const TargetScaling& scaling);

}  // namespace aslperf::features
