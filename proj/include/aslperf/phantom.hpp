#pragma once

#include <cstdint>

#include "aslperf/core.hpp"

namespace aslperf::phantom {

enum class Tissue : std::uint8_t { Background = 0, Csf = 1, Gm = 2, Wm = 3 };

struct TissueClass {
    double cbf = 0.0;  ///< ml/100g/min
    double att = 0.0;  ///< seconds
    double m0 = 0.0;
    bool operator==(const TissueClass&) const = default;
};

struct PhantomSpec {
    Dims dims{86, 86, 20};
    VoxelSize voxel_mm{3.5f, 3.5f, 3.5f};
    TissueClass gm{60.0, 1.2, 1000.0};
    TissueClass wm{20.0, 1.6, 800.0};
    TissueClass csf{0.0, 0.0, 1600.0};
    /// Fractional amplitude of the smooth CBF / ATT modulation fields, in [0, 0.5).
    double cbf_modulation = 0.25;
    double att_modulation = 0.25;
    std::uint64_t geometry_seed = 1;
    std::uint64_t noise_seed = 2;
    /// Per-repeat Gaussian noise sd as a fraction of mean GM signal at the longest PLD.
    double noise_sigma = 0.0;

    bool operator==(const PhantomSpec&) const = default;
};

void validate_spec(const PhantomSpec& spec);

struct PhantomMaps {
    VolumeF32 cbf;
    VolumeF32 att;
    VolumeF32 m0;
    Volume<std::uint8_t> labels;  ///< values of Tissue
};

/// Concentric shells (CSF rim, folded GM ribbon, WM core, small central
/// ventricle) with per-class values scaled by a zero-mean smooth field.
PhantomMaps make_phantom_maps(const PhantomSpec& spec);

/// Absolute noise sd for a phantom: noise_sigma times the mean noiseless GM
/// signal at the longest PLD.
double absolute_noise_sd(const PhantomMaps& maps, const AcquisitionProtocol& proto, double noise_sigma);

/// Noisy PWI repeats for every PLD plus two M0 volumes. Noise is keyed by
/// (seed, pld, repeat, voxel) so output does not depend on evaluation order.
PerfusionSeries simulate_series(const PhantomMaps& maps, const AcquisitionProtocol& proto, double noise_sigma,
                                std::uint64_t noise_seed, double mask_threshold = kDefaultMaskThreshold);

}  // namespace aslperf::phantom
