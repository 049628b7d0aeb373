#pragma once

#include <span>
#include <vector>

#include "aslperf/core.hpp"

namespace aslperf::reffit {

struct Bounds {
    double lo = 0.0;
    double hi = 0.0;
    bool operator==(const Bounds&) const = default;
};

struct FitConfig {
    Bounds cbf_bounds{0.0, 200.0};
    Bounds att_bounds{0.05, 3.0};
    int max_iter = 50;
    double initial_damping = 1e-3;
    double damping_up = 10.0;
    double damping_down = 0.1;
    double tol = 1e-8;  ///< on relative cost decrease of an accepted step
    std::vector<double> att_init_grid{0.4, 0.8, 1.2, 1.6, 2.0};
    /// Per-PLD residual weights; empty means weight by repeat count.
    std::vector<double> residual_weights;
    /// A voxel is degenerate when no PLD mean exceeds this many standard
    /// errors of its repeats (used by fit_volume; 0 keeps only the <= 0 rule).
    double noise_floor_k = 2.0;

    bool operator==(const FitConfig&) const = default;
};

void validate_config(const FitConfig& cfg);

struct WeightedDelay {
    double seconds = 0.0;
    bool degenerate = false;
};

/// Signal-weighted mean PLD, clamped to the PLD span. Degenerate (0 s) when
/// the summed signal does not exceed `denominator_floor`.
WeightedDelay weighted_delay(std::span<const double> pwi_means, std::span<const double> plds,
                             double denominator_floor = 1e-12);

/// Floor used by weighted_delay for a volume whose largest |signal| is `max_abs`.
inline double delay_denominator_floor(double max_abs) {
    const double floor = 1e-6 * max_abs;
    return floor > 1e-12 ? floor : 1e-12;
}

struct VoxelFit {
    double f_cbf = 0.0;
    double delta_att = 0.0;
    FitFlag flag = FitFlag::Ok;
    double cost = 0.0;
    int iterations = 0;
};

/// Weighted least-squares (CBF, ATT) from per-PLD mean PWI. `noise_floor`,
/// when given, holds one threshold per PLD below which a mean counts as noise.
VoxelFit fit_voxel(std::span<const double> pwi_means, double m0, const AcquisitionProtocol& proto,
                   const FitConfig& cfg, std::span<const double> noise_floor = {});

/// Weighted cost of a parameter pair; exposed for tests.
double weighted_cost(std::span<const double> pwi_means, double m0, const AcquisitionProtocol& proto,
                     std::span<const double> weights, double f_cbf, double delta_att);

/// Per-PLD residual weights in effect for `cfg`.
std::vector<double> residual_weights(const AcquisitionProtocol& proto, const FitConfig& cfg);

/// Fits every in-mask voxel. Output is independent of `threads`.
ParamMapPair fit_volume(const PerfusionSeries& series, const FitConfig& cfg, int threads = 1);

}  // namespace aslperf::reffit
