#pragma once

#include <span>
#include <string>
#include <vector>

#include "aslperf/core.hpp"
#include "aslperf/features.hpp"

namespace aslperf::metrics {

/// Row-major 2D view (x fastest) over borrowed data.
struct ImageView {
    std::span<const float> data;
    int width = 0;
    int height = 0;

    [[nodiscard]] float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

inline ImageView slice_view(const VolumeF32& v, int z) { return {v.slice(z), v.dims().nx, v.dims().ny}; }

/// 10 log10(range^2 / MSE); +infinity for identical images.
double psnr(ImageView pred, ImageView ref, double data_range);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// Normalized 11x11 Gaussian window (sigma 1.5), row-major.
std::vector<double> ssim_window();

/// Mean SSIM over every 11x11 Gaussian window lying fully inside the image.
double ssim(ImageView pred, ImageView ref, double data_range);

struct SliceScore {
    std::string subject;
    int slice = 0;
    features::Target target = features::Target::Cbf;
    std::string variant;
    double ssim = 0.0;
    double psnr = 0.0;
    bool psnr_infinite = false;
};

struct Aggregate {
    std::string variant;
    features::Target target = features::Target::Cbf;
    std::size_t count = 0;
    double ssim_mean = 0.0;
    double ssim_std = 0.0;
    double psnr_mean = 0.0;  ///< over finite values; +inf when all are infinite
    double psnr_std = 0.0;
    std::size_t psnr_infinite = 0;
    double data_range = 0.0;
};

struct EvalReport {
    std::vector<SliceScore> slices;
    std::vector<Aggregate> aggregates;
};

/// max - min of `ref` over in-mask voxels of the given slices, pooled over volumes.
double data_range_over(std::span<const VolumeF32* const> refs, std::span<const MaskVolume* const> masks,
                       features::SliceRange range);

/// Per-slice SSIM/PSNR of pred against ref over `range`, appended to `report`.
void evaluate(const VolumeF32& pred, const VolumeF32& ref, features::SliceRange range, double data_range,
              const std::string& subject, const std::string& variant, features::Target target, EvalReport& report);

/// Mean and population sd per (variant, target) group, in first-seen order.
void aggregate(EvalReport& report, double cbf_range, double att_range);

}  // namespace aslperf::metrics
