#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace aslperf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class UnitTag : std::uint8_t {
    PwiArb,
    CbfMlPer100gMin,
    Seconds,
    M0Arb,
    Dimensionless,
};

std::string_view unit_name(UnitTag unit);
std::optional<UnitTag> unit_from_name(std::string_view name);

struct Dims {
    int nx = 0;
    int ny = 0;
    int nz = 0;

    [[nodiscard]] std::size_t count() const noexcept {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
    }
    [[nodiscard]] std::size_t slice_size() const noexcept {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
    }
    bool operator==(const Dims&) const = default;
};

using VoxelSize = std::array<float, 3>;

/// Dense 3D grid stored x-fastest, then y, then z.
template <typename T>
class Volume {
public:
    Volume() = default;
    Volume(Dims dims, VoxelSize voxel_mm, UnitTag unit, T fill = T{})
        : dims_(dims), voxel_mm_(voxel_mm), unit_(unit), data_(dims.count(), fill) {
        if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) throw Error("volume dims must be positive");
    }
    Volume(Dims dims, VoxelSize voxel_mm, UnitTag unit, std::vector<T> data)
        : dims_(dims), voxel_mm_(voxel_mm), unit_(unit), data_(std::move(data)) {
        if (data_.size() != dims.count()) throw Error("volume data length does not match dims");
    }

    [[nodiscard]] const Dims& dims() const noexcept { return dims_; }
    [[nodiscard]] const VoxelSize& voxel_mm() const noexcept { return voxel_mm_; }
    [[nodiscard]] UnitTag unit() const noexcept { return unit_; }
    void set_unit(UnitTag unit) noexcept { unit_ = unit; }

    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] std::size_t index(int x, int y, int z) const noexcept {
        return (static_cast<std::size_t>(z) * dims_.ny + y) * dims_.nx + x;
    }
    T& at(int x, int y, int z) noexcept { return data_[index(x, y, z)]; }
    const T& at(int x, int y, int z) const noexcept { return data_[index(x, y, z)]; }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    [[nodiscard]] std::span<T> data() noexcept { return data_; }
    [[nodiscard]] std::span<const T> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<T>& values() const noexcept { return data_; }

    [[nodiscard]] std::span<T> slice(int z) noexcept {
        return std::span<T>(data_).subspan(static_cast<std::size_t>(z) * dims_.slice_size(), dims_.slice_size());
    }
    [[nodiscard]] std::span<const T> slice(int z) const noexcept {
        return std::span<const T>(data_).subspan(static_cast<std::size_t>(z) * dims_.slice_size(),
                                                 dims_.slice_size());
    }

    [[nodiscard]] bool same_grid(const Volume<auto>& other) const noexcept {
        return dims_ == other.dims() && voxel_mm_ == other.voxel_mm();
    }

private:
    Dims dims_{};
    VoxelSize voxel_mm_{1.0f, 1.0f, 1.0f};
    UnitTag unit_ = UnitTag::Dimensionless;
    std::vector<T> data_;
};

using VolumeF32 = Volume<float>;
using MaskVolume = Volume<std::uint8_t>;
using FlagVolume = Volume<std::uint8_t>;

/// Throws if any voxel is NaN or infinite.
void require_finite(const VolumeF32& volume, std::string_view what);

/// pCASL acquisition schedule plus the physiological constants of quantification.
struct AcquisitionProtocol {
    std::vector<double> plds_s{0.2, 0.7, 1.2, 1.7, 2.2};
    double tau_s = 1.5;
    std::vector<int> repeats{6, 6, 6, 10, 15};
    double t1b_s = 1.65;
    double alpha = 0.85;
    double lambda_bp = 0.9;
    double slice_dt_s = 0.0;

    /// The five-delay HCP-A schedule with consensus constants.
    static AcquisitionProtocol hcp_a() { return {}; }

    [[nodiscard]] std::optional<std::size_t> find_pld(double pld_s, double tol = 1e-9) const;
    bool operator==(const AcquisitionProtocol&) const = default;
};

struct Violation {
    std::string field;
    std::string message;
};

/// Every violated protocol invariant; empty means the protocol is usable.
std::vector<Violation> validate_protocol(const AcquisitionProtocol& protocol);

/// Throws Error listing all violations.
void require_valid(const AcquisitionProtocol& protocol);

struct PerfusionSeries {
    AcquisitionProtocol protocol;
    std::vector<std::vector<VolumeF32>> pwi;  ///< [pld][repeat]
    std::vector<VolumeF32> m0;
    MaskVolume mask;

    [[nodiscard]] const Dims& dims() const { return mask.dims(); }
};

/// Checks protocol validity, repeat counts, and that all volumes share one grid.
void validate_series(const PerfusionSeries& series);

enum class FitFlag : std::uint8_t {
    Ok = 0,
    Masked = 1,
    Degenerate = 2,
    BoundHit = 3,
    NoConvergence = 4,
};

struct ParamMapPair {
    VolumeF32 cbf;
    VolumeF32 att;
    FlagVolume flags;
};

inline constexpr double kDefaultMaskThreshold = 0.2;

/// In-mask iff m0 >= rel_threshold * max(m0).
MaskVolume mask_from_m0(const VolumeF32& m0, double rel_threshold = kDefaultMaskThreshold);

/// Voxel-wise mean of equally shaped volumes.
VolumeF32 mean_volume(std::span<const VolumeF32> volumes);

}  // namespace aslperf
