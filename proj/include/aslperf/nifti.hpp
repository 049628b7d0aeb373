#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "aslperf/core.hpp"

namespace aslperf::io {

/// Distinct failure classes of the NIfTI reader.
class NiftiError : public Error {
public:
    enum class Code { Io, BadHeader, BigEndian, BadMagic, UnsupportedDatatype, UnsupportedDims, Truncated };

    NiftiError(Code code, const std::string& what) : Error(what), code_(code) {}
    [[nodiscard]] Code code() const noexcept { return code_; }

private:
    Code code_;
};

inline constexpr std::int32_t kNiftiHeaderSize = 348;
inline constexpr std::int16_t kNiftiFloat32 = 16;
inline constexpr float kNiftiVoxOffset = 352.0f;

/// The subset of NIfTI-1 header fields this library reads and writes.
struct NiftiHeader {
    std::array<std::int16_t, 8> dim{3, 1, 1, 1, 1, 1, 1, 1};
    std::int16_t datatype = kNiftiFloat32;
    std::int16_t bitpix = 32;
    std::array<float, 8> pixdim{1.0f, 1.0f, 1.0f, 1.0f, 0.0f, 0.0f, 0.0f, 0.0f};
    float vox_offset = kNiftiVoxOffset;
    float scl_slope = 0.0f;
    float scl_inter = 0.0f;
    std::uint8_t xyzt_units = 2 | 8;  // mm, s
    std::int16_t qform_code = 0;
    std::int16_t sform_code = 1;
    std::array<float, 4> srow_x{1, 0, 0, 0};
    std::array<float, 4> srow_y{0, 1, 0, 0};
    std::array<float, 4> srow_z{0, 0, 1, 0};
    std::string descrip;

    bool operator==(const NiftiHeader&) const = default;
};

struct NiftiVolume {
    NiftiHeader header;
    VolumeF32 volume;
};

/// Header describing `volume` (dims, voxel size, unit tag in descrip).
NiftiHeader header_for(const VolumeF32& volume);

/// Single-file .nii, little-endian float32.
void write_nifti(const NiftiVolume& nifti, const std::filesystem::path& path);
void write_nifti(const VolumeF32& volume, const std::filesystem::path& path);

/// Reads a single-file float32 3D NIfTI-1; applies scl_slope/scl_inter when
/// the slope is non-zero and not the identity.
NiftiVolume read_nifti(const std::filesystem::path& path);

/// Convenience: read_nifti(path).volume.
VolumeF32 read_volume(const std::filesystem::path& path);

/// Masks and label maps are stored as float32 volumes of 0/1 (or small integers).
void write_mask(const Volume<std::uint8_t>& mask, const std::filesystem::path& path);
Volume<std::uint8_t> read_mask(const std::filesystem::path& path);

}  // namespace aslperf::io
