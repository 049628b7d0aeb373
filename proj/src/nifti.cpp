#include "aslperf/nifti.hpp"

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <fstream>

namespace aslperf::io {

namespace {

#pragma pack(push, 1)
struct RawHeader {
    std::int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    std::uint8_t xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(RawHeader) == 348);
static_assert(offsetof(RawHeader, dim) == 40);
static_assert(offsetof(RawHeader, datatype) == 70);
static_assert(offsetof(RawHeader, pixdim) == 76);
static_assert(offsetof(RawHeader, vox_offset) == 108);
static_assert(offsetof(RawHeader, descrip) == 148);
static_assert(offsetof(RawHeader, srow_x) == 280);
static_assert(offsetof(RawHeader, magic) == 344);
static_assert(std::endian::native == std::endian::little);

constexpr char kMagic[4] = {'n', '+', '1', '\0'};
constexpr std::string_view kUnitPrefix = "aslperf unit=";

std::int32_t byteswap32(std::int32_t v) {
    const auto u = static_cast<std::uint32_t>(v);
    return static_cast<std::int32_t>((u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24));
}

}  // namespace

NiftiHeader header_for(const VolumeF32& volume) {
    NiftiHeader h;
    const auto& d = volume.dims();
    const auto& vox = volume.voxel_mm();
    h.dim = {3, static_cast<std::int16_t>(d.nx), static_cast<std::int16_t>(d.ny), static_cast<std::int16_t>(d.nz),
             1, 1, 1, 1};
    h.pixdim = {1.0f, vox[0], vox[1], vox[2], 0.0f, 0.0f, 0.0f, 0.0f};
    h.srow_x = {vox[0], 0, 0, 0};
    h.srow_y = {0, vox[1], 0, 0};
    h.srow_z = {0, 0, vox[2], 0};
    h.descrip = std::string(kUnitPrefix) + std::string(unit_name(volume.unit()));
    return h;
}

void write_nifti(const NiftiVolume& nifti, const std::filesystem::path& path) {
    const auto& vol = nifti.volume;
    const auto& d = vol.dims();
    if (d.nx > 32767 || d.ny > 32767 || d.nz > 32767) throw NiftiError(NiftiError::Code::UnsupportedDims, "dims exceed int16");
    const NiftiHeader& h = nifti.header;

    RawHeader raw{};
    raw.sizeof_hdr = kNiftiHeaderSize;
    raw.regular = 'r';
    for (int i = 0; i < 8; ++i) raw.dim[i] = h.dim[i];
    raw.dim[0] = 3;
    raw.dim[1] = static_cast<std::int16_t>(d.nx);
    raw.dim[2] = static_cast<std::int16_t>(d.ny);
    raw.dim[3] = static_cast<std::int16_t>(d.nz);
    for (int i = 4; i < 8; ++i) raw.dim[i] = 1;
    raw.datatype = kNiftiFloat32;
    raw.bitpix = 32;
    for (int i = 0; i < 8; ++i) raw.pixdim[i] = h.pixdim[i];
    for (int i = 0; i < 3; ++i) raw.pixdim[i + 1] = vol.voxel_mm()[i];
    raw.vox_offset = kNiftiVoxOffset;
    raw.scl_slope = h.scl_slope;
    raw.scl_inter = h.scl_inter;
    raw.xyzt_units = h.xyzt_units;
    raw.qform_code = h.qform_code;
    raw.sform_code = h.sform_code;
    std::memcpy(raw.srow_x, h.srow_x.data(), sizeof raw.srow_x);
    std::memcpy(raw.srow_y, h.srow_y.data(), sizeof raw.srow_y);
    std::memcpy(raw.srow_z, h.srow_z.data(), sizeof raw.srow_z);
    std::strncpy(raw.descrip, h.descrip.c_str(), sizeof raw.descrip - 1);
    std::memcpy(raw.magic, kMagic, 4);

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw NiftiError(NiftiError::Code::Io, "cannot open for writing: " + path.string());
    os.write(reinterpret_cast<const char*>(&raw), sizeof raw);
    const char extension[4] = {0, 0, 0, 0};
    os.write(extension, 4);
    const auto data = vol.data();
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
    if (!os) throw NiftiError(NiftiError::Code::Io, "write failed: " + path.string());
}

void write_nifti(const VolumeF32& volume, const std::filesystem::path& path) {
    write_nifti(NiftiVolume{header_for(volume), volume}, path);
}

NiftiVolume read_nifti(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NiftiError(NiftiError::Code::Io, "cannot open: " + path.string());
    RawHeader raw{};
    is.read(reinterpret_cast<char*>(&raw), sizeof raw);
    if (is.gcount() != static_cast<std::streamsize>(sizeof raw))
        throw NiftiError(NiftiError::Code::Truncated, "truncated header: " + path.string());
    if (raw.sizeof_hdr != kNiftiHeaderSize) {
        if (byteswap32(raw.sizeof_hdr) == kNiftiHeaderSize)
            throw NiftiError(NiftiError::Code::BigEndian, "big-endian NIfTI not supported: " + path.string());
        throw NiftiError(NiftiError::Code::BadHeader, "bad header (sizeof_hdr != 348): " + path.string());
    }
    if (std::memcmp(raw.magic, kMagic, 4) != 0)
        throw NiftiError(NiftiError::Code::BadMagic, "bad magic (expected single-file n+1): " + path.string());
    if (raw.datatype != kNiftiFloat32 || raw.bitpix != 32)
        throw NiftiError(NiftiError::Code::UnsupportedDatatype,
                         "unsupported datatype " + std::to_string(raw.datatype) + ": " + path.string());
    if (raw.dim[0] != 3 || raw.dim[1] < 1 || raw.dim[2] < 1 || raw.dim[3] < 1)
        throw NiftiError(NiftiError::Code::UnsupportedDims, "expected a 3D volume: " + path.string());
    if (!(raw.vox_offset >= kNiftiVoxOffset) || raw.vox_offset != std::floor(raw.vox_offset))
        throw NiftiError(NiftiError::Code::BadHeader, "bad vox_offset: " + path.string());

    NiftiHeader h;
    for (int i = 0; i < 8; ++i) {
        h.dim[i] = raw.dim[i];
        h.pixdim[i] = raw.pixdim[i];
    }
    h.datatype = raw.datatype;
    h.bitpix = raw.bitpix;
    h.vox_offset = raw.vox_offset;
    h.scl_slope = raw.scl_slope;
    h.scl_inter = raw.scl_inter;
    h.xyzt_units = raw.xyzt_units;
    h.qform_code = raw.qform_code;
    h.sform_code = raw.sform_code;
    std::memcpy(h.srow_x.data(), raw.srow_x, sizeof raw.srow_x);
    std::memcpy(h.srow_y.data(), raw.srow_y, sizeof raw.srow_y);
    std::memcpy(h.srow_z.data(), raw.srow_z, sizeof raw.srow_z);
    h.descrip.assign(raw.descrip, strnlen(raw.descrip, sizeof raw.descrip));

    UnitTag unit = UnitTag::Dimensionless;
    if (h.descrip.starts_with(kUnitPrefix))
        unit = unit_from_name(std::string_view(h.descrip).substr(kUnitPrefix.size())).value_or(UnitTag::Dimensionless);

    const Dims dims{raw.dim[1], raw.dim[2], raw.dim[3]};
    std::vector<float> data(dims.count());
    is.seekg(static_cast<std::streamoff>(raw.vox_offset));
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (static_cast<std::size_t>(is.gcount()) != data.size() * sizeof(float))
        throw NiftiError(NiftiError::Code::Truncated, "truncated payload: " + path.string());

    if (h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f))
        for (auto& v : data) v = v * h.scl_slope + h.scl_inter;

    const VoxelSize vox{std::abs(raw.pixdim[1]), std::abs(raw.pixdim[2]), std::abs(raw.pixdim[3])};
    return {h, VolumeF32(dims, vox, unit, std::move(data))};
}

VolumeF32 read_volume(const std::filesystem::path& path) { return read_nifti(path).volume; }

void write_mask(const Volume<std::uint8_t>& mask, const std::filesystem::path& path) {
    VolumeF32 v(mask.dims(), mask.voxel_mm(), UnitTag::Dimensionless);
    for (std::size_t i = 0; i < mask.size(); ++i) v[i] = static_cast<float>(mask[i]);
    write_nifti(v, path);
}

Volume<std::uint8_t> read_mask(const std::filesystem::path& path) {
    const auto v = read_volume(path);
    Volume<std::uint8_t> mask(v.dims(), v.voxel_mm(), UnitTag::Dimensionless);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const float x = v[i];
        if (!(x >= 0.0f && x <= 255.0f) || x != std::floor(x)) throw Error("mask volume holds non-integer values: " + path.string());
        mask[i] = static_cast<std::uint8_t>(x);
    }
    return mask;
}

}  // namespace aslperf::io
