#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace aslperf::io {

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t state = 0xcbf29ce484222325ULL);

inline std::uint64_t fnv1a64(std::span<const float> values, std::uint64_t state = 0xcbf29ce484222325ULL) {
    return fnv1a64(std::as_bytes(values), state);
}

std::string hex64(std::uint64_t v);

/// One input/target slice pair of the dataset.
struct ManifestRecord {
    std::string subject;
    std::string split;  ///< train | val | test
    std::string variant;
    int slice = 0;
    std::vector<std::string> inputs;  ///< channel volumes, relative to the work dir
    std::string target_cbf;
    std::string target_att;
    std::string digest;  ///< FNV-1a 64 over the input channels then both targets, this slice only

    bool operator==(const ManifestRecord&) const = default;
};

/// Line-delimited JSON, one record per line, in the given order.
void write_manifest(std::span<const ManifestRecord> records, const std::filesystem::path& path);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

}  // namespace aslperf::io
