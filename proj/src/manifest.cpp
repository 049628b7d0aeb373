#include "aslperf/manifest.hpp"

#include <cstdio>
#include <fstream>

#include "aslperf/core.hpp"
#include "json.hpp"

namespace aslperf::io {

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t state) {
    for (std::byte b : bytes) {
        state ^= static_cast<std::uint64_t>(b);
        state *= 0x100000001b3ULL;
    }
    return state;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_manifest(std::span<const ManifestRecord> records, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("cannot write manifest: " + path.string());
    for (const auto& r : records) {
        nlohmann::json j = {{"subject", r.subject},       {"split", r.split},           {"variant", r.variant},
                            {"slice", r.slice},           {"inputs", r.inputs},         {"target_cbf", r.target_cbf},
                            {"target_att", r.target_att}, {"digest", r.digest}};
        os << j.dump() << '\n';
    }
    if (!os) throw Error("manifest write failed: " + path.string());
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open manifest: " + path.string());
    std::vector<ManifestRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ManifestRecord r;
            r.subject = j.at("subject").get<std::string>();
            r.split = j.at("split").get<std::string>();
            r.variant = j.at("variant").get<std::string>();
            r.slice = j.at("slice").get<int>();
            r.inputs = j.at("inputs").get<std::vector<std::string>>();
            r.target_cbf = j.at("target_cbf").get<std::string>();
            r.target_att = j.at("target_att").get<std::string>();
            r.digest = j.at("digest").get<std::string>();
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw Error("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace aslperf::io
