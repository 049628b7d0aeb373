#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "aslperf/config.hpp"
#include "aslperf/manifest.hpp"
#include "aslperf/nifti.hpp"
#include "aslperf/random.hpp"
#include "json.hpp"

using namespace aslperf;
using namespace aslperf::io;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    [[nodiscard]] const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::string& bytes) {
    std::ofstream(p, std::ios::binary | std::ios::trunc) << bytes;
}

template <typename T>
void poke(std::string& bytes, std::size_t offset, T value) {
    std::memcpy(bytes.data() + offset, &value, sizeof value);
}

NiftiError::Code read_error(const fs::path& p) {
    try {
        read_nifti(p);
    } catch (const NiftiError& e) {
        return e.code();
    }
    ADD_FAILURE() << "malformed file accepted";
    return NiftiError::Code::Io;
}

std::string field_error(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.field();
    }
    return "<accepted>";
}

const std::string kDesk = [] {
    std::ifstream in(ASLPERF_DESK_CONFIG);
    return std::string(std::istreambuf_iterator<char>(in), {});
}();

}  // namespace

TEST(Nifti, RandomVolumesRoundTripBitExact) {
    TempDir dir("aslperf_test_nifti_rt");
    RandomStream r(1, {});
    const UnitTag units[] = {UnitTag::Seconds, UnitTag::CbfMlPer100gMin, UnitTag::PwiArb, UnitTag::Dimensionless};
    for (int k = 0; k < 100; ++k) {
        const Dims d{1 + static_cast<int>(r.next_u64() % 17), 1 + static_cast<int>(r.next_u64() % 13),
                     1 + static_cast<int>(r.next_u64() % 9)};
        VolumeF32 v(d, {static_cast<float>(0.5 + r.uniform()), static_cast<float>(0.5 + r.uniform()), static_cast<float>(1.0 + r.uniform())}, units[k % 4]);
        for (auto& x : v.data()) {
            // Arbitrary finite bit patterns, including subnormals and signed zeros.
            std::uint32_t bits;
            do bits = static_cast<std::uint32_t>(r.next_u64());
            while ((bits & 0x7f800000u) == 0x7f800000u);
            std::memcpy(&x, &bits, sizeof x);
        }
        const auto p = dir.path() / ("v" + std::to_string(k) + ".nii");
        write_nifti(v, p);
        const auto back = read_nifti(p);
        ASSERT_EQ(back.volume.dims(), d);
        EXPECT_EQ(back.volume.unit(), v.unit());
        EXPECT_EQ(back.header, header_for(v));
        EXPECT_EQ(std::memcmp(back.volume.data().data(), v.data().data(), v.data().size_bytes()), 0) << k;
        EXPECT_FLOAT_EQ(static_cast<float>(back.volume.voxel_mm()[0]), static_cast<float>(v.voxel_mm()[0]));
    }
}

TEST(Nifti, HeaderLayoutAndSize) {
    TempDir dir("aslperf_test_nifti_layout");
    const VolumeF32 v({3, 4, 5}, {2, 2, 2}, UnitTag::Seconds, 1.5f);
    write_nifti(v, dir.path() / "a.nii");
    const auto bytes = read_bytes(dir.path() / "a.nii");
    EXPECT_EQ(bytes.size(), 352u + 60u * 4u);
    std::int32_t hdr;
    std::memcpy(&hdr, bytes.data(), 4);
    EXPECT_EQ(hdr, 348);
    EXPECT_EQ(bytes.substr(344, 4), std::string("n+1\0", 4));
    std::int16_t datatype;
    std::memcpy(&datatype, bytes.data() + 70, 2);
    EXPECT_EQ(datatype, 16);
}

TEST(Nifti, AppliesScaleSlope) {
    TempDir dir("aslperf_test_nifti_scl");
    const VolumeF32 v({2, 2, 2}, {1, 1, 1}, UnitTag::Dimensionless, 3.0f);
    auto h = header_for(v);
    h.scl_slope = 2.0f;
    h.scl_inter = 1.0f;
    write_nifti({h, v}, dir.path() / "s.nii");
    const auto back = read_volume(dir.path() / "s.nii");
    for (float x : back.values()) EXPECT_EQ(x, 7.0f);
}

TEST(Nifti, RejectsMalformedFiles) {
    TempDir dir("aslperf_test_nifti_bad");
    const VolumeF32 v({4, 4, 4}, {1, 1, 1}, UnitTag::Seconds, 1.0f);
    write_nifti(v, dir.path() / "good.nii");
    const auto good = read_bytes(dir.path() / "good.nii");
    const auto p = dir.path() / "bad.nii";

    auto bad = good;
    poke<std::int32_t>(bad, 0, 540);
    write_bytes(p, bad);
    EXPECT_EQ(read_error(p), NiftiError::Code::BadHeader);

    bad = good;
    poke<std::int32_t>(bad, 0, 0x5c010000);  // 348 byte-swapped
    write_bytes(p, bad);
    EXPECT_EQ(read_error(p), NiftiError::Code::BigEndian);

    bad = good;
    bad.replace(344, 4, std::string("ni1\0", 4));
    write_bytes(p, bad);
    EXPECT_EQ(read_error(p), NiftiError::Code::BadMagic);

    bad = good;
    poke<std::int16_t>(bad, 70, 4);  // int16
    poke<std::int16_t>(bad, 72, 16);
    write_bytes(p, bad);
    EXPECT_EQ(read_error(p), NiftiError::Code::UnsupportedDatatype);

    bad = good;
    poke<std::int16_t>(bad, 40, 4);
    write_bytes(p, bad);
    EXPECT_EQ(read_error(p), NiftiError::Code::UnsupportedDims);

    write_bytes(p, good.substr(0, good.size() - 1));
    EXPECT_EQ(read_error(p), NiftiError::Code::Truncated);

    write_bytes(p, good.substr(0, 100));
    EXPECT_EQ(read_error(p), NiftiError::Code::Truncated);

    EXPECT_EQ(read_error(dir.path() / "missing.nii"), NiftiError::Code::Io);
}

TEST(Nifti, MaskRoundTrip) {
    TempDir dir("aslperf_test_nifti_mask");
    MaskVolume m({5, 3, 2}, {1, 1, 1}, UnitTag::Dimensionless, std::uint8_t{0});
    m[4] = 1;
    m[17] = 1;
    write_mask(m, dir.path() / "m.nii");
    EXPECT_EQ(read_mask(dir.path() / "m.nii").values(), m.values());
}

TEST(Config, DefaultsRoundTripAndUseHcpProtocol) {
    const ExperimentConfig cfg;
    EXPECT_EQ(cfg.protocol, AcquisitionProtocol::hcp_a());
    const auto text = to_json(cfg);
    const auto back = parse_config(text);
    EXPECT_EQ(back, cfg);
    EXPECT_EQ(to_json(back), text);
}

TEST(Config, ShippedDeskConfigIsCanonical) {
    ASSERT_FALSE(kDesk.empty());
    const auto cfg = parse_config(kDesk);
    EXPECT_EQ(to_json(cfg), kDesk);
    EXPECT_EQ(cfg.split.total(), 50);
    EXPECT_EQ(cfg.phantom.noise_sigma, 0.3);
}

TEST(Config, ReportsFieldPaths) {
    auto j = nlohmann::json::parse(kDesk);
    j["protocol"].erase("tau_s");
    EXPECT_EQ(field_error(j.dump()), "protocol.tau_s");

    j = nlohmann::json::parse(kDesk);
    j["fit"]["extra"] = 1;
    EXPECT_EQ(field_error(j.dump()), "fit.extra");

    j = nlohmann::json::parse(kDesk);
    j["phantom"]["voxel_mm"][1] = -1.0;
    EXPECT_EQ(field_error(j.dump()), "phantom.voxel_mm[1]");

    j = nlohmann::json::parse(kDesk);
    j["training"]["lr"]["mode"] = "cosine";
    EXPECT_EQ(field_error(j.dump()), "training.lr.mode");

    j = nlohmann::json::parse(kDesk);
    j["training"]["epochs"] = 2.5;
    EXPECT_EQ(field_error(j.dump()), "training.epochs");

    j = nlohmann::json::parse(kDesk);
    j["protocol"]["plds_s"] = {0.2, 1.2, 2.2};
    j["protocol"]["repeats"] = {6, 6, 15};
    EXPECT_EQ(field_error(j.dump()), "protocol.plds_s");

    EXPECT_EQ(field_error("{\"protocol\": "), "<root>");
}

// Each mutation renames one key (section or leaf) by a random edit; the
// parser must name the key that went missing.
TEST(Config, RejectsSeededTypoMutations) {
    const auto base = nlohmann::json::parse(kDesk);
    std::vector<std::vector<std::string>> paths;
    auto collect = [&](auto&& self, const nlohmann::json& j, std::vector<std::string> prefix) -> void {
        for (auto it = j.begin(); it != j.end(); ++it) {
            auto p = prefix;
            p.push_back(it.key());
            paths.push_back(p);
            if (it->is_object()) self(self, *it, p);
        }
    };
    collect(collect, base, {});
    ASSERT_GT(paths.size(), 40u);

    RandomStream r(2024, {});
    for (int k = 0; k < 10; ++k) {
        const auto& path = paths[r.next_u64() % paths.size()];
        auto j = base;
        nlohmann::json* parent = &j;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) parent = &(*parent)[path[i]];
        const std::string key = path.back();
        std::string typo;
        do {
            typo = key;
            const std::size_t pos = r.next_u64() % typo.size();
            switch (r.next_u64() % 4) {
                case 0: typo.erase(pos, 1); break;
                case 1: typo.insert(pos, 1, typo[pos]); break;
                case 2: if (pos + 1 < typo.size()) std::swap(typo[pos], typo[pos + 1]); break;
                default: typo[pos] = static_cast<char>('a' + r.next_u64() % 26); break;
            }
        } while (typo == key || typo.empty() || parent->contains(typo));
        (*parent)[typo] = (*parent)[key];
        parent->erase(key);
        std::string dotted;
        for (const auto& part : path) dotted += (dotted.empty() ? "" : ".") + part;
        EXPECT_EQ(field_error(j.dump()), dotted) << key << " -> " << typo;
    }
}

TEST(Config, SaveAndLoad) {
    TempDir dir("aslperf_test_config");
    auto cfg = parse_config(kDesk);
    cfg.work_dir = "elsewhere";
    save_config(cfg, dir.path() / "c.json");
    EXPECT_EQ(load_config(dir.path() / "c.json"), cfg);
    EXPECT_THROW(load_config(dir.path() / "none.json"), Error);
}

TEST(Manifest, Fnv1aReferenceVectors) {
    auto digest = [](std::string_view s) { return fnv1a64(std::as_bytes(std::span(s.data(), s.size()))); };
    EXPECT_EQ(digest(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(digest("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(digest("foobar"), 0x85944171f73967e8ULL);
    EXPECT_EQ(hex64(0xaf63dc4c8601ec8cULL), "af63dc4c8601ec8c");
    EXPECT_EQ(hex64(1), "0000000000000001");
}

TEST(Manifest, RoundTripAndDeterministicBytes) {
    TempDir dir("aslperf_test_manifest");
    const std::vector<ManifestRecord> recs{
        {"sub-000", "train", "one-pld", 4, {"features/one-pld/sub-000/mean_1p7.nii", "features/one-pld/sub-000/std_1p7.nii"},
         "fit/sub-000/cbf.nii", "fit/sub-000/att.nii", "0123456789abcdef"},
        {"sub-001", "test", "two-pld", 5, {"a.nii", "b.nii", "c.nii"}, "x.nii", "y.nii", "fedcba9876543210"},
    };
    write_manifest(recs, dir.path() / "a.jsonl");
    write_manifest(recs, dir.path() / "b.jsonl");
    EXPECT_EQ(read_bytes(dir.path() / "a.jsonl"), read_bytes(dir.path() / "b.jsonl"));
    EXPECT_EQ(read_manifest(dir.path() / "a.jsonl"), recs);
}
