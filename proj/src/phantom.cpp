#include "aslperf/phantom.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "aslperf/kinetic.hpp"
#include "aslperf/random.hpp"

namespace aslperf::phantom {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kFieldTerms = 4;

// Stream identifiers under the geometry seed.
enum : std::uint64_t { kShapeStream = 1, kFoldStream = 2, kRimStream = 3, kCbfStream = 4, kAttStream = 5 };
// Repeat index used for the M0 noise streams.
constexpr std::uint64_t kM0Stream = 0xffff'0000ULL;

double signed_unit(RandomStream& rng) { return 2.0 * rng.uniform() - 1.0; }

// Angular perturbation of a shell radius: sum of cosines in the in-plane angle,
// drifting slowly with z. Normalized to [-1, 1].
struct AngularField {
    std::array<double, kFieldTerms> amp{}, order{}, phase{}, zdrift{};

    explicit AngularField(RandomStream rng, int min_order, int max_order) {
        for (int k = 0; k < kFieldTerms; ++k) {
            amp[k] = 0.5 + rng.uniform();
            order[k] = static_cast<double>(min_order + static_cast<int>(rng.below(max_order - min_order + 1)));
            phase[k] = 2.0 * kPi * rng.uniform();
            zdrift[k] = 1.5 * rng.uniform();
        }
    }
    double operator()(double theta, double zn) const {
        double sum = 0.0, norm = 0.0;
        for (int k = 0; k < kFieldTerms; ++k) {
            sum += amp[k] * std::cos(order[k] * theta + phase[k] + zdrift[k] * kPi * zn);
            norm += amp[k];
        }
        return sum / norm;
    }
};

// Separable low-frequency cosine mixture over the grid, normalized to [-1, 1].
struct SmoothField {
    struct Term {
        double amp;
        std::array<double, 3> omega, phase;
    };
    std::array<Term, kFieldTerms> terms{};
    double norm = 0.0;

    SmoothField(RandomStream rng, const Dims& dims) {
        const std::array<int, 3> n{dims.nx, dims.ny, dims.nz};
        for (auto& t : terms) {
            t.amp = 0.25 + rng.uniform();
            for (int a = 0; a < 3; ++a) {
                const double cycles = 0.5 + 1.5 * rng.uniform();
                t.omega[a] = 2.0 * kPi * cycles / n[a];
                t.phase[a] = 2.0 * kPi * rng.uniform();
            }
            norm += t.amp;
        }
    }
    double operator()(int x, int y, int z) const {
        double sum = 0.0;
        for (const auto& t : terms)
            sum += t.amp * std::cos(t.omega[0] * x + t.phase[0]) * std::cos(t.omega[1] * y + t.phase[1]) *
                   std::cos(t.omega[2] * z + t.phase[2]);
        return sum / norm;
    }
};

const TissueClass& class_of(const PhantomSpec& spec, Tissue t) {
    switch (t) {
        case Tissue::Csf: return spec.csf;
        case Tissue::Gm: return spec.gm;
        case Tissue::Wm: return spec.wm;
        default: break;
    }
    static const TissueClass background{};
    return background;
}

}  // namespace

void validate_spec(const PhantomSpec& spec) {
    if (spec.dims.nx < 16 || spec.dims.ny < 16 || spec.dims.nz < 16)
        throw Error("phantom: dims too small (need >= 16 per axis)");
    for (float v : spec.voxel_mm)
        if (!(v > 0.0f)) throw Error("phantom: voxel_mm must be positive");
    for (const auto* c : {&spec.gm, &spec.wm, &spec.csf}) {
        if (!(c->cbf >= 0.0 && c->cbf <= 300.0)) throw Error("phantom: class CBF outside [0, 300]");
        if (!(c->att >= 0.0 && c->att <= 4.0)) throw Error("phantom: class ATT outside [0, 4]");
        if (!(c->m0 >= 0.0)) throw Error("phantom: class M0 must be >= 0");
    }
    for (double a : {spec.cbf_modulation, spec.att_modulation})
        if (!(a >= 0.0 && a < 0.5)) throw Error("phantom: modulation amplitude must be in [0, 0.5)");
    if (!(spec.noise_sigma >= 0.0)) throw Error("phantom: noise_sigma must be >= 0");
}

PhantomMaps make_phantom_maps(const PhantomSpec& spec) {
    validate_spec(spec);
    const Dims d = spec.dims;

    RandomStream shape(spec.geometry_seed, {kShapeStream});
    const double cx = 0.5 * (d.nx - 1) + 0.03 * d.nx * signed_unit(shape);
    const double cy = 0.5 * (d.ny - 1) + 0.03 * d.ny * signed_unit(shape);
    const double cz = 0.5 * (d.nz - 1);
    const double ax = 0.44 * d.nx * (1.0 + 0.06 * signed_unit(shape));
    const double ay = 0.46 * d.ny * (1.0 + 0.06 * signed_unit(shape));
    const double az = 0.75 * d.nz;
    const AngularField folds(RandomStream(spec.geometry_seed, {kFoldStream}), 3, 8);
    const AngularField rim(RandomStream(spec.geometry_seed, {kRimStream}), 1, 3);

    PhantomMaps maps{
        VolumeF32(d, spec.voxel_mm, UnitTag::CbfMlPer100gMin),
        VolumeF32(d, spec.voxel_mm, UnitTag::Seconds),
        VolumeF32(d, spec.voxel_mm, UnitTag::M0Arb),
        Volume<std::uint8_t>(d, spec.voxel_mm, UnitTag::Dimensionless),
    };

    for (int z = 0; z < d.nz; ++z) {
        const double zn = (z - cz) / az;
        for (int y = 0; y < d.ny; ++y) {
            for (int x = 0; x < d.nx; ++x) {
                const double dx = (x - cx) / ax, dy = (y - cy) / ay;
                const double rho = std::sqrt(dx * dx + dy * dy + zn * zn);
                const double theta = std::atan2(dy, dx);
                const double outer = 1.0 + 0.03 * rim(theta, zn);
                const double csf_inner = 0.88 + 0.02 * rim(theta, zn);
                const double gm_inner = 0.66 + 0.12 * folds(theta, zn);
                const double vx = dx / 0.18, vy = dy / 0.10, vz = zn / 0.5;
                Tissue t = Tissue::Wm;
                if (rho > outer)
                    t = Tissue::Background;
                else if (rho > csf_inner)
                    t = Tissue::Csf;
                else if (rho > gm_inner)
                    t = Tissue::Gm;
                else if (vx * vx + vy * vy + vz * vz < 1.0)
                    t = Tissue::Csf;
                maps.labels.at(x, y, z) = static_cast<std::uint8_t>(t);
            }
        }
    }

    // Modulation fields are centred per class so class means are preserved.
    const SmoothField cbf_field(RandomStream(spec.geometry_seed, {kCbfStream}), d);
    const SmoothField att_field(RandomStream(spec.geometry_seed, {kAttStream}), d);
    std::vector<double> cbf_mod(d.count()), att_mod(d.count());
    std::array<double, 4> cbf_sum{}, att_sum{}, count{};
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t i = maps.labels.index(x, y, z);
                const auto label = maps.labels[i];
                cbf_mod[i] = cbf_field(x, y, z);
                att_mod[i] = att_field(x, y, z);
                cbf_sum[label] += cbf_mod[i];
                att_sum[label] += att_mod[i];
                count[label] += 1.0;
            }

    for (std::size_t i = 0; i < d.count(); ++i) {
        const auto label = maps.labels[i];
        const auto tissue = static_cast<Tissue>(label);
        if (tissue == Tissue::Background) continue;
        const TissueClass& c = class_of(spec, tissue);
        const double cbf_dev = cbf_mod[i] - cbf_sum[label] / count[label];
        const double att_dev = att_mod[i] - att_sum[label] / count[label];
        maps.cbf[i] = static_cast<float>(c.cbf * (1.0 + spec.cbf_modulation * cbf_dev));
        maps.att[i] = static_cast<float>(c.att * (1.0 + spec.att_modulation * att_dev));
        maps.m0[i] = static_cast<float>(c.m0);
    }
    return maps;
}

double absolute_noise_sd(const PhantomMaps& maps, const AcquisitionProtocol& proto, double noise_sigma) {
    if (noise_sigma == 0.0) return 0.0;
    const double longest = proto.plds_s.back();
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < maps.labels.size(); ++i) {
        if (maps.labels[i] != static_cast<std::uint8_t>(Tissue::Gm)) continue;
        sum += kinetic::signal_at({maps.cbf[i], maps.att[i], maps.m0[i]}, proto, longest);
        ++n;
    }
    return n == 0 ? 0.0 : noise_sigma * sum / static_cast<double>(n);
}

PerfusionSeries simulate_series(const PhantomMaps& maps, const AcquisitionProtocol& proto, double noise_sigma,
                                std::uint64_t noise_seed, double mask_threshold) {
    require_valid(proto);
    if (!(noise_sigma >= 0.0)) throw Error("simulate_series: noise_sigma must be >= 0");
    if (!maps.cbf.same_grid(maps.att) || !maps.cbf.same_grid(maps.m0))
        throw Error("simulate_series: maps do not share a grid");
    const Dims d = maps.cbf.dims();
    const double sd = absolute_noise_sd(maps, proto, noise_sigma);

    auto noisy = [&](std::uint64_t pld_id, std::uint64_t repeat_id, std::size_t voxel) {
        if (sd == 0.0) return 0.0;
        RandomStream rng(noise_seed, {pld_id, repeat_id, static_cast<std::uint64_t>(voxel)});
        return sd * rng.normal();
    };

    PerfusionSeries series;
    series.protocol = proto;
    series.pwi.resize(proto.plds_s.size());
    for (std::size_t p = 0; p < proto.plds_s.size(); ++p) {
        VolumeF32 clean(d, maps.cbf.voxel_mm(), UnitTag::PwiArb);
        for (int z = 0; z < d.nz; ++z) {
            const double w = kinetic::effective_pld(proto, proto.plds_s[p], z);
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x) {
                    const std::size_t i = clean.index(x, y, z);
                    clean[i] = static_cast<float>(kinetic::signal_at({maps.cbf[i], maps.att[i], maps.m0[i]}, proto, w));
                }
        }
        for (int r = 0; r < proto.repeats[p]; ++r) {
            VolumeF32 rep = clean;
            if (sd > 0.0)
                for (std::size_t i = 0; i < rep.size(); ++i)
                    rep[i] = static_cast<float>(static_cast<double>(clean[i]) + noisy(p, r, i));
            series.pwi[p].push_back(std::move(rep));
        }
    }
    for (int k = 0; k < 2; ++k) {
        VolumeF32 m0 = maps.m0;
        if (sd > 0.0)
            for (std::size_t i = 0; i < m0.size(); ++i)
                m0[i] = static_cast<float>(static_cast<double>(maps.m0[i]) + noisy(kM0Stream, k, i));
        series.m0.push_back(std::move(m0));
    }
    series.mask = mask_from_m0(mean_volume(series.m0), mask_threshold);
    return series;
}

}  // namespace aslperf::phantom
