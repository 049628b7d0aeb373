#include "aslperf/features.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "aslperf/reffit.hpp"

namespace aslperf::features {

std::string_view variant_name(Variant v) { return v == Variant::OnePld ? "one-pld" : "two-pld"; }

std::optional<Variant> variant_from_name(std::string_view name) {
    if (name == "one-pld") return Variant::OnePld;
    if (name == "two-pld") return Variant::TwoPld;
    return std::nullopt;
}

std::string_view target_name(Target t) { return t == Target::Cbf ? "cbf" : "att"; }

std::optional<Target> target_from_name(std::string_view name) {
    if (name == "cbf") return Target::Cbf;
    if (name == "att") return Target::Att;
    return std::nullopt;
}

SliceRange default_slice_range(int nz) {
    if (nz >= 45) return {25, 20};
    const int count = std::min(20, nz);
    return {(nz - count) / 2, count};
}

namespace {

std::size_t require_pld(const AcquisitionProtocol& proto, double pld) {
    const auto idx = proto.find_pld(pld, 1e-6);
    if (!idx) throw Error("features: protocol has no PLD at " + std::to_string(pld) + " s");
    return *idx;
}

}  // namespace

std::pair<VolumeF32, VolumeF32> mean_std_pwi(const PerfusionSeries& series, std::size_t pld_index) {
    validate_series(series);
    if (pld_index >= series.pwi.size()) throw Error("mean_std_pwi: pld_index out of range");
    const auto& reps = series.pwi[pld_index];
    if (reps.size() < 2) throw Error("std undefined: fewer than 2 repeats");

    const VolumeF32 m0 = mean_volume(series.m0);
    const auto& mask = series.mask;
    VolumeF32 mean(mask.dims(), mask.voxel_mm(), UnitTag::Dimensionless);
    VolumeF32 sd(mask.dims(), mask.voxel_mm(), UnitTag::Dimensionless);
    const double n = static_cast<double>(reps.size());
    for (std::size_t v = 0; v < mask.size(); ++v) {
        if (!mask[v]) continue;
        const double m0v = m0[v];
        if (!(m0v > 0.0)) throw Error("mean_std_pwi: non-positive M0 inside mask");
        // Shifted by the first sample so identical repeats give exactly zero spread.
        const double x0 = reps.front()[v] / m0v;
        double sum = 0.0;
        for (const auto& r : reps) sum += r[v] / m0v - x0;
        const double mu = x0 + sum / n;
        double ss = 0.0;
        for (const auto& r : reps) {
            const double dev = r[v] / m0v - mu;
            ss += dev * dev;
        }
        mean[v] = static_cast<float>(mu);
        sd[v] = static_cast<float>(std::sqrt(ss / n));
    }
    return {std::move(mean), std::move(sd)};
}

std::vector<VolumeF32> feature_volumes(const PerfusionSeries& series, Variant variant,
                                       const TargetScaling& scaling) {
    const auto& proto = series.protocol;
    if (variant == Variant::OnePld) {
        auto [mean, sd] = mean_std_pwi(series, require_pld(proto, kLongPld));
        return {std::move(mean), std::move(sd)};
    }
    const std::size_t short_idx = require_pld(proto, kShortPld);
    const std::size_t long_idx = require_pld(proto, kLongPld);
    auto short_mean = mean_std_pwi(series, short_idx).first;
    auto long_mean = mean_std_pwi(series, long_idx).first;

    double max_abs = 0.0;
    for (std::size_t v = 0; v < short_mean.size(); ++v)
        max_abs = std::max({max_abs, std::abs(static_cast<double>(short_mean[v])),
                            std::abs(static_cast<double>(long_mean[v]))});
    const double floor = reffit::delay_denominator_floor(max_abs);
    const std::array<double, 2> plds{proto.plds_s[short_idx], proto.plds_s[long_idx]};

    VolumeF32 delay(short_mean.dims(), short_mean.voxel_mm(), UnitTag::Dimensionless);
    for (std::size_t v = 0; v < delay.size(); ++v) {
        if (!series.mask[v]) continue;
        const std::array<double, 2> means{short_mean[v], long_mean[v]};
        const auto wd = reffit::weighted_delay(means, plds, floor);
        delay[v] = static_cast<float>(wd.seconds * scaling.att_scale);
    }
    return {std::move(short_mean), std::move(long_mean), std::move(delay)};
}

std::vector<ModelInput> slice_inputs(const std::vector<VolumeF32>& channels, Variant variant, SliceRange range,
                                     const std::string& subject_id) {
    if (static_cast<int>(channels.size()) != channel_count(variant))
        throw Error("slice_inputs: channel count does not match variant");
    const Dims d = channels.front().dims();
    if (range.first < 0 || range.count < 0 || range.first + range.count > d.nz)
        throw Error("slice_inputs: slice range outside volume");
    std::vector<ModelInput> out;
    out.reserve(range.count);
    for (int z = range.first; z < range.first + range.count; ++z) {
        ModelInput in{variant, d.nx, d.ny, {}, z, subject_id};
        for (const auto& ch : channels) {
            const auto s = ch.slice(z);
            if (std::any_of(s.begin(), s.end(), [](float v) { return !std::isfinite(v); }))
                throw Error("slice_inputs: non-finite channel value");
            in.channels.emplace_back(s.begin(), s.end());
        }
        out.push_back(std::move(in));
    }
    return out;
}

std::vector<ModelInput> build_input(const PerfusionSeries& series, Variant variant, const TargetScaling& scaling,
                                    std::optional<SliceRange> range, const std::string& subject_id) {
    const auto channels = feature_volumes(series, variant, scaling);
    return slice_inputs(channels, variant, range.value_or(default_slice_range(series.dims().nz)), subject_id);
}

namespace {
UnitTag physical_unit(Target t) { return t == Target::Cbf ? UnitTag::CbfMlPer100gMin : UnitTag::Seconds; }
}  // namespace

VolumeF32 scale_target(const VolumeF32& map, Target which, const TargetScaling& scaling) {
    if (map.unit() != physical_unit(which))
        throw Error("scale_target: unit mismatch, expected " + std::string(unit_name(physical_unit(which))));
    const double s = scaling.scale_for(which);
    if (!(s > 0.0)) throw Error("scale_target: scale must be > 0");
    VolumeF32 out = map;
    out.set_unit(UnitTag::Dimensionless);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(static_cast<double>(map[i]) * s);
    return out;
}

VolumeF32 unscale_target(const VolumeF32& scaled, Target which, const TargetScaling& scaling) {
    if (scaled.unit() != UnitTag::Dimensionless) throw Error("unscale_target: unit mismatch, expected dimensionless");
    const double s = scaling.scale_for(which);
    if (!(s > 0.0)) throw Error("unscale_target: scale must be > 0");
    VolumeF32 out = scaled;
    out.set_unit(physical_unit(which));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(static_cast<double>(scaled[i]) / s);
    return out;
}

}  // namespace aslperf::features
