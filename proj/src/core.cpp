#include "aslperf/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace aslperf {

namespace {
constexpr std::array<std::pair<UnitTag, std::string_view>, 5> kUnitNames{{
    {UnitTag::PwiArb, "PWI-arb"},
    {UnitTag::CbfMlPer100gMin, "ml/100g/min"},
    {UnitTag::Seconds, "seconds"},
    {UnitTag::M0Arb, "M0-arb"},
    {UnitTag::Dimensionless, "dimensionless"},
}};
}  // namespace

std::string_view unit_name(UnitTag unit) {
    for (const auto& [tag, name] : kUnitNames)
        if (tag == unit) return name;
    return "dimensionless";
}

std::optional<UnitTag> unit_from_name(std::string_view name) {
    for (const auto& [tag, n] : kUnitNames)
        if (n == name) return tag;
    return std::nullopt;
}

void require_finite(const VolumeF32& volume, std::string_view what) {
    const auto data = volume.data();
    if (!std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); }))
        throw Error(std::string(what) + ": non-finite voxel values");
}

std::optional<std::size_t> AcquisitionProtocol::find_pld(double pld_s, double tol) const {
    for (std::size_t i = 0; i < plds_s.size(); ++i)
        if (std::abs(plds_s[i] - pld_s) <= tol) return i;
    return std::nullopt;
}

std::vector<Violation> validate_protocol(const AcquisitionProtocol& p) {
    std::vector<Violation> out;
    if (p.plds_s.empty()) out.push_back({"plds_s", "plds_s is empty"});
    for (std::size_t i = 0; i < p.plds_s.size(); ++i) {
        if (!(p.plds_s[i] > 0.0)) {
            out.push_back({"plds_s", "plds_s must be > 0"});
            break;
        }
    }
    for (std::size_t i = 1; i < p.plds_s.size(); ++i) {
        if (!(p.plds_s[i] > p.plds_s[i - 1])) {
            out.push_back({"plds_s", "plds_s not increasing"});
            break;
        }
    }
    if (p.repeats.size() != p.plds_s.size()) out.push_back({"repeats", "repeats length mismatch"});
    if (std::any_of(p.repeats.begin(), p.repeats.end(), [](int r) { return r < 1; }))
        out.push_back({"repeats", "repeats must be >= 1"});
    if (!(p.tau_s > 0.0)) out.push_back({"tau_s", "tau_s must be > 0"});
    if (!(p.alpha > 0.0 && p.alpha <= 1.0)) out.push_back({"alpha", "alpha must be in (0, 1]"});
    if (!(p.lambda_bp >= 0.8 && p.lambda_bp <= 1.0))
        out.push_back({"lambda_bp", "lambda_bp must be in [0.8, 1.0]"});
    if (!(p.t1b_s > 0.0)) out.push_back({"t1b_s", "t1b_s must be > 0"});
    if (!(p.slice_dt_s >= 0.0) || !std::isfinite(p.slice_dt_s))
        out.push_back({"slice_dt_s", "slice_dt_s must be finite and >= 0"});
    return out;
}

void require_valid(const AcquisitionProtocol& protocol) {
    const auto violations = validate_protocol(protocol);
    if (violations.empty()) return;
    std::ostringstream msg;
    msg << "invalid protocol:";
    for (const auto& v : violations) msg << " [" << v.field << "] " << v.message << ";";
    throw Error(msg.str());
}

void validate_series(const PerfusionSeries& series) {
    require_valid(series.protocol);
    const auto& proto = series.protocol;
    if (series.pwi.size() != proto.plds_s.size()) throw Error("series: PWI stack count does not match PLD count");
    if (series.m0.empty()) throw Error("series: at least one M0 volume required");
    const auto& grid = series.mask;
    auto check = [&](const VolumeF32& v, const char* what) {
        if (!grid.same_grid(v)) throw Error(std::string("series: ") + what + " grid differs from mask");
    };
    for (std::size_t i = 0; i < series.pwi.size(); ++i) {
        if (series.pwi[i].size() != static_cast<std::size_t>(proto.repeats[i]))
            throw Error("series: repeat count at PLD index " + std::to_string(i) + " does not match protocol");
        for (const auto& v : series.pwi[i]) check(v, "PWI");
    }
    for (const auto& v : series.m0) check(v, "M0");
}

MaskVolume mask_from_m0(const VolumeF32& m0, double rel_threshold) {
    if (!(rel_threshold > 0.0 && rel_threshold < 1.0)) throw Error("mask threshold must be in (0, 1)");
    const auto data = m0.data();
    const float peak = data.empty() ? 0.0f : *std::max_element(data.begin(), data.end());
    if (!(peak > 0.0f)) throw Error("empty M0");
    const double cut = rel_threshold * static_cast<double>(peak);
    MaskVolume mask(m0.dims(), m0.voxel_mm(), UnitTag::Dimensionless);
    for (std::size_t i = 0; i < data.size(); ++i) mask[i] = static_cast<double>(data[i]) >= cut ? 1 : 0;
    return mask;
}

VolumeF32 mean_volume(std::span<const VolumeF32> volumes) {
    if (volumes.empty()) throw Error("mean_volume: no volumes");
    const auto& first = volumes.front();
    std::vector<double> acc(first.size(), 0.0);
    for (const auto& v : volumes) {
        if (!first.same_grid(v)) throw Error("mean_volume: grid mismatch");
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
    }
    VolumeF32 out(first.dims(), first.voxel_mm(), first.unit());
    const double n = static_cast<double>(volumes.size());
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / n);
    return out;
}

}  // namespace aslperf
