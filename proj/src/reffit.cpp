#include "aslperf/reffit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "aslperf/kinetic.hpp"
#include "aslperf/parallel.hpp"

namespace aslperf::reffit {

void validate_config(const FitConfig& cfg) {
    if (!(cfg.cbf_bounds.lo < cfg.cbf_bounds.hi)) throw Error("fit: cbf_bounds not ordered");
    if (!(cfg.att_bounds.lo < cfg.att_bounds.hi)) throw Error("fit: att_bounds not ordered");
    if (cfg.max_iter < 1) throw Error("fit: max_iter must be >= 1");
    if (!(cfg.initial_damping > 0.0) || !(cfg.damping_up > 1.0) || !(cfg.damping_down > 0.0 && cfg.damping_down < 1.0))
        throw Error("fit: damping settings out of range");
    if (!(cfg.tol > 0.0)) throw Error("fit: tol must be > 0");
    if (cfg.att_init_grid.empty()) throw Error("fit: att_init_grid is empty");
    if (!(cfg.noise_floor_k >= 0.0)) throw Error("fit: noise_floor_k must be >= 0");
    for (double w : cfg.residual_weights)
        if (!(w > 0.0)) throw Error("fit: residual weights must be > 0");
}

WeightedDelay weighted_delay(std::span<const double> pwi_means, std::span<const double> plds,
                             double denominator_floor) {
    if (pwi_means.size() != plds.size()) throw Error("weighted_delay: length mismatch");
    if (pwi_means.size() < 2) throw Error("weighted_delay: need at least two PLDs");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < plds.size(); ++i) {
        num += plds[i] * pwi_means[i];
        den += pwi_means[i];
    }
    if (!(den > denominator_floor)) return {0.0, true};
    const auto [lo, hi] = std::minmax_element(plds.begin(), plds.end());
    return {std::clamp(num / den, *lo, *hi), false};
}

std::vector<double> residual_weights(const AcquisitionProtocol& proto, const FitConfig& cfg) {
    if (!cfg.residual_weights.empty()) {
        if (cfg.residual_weights.size() != proto.plds_s.size())
            throw Error("fit: residual_weights length does not match PLD count");
        return cfg.residual_weights;
    }
    return {proto.repeats.begin(), proto.repeats.end()};
}

double weighted_cost(std::span<const double> pwi_means, double m0, const AcquisitionProtocol& proto,
                     std::span<const double> weights, double f_cbf, double delta_att) {
    const kinetic::KineticParams p{f_cbf, delta_att, m0};
    double cost = 0.0;
    for (std::size_t i = 0; i < pwi_means.size(); ++i) {
        const double r = pwi_means[i] - kinetic::signal_at(p, proto, proto.plds_s[i]);
        cost += weights[i] * r * r;
    }
    return cost;
}

namespace {

struct Solution {
    double f, delta, cost;
    bool converged;
    int iterations;
};

// Projected Levenberg-Marquardt on (f, delta) with Marquardt diagonal scaling.
Solution levenberg_marquardt(std::span<const double> y, double m0, const AcquisitionProtocol& proto,
                             std::span<const double> w, const FitConfig& cfg, double f, double delta,
                             double cost_floor) {
    const std::size_t n = y.size();
    double lambda = cfg.initial_damping;
    double cost = weighted_cost(y, m0, proto, w, f, delta);
    bool converged = cost <= cost_floor;
    int iter = 0;
    for (; iter < cfg.max_iter && !converged; ++iter) {
        double a00 = 0, a01 = 0, a11 = 0, g0 = 0, g1 = 0;
        const kinetic::KineticParams p{f, delta, m0};
        for (std::size_t i = 0; i < n; ++i) {
            const auto jac = kinetic::jacobian_at(p, proto, proto.plds_s[i]);
            const double r = y[i] - kinetic::signal_at(p, proto, proto.plds_s[i]);
            a00 += w[i] * jac.d_f * jac.d_f;
            a01 += w[i] * jac.d_f * jac.d_delta;
            a11 += w[i] * jac.d_delta * jac.d_delta;
            g0 += w[i] * jac.d_f * r;
            g1 += w[i] * jac.d_delta * r;
        }
        // Scale floors keep the system solvable when delta has no leverage.
        const double s0 = std::max(a00, 1e-12 * (a00 + a11) + std::numeric_limits<double>::min());
        const double s1 = std::max(a11, 1e-12 * (a00 + a11) + std::numeric_limits<double>::min());

        bool accepted = false;
        while (!accepted) {
            const double b00 = a00 + lambda * s0;
            const double b11 = a11 + lambda * s1;
            const double det = b00 * b11 - a01 * a01;
            double step_f = 0.0, step_d = 0.0;
            if (det > 0.0 && std::isfinite(det)) {
                step_f = (b11 * g0 - a01 * g1) / det;
                step_d = (b00 * g1 - a01 * g0) / det;
            }
            const double nf = std::clamp(f + step_f, cfg.cbf_bounds.lo, cfg.cbf_bounds.hi);
            const double nd = std::clamp(delta + step_d, cfg.att_bounds.lo, cfg.att_bounds.hi);
            const double ncost = weighted_cost(y, m0, proto, w, nf, nd);
            if (ncost < cost) {
                const double decrease = cost - ncost;
                f = nf;
                delta = nd;
                cost = ncost;
                lambda = std::max(lambda * cfg.damping_down, 1e-15);
                accepted = true;
                if (decrease <= cfg.tol * (cost + decrease) || cost <= cost_floor) converged = true;
            } else {
                lambda *= cfg.damping_up;
                // No descent direction left at any damping: stationary point.
                if (lambda > 1e16) {
                    converged = true;
                    break;
                }
            }
        }
    }
    return {f, delta, cost, converged, iter};
}

}  // namespace

VoxelFit fit_voxel(std::span<const double> pwi_means, double m0, const AcquisitionProtocol& proto,
                   const FitConfig& cfg, std::span<const double> noise_floor) {
    if (pwi_means.size() != proto.plds_s.size()) throw Error("fit_voxel: pwi_means length does not match PLDs");
    if (!std::isfinite(m0) || std::any_of(pwi_means.begin(), pwi_means.end(), [](double v) { return !std::isfinite(v); }))
        throw Error("fit_voxel: non-finite input");
    if (!noise_floor.empty() && noise_floor.size() != pwi_means.size())
        throw Error("fit_voxel: noise_floor length does not match PLDs");

    const VoxelFit degenerate{0.0, cfg.att_bounds.lo, FitFlag::Degenerate, 0.0, 0};
    if (!(m0 > 0.0)) return degenerate;
    bool any_signal = false;
    for (std::size_t i = 0; i < pwi_means.size(); ++i) {
        const double floor = noise_floor.empty() ? 0.0 : std::max(noise_floor[i], 0.0);
        if (pwi_means[i] > floor) any_signal = true;
    }
    if (!any_signal) return degenerate;

    const auto w = residual_weights(proto, cfg);
    double data_energy = 0.0;
    for (std::size_t i = 0; i < pwi_means.size(); ++i) data_energy += w[i] * pwi_means[i] * pwi_means[i];
    const double cost_floor = 1e-28 * data_energy;

    std::vector<double> starts = cfg.att_init_grid;
    const auto wd = weighted_delay(pwi_means, proto.plds_s);
    if (!wd.degenerate) starts.push_back(wd.seconds);

    Solution best{0, 0, std::numeric_limits<double>::infinity(), false, 0};
    for (double d0 : starts) {
        d0 = std::clamp(d0, cfg.att_bounds.lo, cfg.att_bounds.hi);
        // Signal is linear in f: closed-form f for fixed delta.
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < pwi_means.size(); ++i) {
            const double g = kinetic::signal_at({1.0, d0, m0}, proto, proto.plds_s[i]);
            num += w[i] * g * pwi_means[i];
            den += w[i] * g * g;
        }
        const double f0 = std::clamp(den > 0.0 ? num / den : 0.0, cfg.cbf_bounds.lo, cfg.cbf_bounds.hi);
        const auto sol = levenberg_marquardt(pwi_means, m0, proto, w, cfg, f0, d0, cost_floor);
        if (sol.cost < best.cost) best = sol;
    }

    VoxelFit out{best.f, best.delta, FitFlag::Ok, best.cost, best.iterations};
    const auto at_bound = [](double v, const Bounds& b) { return v <= b.lo || v >= b.hi; };
    if (!best.converged)
        out.flag = FitFlag::NoConvergence;
    else if (at_bound(best.f, cfg.cbf_bounds) || at_bound(best.delta, cfg.att_bounds))
        out.flag = FitFlag::BoundHit;
    return out;
}

ParamMapPair fit_volume(const PerfusionSeries& series, const FitConfig& cfg, int threads) {
    validate_series(series);
    validate_config(cfg);
    const auto& proto = series.protocol;
    const Dims d = series.dims();
    const auto& grid = series.mask;
    const std::size_t n_pld = proto.plds_s.size();

    const VolumeF32 m0 = mean_volume(series.m0);
    ParamMapPair out{
        VolumeF32(d, grid.voxel_mm(), UnitTag::CbfMlPer100gMin),
        VolumeF32(d, grid.voxel_mm(), UnitTag::Seconds),
        FlagVolume(d, grid.voxel_mm(), UnitTag::Dimensionless, static_cast<std::uint8_t>(FitFlag::Masked)),
    };

    // One protocol per slice so sequential slice timing shifts the PLDs.
    std::vector<AcquisitionProtocol> slice_proto(d.nz, proto);
    if (proto.slice_dt_s != 0.0)
        for (int z = 0; z < d.nz; ++z)
            for (auto& w : slice_proto[z].plds_s) w = kinetic::effective_pld(proto, w, z);

    parallel_for(static_cast<std::size_t>(d.nz), threads, [&](std::size_t zi) {
        const int z = static_cast<int>(zi);
        std::vector<double> means(n_pld), floor(n_pld);
        for (int y = 0; y < d.ny; ++y) {
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t v = grid.index(x, y, z);
                if (!grid[v]) continue;
                for (std::size_t p = 0; p < n_pld; ++p) {
                    const auto& reps = series.pwi[p];
                    double sum = 0.0;
                    for (const auto& r : reps) sum += r[v];
                    const double n = static_cast<double>(reps.size());
                    means[p] = sum / n;
                    double ss = 0.0;
                    for (const auto& r : reps) ss += (r[v] - means[p]) * (r[v] - means[p]);
                    floor[p] = reps.size() > 1 ? cfg.noise_floor_k * std::sqrt(ss / (n - 1.0) / n) : 0.0;
                }
                const auto fit = fit_voxel(means, m0[v], slice_proto[z], cfg, floor);
                out.cbf[v] = static_cast<float>(fit.f_cbf);
                out.att[v] = static_cast<float>(fit.delta_att);
                out.flags[v] = static_cast<std::uint8_t>(fit.flag);
            }
        }
    });
    return out;
}

}  // namespace aslperf::reffit
