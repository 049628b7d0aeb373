#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "aslperf/random.hpp"
#include "aslperf/wdsr.hpp"

namespace aslperf::gradcheck {

struct GradCheckResult {
    double worst = 0.0;           ///< max relative error over checked entries
    std::size_t checked = 0;
    std::size_t one_sided = 0;    ///< entries with a ReLU kink inside the central interval
};

/// Finite-difference check of backprop for the scalar <forward(x), g>.
/// The network is piecewise linear in any single weight, so one-sided
/// differences are exact away from ReLU kinks and the step only bounds roundoff; when the forward and backward
/// differences disagree, the side whose step-halved difference is unchanged
/// (no kink) is used. `samples` entries per parameter tensor, every entry when 0.
inline GradCheckResult gradient_check(wdsr::WdsrModel<double>& m, const tensor::Tensor4<double>& x,
                                      const tensor::Tensor4<double>& g, std::size_t samples = 0,
                                      std::uint64_t seed = 1, double h = 1e-5) {
    auto objective = [&] {
        const auto y = wdsr::forward(m, x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y.data[i] * g.data[i];
        return s;
    };
    wdsr::ForwardCache<double> cache;
    m.zero_grad();
    wdsr::forward(m, x, &cache);
    wdsr::backward(m, cache, g);
    const double f0 = objective();

    GradCheckResult out;
    RandomStream pick(seed, {});
    auto close = [](double a, double b) { return std::abs(a - b) <= 1e-6 * std::max({std::abs(a), std::abs(b), 1e-3}); };
    for (auto& p : m.params()) {
        std::vector<std::size_t> idx;
        if (samples == 0 || samples >= p.value.size()) {
            for (std::size_t i = 0; i < p.value.size(); ++i) idx.push_back(i);
        } else {
            for (std::size_t k = 0; k < samples; ++k) idx.push_back(pick.below(p.value.size()));
        }
        for (std::size_t i : idx) {
            const double v0 = p.value[i];
            auto at = [&](double dv) {
                p.value[i] = v0 + dv;
                const double f = objective();
                p.value[i] = v0;
                return f;
            };
            const double up = at(h), dn = at(-h);
            const double fwd = (up - f0) / h, bwd = (f0 - dn) / h;
            double fd = (up - dn) / (2 * h);
            if (!close(fwd, bwd)) {
                ++out.one_sided;
                if (close(fwd, (at(h / 2) - f0) / (h / 2)))
                    fd = fwd;
                else if (close(bwd, (f0 - at(-h / 2)) / (h / 2)))
                    fd = bwd;
            }
            const double err = std::abs(fd - p.grad[i]) / std::max({std::abs(fd), std::abs(p.grad[i]), 1e-6});
            out.worst = std::max(out.worst, err);
            ++out.checked;
        }
    }
    return out;
}

}  // namespace aslperf::gradcheck
