#include "aslperf/kinetic.hpp"

#include <cmath>

namespace aslperf::kinetic {

namespace {

// ml/100g/min -> 1/s, including the blood-brain partition coefficient.
double flow_per_second(double f_cbf, const AcquisitionProtocol& proto) {
    return f_cbf / (6000.0 * proto.lambda_bp);
}

enum class Branch { BeforeArrival, Inflow, Decay };

Branch branch_for(double t, double delta, double tau) {
    if (t < delta) return Branch::BeforeArrival;
    if (t < delta + tau) return Branch::Inflow;
    return Branch::Decay;
}

}  // namespace

double signal_at(const KineticParams& p, const AcquisitionProtocol& proto, double pld_s) {
    const double t1 = proto.t1b_s;
    const double tau = proto.tau_s;
    const double t = tau + pld_s;
    const double amp = 2.0 * proto.alpha * p.m0_voxel * flow_per_second(p.f_cbf, proto) * t1 *
                       std::exp(-p.delta_att / t1);
    switch (branch_for(t, p.delta_att, tau)) {
        case Branch::BeforeArrival:
            return 0.0;
        case Branch::Inflow:
            return amp * -std::expm1(-(t - p.delta_att) / t1);
        case Branch::Decay:
            return amp * std::exp(-(t - p.delta_att - tau) / t1) * -std::expm1(-tau / t1);
    }
    return 0.0;
}

std::vector<double> signal_curve(const KineticParams& p, const AcquisitionProtocol& proto) {
    std::vector<double> out;
    out.reserve(proto.plds_s.size());
    for (double w : proto.plds_s) out.push_back(signal_at(p, proto, w));
    return out;
}

SignalGradient jacobian_at(const KineticParams& p, const AcquisitionProtocol& proto, double pld_s) {
    const double t1 = proto.t1b_s;
    const double tau = proto.tau_s;
    const double t = tau + pld_s;
    // Signal is linear in f; amp_per_f is the amplitude at unit flow.
    const double arrival = std::exp(-p.delta_att / t1);
    const double amp_per_f = 2.0 * proto.alpha * p.m0_voxel * flow_per_second(1.0, proto) * t1 * arrival;
    switch (branch_for(t, p.delta_att, tau)) {
        case Branch::BeforeArrival:
            return {};
        case Branch::Inflow: {
            // S = amp(f) * (exp(-delta/T1) - exp(-t/T1)) / exp(-delta/T1)
            const double d_f = amp_per_f * -std::expm1(-(t - p.delta_att) / t1);
            const double d_delta = -amp_per_f * p.f_cbf / t1;
            return {d_f, d_delta};
        }
        case Branch::Decay: {
            // arrival factor cancels against the decay term: no delta dependence.
            const double d_f = amp_per_f * std::exp(-(t - p.delta_att - tau) / t1) * -std::expm1(-tau / t1);
            return {d_f, 0.0};
        }
    }
    return {};
}

}  // namespace aslperf::kinetic
