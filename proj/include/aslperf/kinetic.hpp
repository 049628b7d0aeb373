#pragma once

#include <vector>

#include "aslperf/core.hpp"

namespace aslperf::kinetic {

struct KineticParams {
    double f_cbf = 0.0;      ///< ml/100g/min
    double delta_att = 0.0;  ///< seconds
    double m0_voxel = 0.0;   ///< same arbitrary scale as the PWI
};

struct SignalGradient {
    double d_f = 0.0;
    double d_delta = 0.0;
};

/// Single-compartment pCASL difference signal at post-labeling delay `pld_s`.
/// Zero before bolus arrival, inflow branch while the bolus is arriving,
/// T1b decay afterwards. Tissue T1 is taken equal to blood T1.
double signal_at(const KineticParams& p, const AcquisitionProtocol& proto, double pld_s);

/// signal_at for every PLD of the protocol.
std::vector<double> signal_curve(const KineticParams& p, const AcquisitionProtocol& proto);

/// Analytic (dS/df, dS/ddelta). At the breakpoints the t > delta branch is used.
SignalGradient jacobian_at(const KineticParams& p, const AcquisitionProtocol& proto, double pld_s);

/// PLD seen by slice z when slices are acquired sequentially.
inline double effective_pld(const AcquisitionProtocol& proto, double pld_s, int z) {
    return pld_s + z * proto.slice_dt_s;
}

}  // namespace aslperf::kinetic
