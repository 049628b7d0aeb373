#include <gtest/gtest.h>

#include <cmath>

#include "aslperf/kinetic.hpp"

using namespace aslperf;
using kinetic::KineticParams;

namespace {

const AcquisitionProtocol kProto = AcquisitionProtocol::hcp_a();

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

// Reference values evaluated at 40 significant digits with the same piecewise model.
TEST(Kinetic, MatchesHighPrecisionReferenceCurve) {
    const KineticParams p{60.0, 1.2, 1000.0};
    const double expected[] = {3.9371693142662277872, 6.8450708924760751581, 8.9927792874174925624,
                               6.6418573840906213723, 4.9055212077008126953};
    const auto curve = kinetic::signal_curve(p, kProto);
    ASSERT_EQ(curve.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_LT(rel(curve[i], expected[i]), 1e-13) << "pld index " << i;
    EXPECT_LT(rel(kinetic::signal_at(p, kProto, 1.7), 6.6418573840906213723), 1e-13);
}

TEST(Kinetic, ZeroBeforeArrival) {
    const KineticParams p{60.0, 2.5, 1000.0};
    EXPECT_EQ(kinetic::signal_at(p, kProto, 0.2), 0.0);
    EXPECT_GT(kinetic::signal_at(p, kProto, 1.2), 0.0);
}

TEST(Kinetic, ZeroFlowGivesZeroSignal) {
    const KineticParams p{0.0, 1.2, 1000.0};
    for (double s : kinetic::signal_curve(p, kProto)) EXPECT_EQ(s, 0.0);
}

TEST(Kinetic, ContinuousAtBreakpoints) {
    for (double delta : {0.5, 1.2, 2.0}) {
        const KineticParams p{55.0, delta, 900.0};
        const double w_arrival = delta - kProto.tau_s;  // t == delta
        const double w_end = delta;                     // t == delta + tau
        const double eps = 1e-12;
        // Jumps are relative to the peak of the curve.
        double peak = 0.0;
        for (double w = -1.0; w < 3.0; w += 0.01) peak = std::max(peak, kinetic::signal_at(p, kProto, w));
        for (double w : {w_arrival, w_end}) {
            const double lo = kinetic::signal_at(p, kProto, w - eps);
            const double hi = kinetic::signal_at(p, kProto, w + eps);
            EXPECT_LT(std::abs(hi - lo) / peak, 1e-9) << "delta " << delta << " w " << w;
        }
    }
}

TEST(Kinetic, LinearInFlow) {
    for (double w : kProto.plds_s) {
        const double s1 = kinetic::signal_at({20.0, 1.1, 1000.0}, kProto, w);
        const double s3 = kinetic::signal_at({60.0, 1.1, 1000.0}, kProto, w);
        EXPECT_NEAR(s3, 3.0 * s1, 1e-12 * std::abs(s3));
    }
}

TEST(Kinetic, JacobianMatchesCentralDifferences) {
    for (double f : {10.0, 60.0, 120.0})
        for (double delta : {0.6, 1.3, 2.1})
            for (double w : {0.2, 1.0, 1.9}) {
                const KineticParams p{f, delta, 1000.0};
                const auto g = kinetic::jacobian_at(p, kProto, w);
                const double hf = 1e-4 * f, hd = 1e-6;
                const double df = (kinetic::signal_at({f + hf, delta, 1000.0}, kProto, w) -
                                   kinetic::signal_at({f - hf, delta, 1000.0}, kProto, w)) /
                                  (2 * hf);
                const double dd = (kinetic::signal_at({f, delta + hd, 1000.0}, kProto, w) -
                                   kinetic::signal_at({f, delta - hd, 1000.0}, kProto, w)) /
                                  (2 * hd);
                EXPECT_NEAR(g.d_f, df, 1e-6 * std::max(1.0, std::abs(df)));
                EXPECT_NEAR(g.d_delta, dd, 1e-6 * std::max(1.0, std::abs(dd)));
            }
}

TEST(Kinetic, DecayBranchIndependentOfArrival) {
    // With tissue T1 equal to blood T1 the late signal does not depend on delta.
    const double a = kinetic::signal_at({60.0, 0.8, 1000.0}, kProto, 2.2);
    const double b = kinetic::signal_at({60.0, 1.4, 1000.0}, kProto, 2.2);
    EXPECT_NEAR(a, b, 1e-12 * a);
}

TEST(Kinetic, EffectivePldShiftsBySliceTiming) {
    auto proto = kProto;
    proto.slice_dt_s = 0.05;
    EXPECT_DOUBLE_EQ(kinetic::effective_pld(proto, 1.7, 4), 1.9);
    EXPECT_DOUBLE_EQ(kinetic::effective_pld(kProto, 1.7, 4), 1.7);
}
