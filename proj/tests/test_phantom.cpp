#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "aslperf/kinetic.hpp"
#include "aslperf/phantom.hpp"

using namespace aslperf;
using phantom::PhantomSpec;
using phantom::Tissue;

namespace {

PhantomSpec small_spec() {
    PhantomSpec s;
    s.dims = {24, 24, 16};
    return s;
}

std::map<int, std::pair<double, std::size_t>> class_sums(const phantom::PhantomMaps& m, const VolumeF32& v) {
    std::map<int, std::pair<double, std::size_t>> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        auto& e = out[m.labels[i]];
        e.first += v[i];
        e.second += 1;
    }
    return out;
}

}  // namespace

TEST(Phantom, RejectsTinyDims) {
    PhantomSpec s;
    s.dims = {15, 32, 32};
    EXPECT_THROW(phantom::validate_spec(s), Error);
    EXPECT_THROW(phantom::make_phantom_maps(s), Error);
}

TEST(Phantom, HasAllTissueClassesAndZeroBackground) {
    const auto m = phantom::make_phantom_maps(small_spec());
    std::map<int, int> counts;
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
        ++counts[m.labels[i]];
        if (m.labels[i] == static_cast<int>(Tissue::Background)) {
            EXPECT_EQ(m.cbf[i], 0.0f);
            EXPECT_EQ(m.att[i], 0.0f);
            EXPECT_EQ(m.m0[i], 0.0f);
        }
    }
    for (int t = 0; t < 4; ++t) EXPECT_GT(counts[t], 0) << "class " << t;
    EXPECT_EQ(m.cbf.unit(), UnitTag::CbfMlPer100gMin);
    EXPECT_EQ(m.att.unit(), UnitTag::Seconds);
}

TEST(Phantom, NoModulationGivesExactClassValues) {
    auto s = small_spec();
    s.cbf_modulation = 0.0;
    s.att_modulation = 0.0;
    const auto m = phantom::make_phantom_maps(s);
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
        if (m.labels[i] == static_cast<int>(Tissue::Gm)) {
            EXPECT_EQ(m.cbf[i], 60.0f);
            EXPECT_EQ(m.att[i], 1.2f);
        }
    }
    for (const auto& [label, e] : class_sums(m, m.cbf)) {
        const double expected = label == 2 ? 60.0 : label == 3 ? 20.0 : 0.0;
        EXPECT_NEAR(e.first / e.second, expected, 1e-12 * std::max(1.0, expected));
    }
}

TEST(Phantom, ModulationPreservesClassMeans) {
    const auto s = small_spec();
    const auto m = phantom::make_phantom_maps(s);
    const auto cbf = class_sums(m, m.cbf);
    const auto att = class_sums(m, m.att);
    // Float32 storage bounds the agreement.
    EXPECT_NEAR(cbf.at(2).first / cbf.at(2).second, 60.0, 60.0 * 1e-5);
    EXPECT_NEAR(cbf.at(3).first / cbf.at(3).second, 20.0, 20.0 * 1e-5);
    EXPECT_NEAR(att.at(2).first / att.at(2).second, 1.2, 1.2 * 1e-5);
    EXPECT_NEAR(att.at(3).first / att.at(3).second, 1.6, 1.6 * 1e-5);
    // And the field is actually non-constant.
    float lo = 1e9f, hi = -1e9f;
    for (std::size_t i = 0; i < m.labels.size(); ++i)
        if (m.labels[i] == 2) lo = std::min(lo, m.cbf[i]), hi = std::max(hi, m.cbf[i]);
    EXPECT_GT(hi - lo, 5.0f);
}

TEST(Phantom, DeterministicPerSeed) {
    const auto a = phantom::make_phantom_maps(small_spec());
    const auto b = phantom::make_phantom_maps(small_spec());
    EXPECT_EQ(a.cbf.values(), b.cbf.values());
    EXPECT_EQ(a.labels.values(), b.labels.values());
    auto s = small_spec();
    s.geometry_seed = 99;
    const auto c = phantom::make_phantom_maps(s);
    EXPECT_NE(a.cbf.values(), c.cbf.values());
}

TEST(Simulate, NoiselessRepeatsEqualSignalCurve) {
    const auto m = phantom::make_phantom_maps(small_spec());
    const auto proto = AcquisitionProtocol::hcp_a();
    const auto series = phantom::simulate_series(m, proto, 0.0, 5);
    ASSERT_EQ(series.pwi.size(), 5u);
    for (std::size_t p = 0; p < 5; ++p) ASSERT_EQ(series.pwi[p].size(), static_cast<std::size_t>(proto.repeats[p]));
    ASSERT_EQ(series.m0.size(), 2u);
    for (std::size_t i = 0; i < m.cbf.size(); i += 37) {
        const auto curve = kinetic::signal_curve({m.cbf[i], m.att[i], m.m0[i]}, proto);
        for (std::size_t p = 0; p < 5; ++p) {
            EXPECT_EQ(series.pwi[p][0][i], static_cast<float>(curve[p]));
            EXPECT_EQ(series.pwi[p][0][i], series.pwi[p].back()[i]);
        }
        EXPECT_EQ(series.m0[0][i], m.m0[i]);
    }
}

TEST(Simulate, ZeroFlowGivesZeroPwi) {
    auto s = small_spec();
    s.gm.cbf = 0.0;
    s.wm.cbf = 0.0;
    const auto m = phantom::make_phantom_maps(s);
    const auto proto = AcquisitionProtocol::hcp_a();
    // Noise scale is relative to GM signal, which is zero here.
    const auto series = phantom::simulate_series(m, proto, 0.0, 5);
    for (const auto& stack : series.pwi)
        for (const auto& v : stack)
            for (float x : v.values()) EXPECT_EQ(x, 0.0f);
}

TEST(Simulate, NoiseSdMatchesRequest) {
    const auto m = phantom::make_phantom_maps(small_spec());
    const auto proto = AcquisitionProtocol::hcp_a();
    const double sigma = phantom::absolute_noise_sd(m, proto, 0.5);
    ASSERT_GT(sigma, 0.0);
    const auto series = phantom::simulate_series(m, proto, 0.5, 17);
    const auto& reps = series.pwi[3];
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < m.cbf.size() && n < 5000; ++i) {
        double mean = 0.0;
        for (const auto& r : reps) mean += r[i];
        mean /= static_cast<double>(reps.size());
        double ss = 0.0;
        for (const auto& r : reps) ss += (r[i] - mean) * (r[i] - mean);
        acc += ss / static_cast<double>(reps.size() - 1);
        ++n;
    }
    ASSERT_GE(n, 1000u);
    EXPECT_NEAR(std::sqrt(acc / n), sigma, 0.25 * sigma);
}

TEST(Simulate, RepeatMeanErrorShrinksWithRepeats) {
    const auto m = phantom::make_phantom_maps(small_spec());
    auto proto = AcquisitionProtocol::hcp_a();
    proto.repeats = {4, 4, 4, 64, 4};
    const auto series = phantom::simulate_series(m, proto, 0.5, 23);
    const auto clean = phantom::simulate_series(m, proto, 0.0, 23);
    auto rms_err = [&](std::size_t nrep) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m.cbf.size(); ++i) {
            double mean = 0.0;
            for (std::size_t r = 0; r < nrep; ++r) mean += series.pwi[3][r][i];
            mean /= static_cast<double>(nrep);
            const double d = mean - clean.pwi[3][0][i];
            acc += d * d;
        }
        return std::sqrt(acc / m.cbf.size());
    };
    const double e4 = rms_err(4), e64 = rms_err(64);
    EXPECT_NEAR(e4 / e64, 4.0, 0.4);
}
