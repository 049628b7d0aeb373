#include <gtest/gtest.h>

#include <cmath>

#include "aslperf/features.hpp"
#include "aslperf/kinetic.hpp"
#include "aslperf/phantom.hpp"
#include "aslperf/random.hpp"
#include "aslperf/reffit.hpp"

using namespace aslperf;
using features::Target;
using features::Variant;

namespace {

const AcquisitionProtocol kProto = AcquisitionProtocol::hcp_a();

phantom::PhantomMaps small_maps() {
    phantom::PhantomSpec s;
    s.dims = {24, 24, 16};
    return phantom::make_phantom_maps(s);
}

// Two-PLD protocol with a single voxel whose repeats are set by hand.
PerfusionSeries tiny_series(std::vector<float> reps_long) {
    PerfusionSeries s;
    s.protocol.plds_s = {0.7, 1.7};
    s.protocol.repeats = {2, static_cast<int>(reps_long.size())};
    const Dims d{1, 1, 1};
    s.mask = MaskVolume(d, {1, 1, 1}, UnitTag::Dimensionless, std::uint8_t{1});
    s.m0 = {VolumeF32(d, {1, 1, 1}, UnitTag::M0Arb, 1.0f)};
    s.pwi.resize(2);
    s.pwi[0] = {VolumeF32(d, {1, 1, 1}, UnitTag::PwiArb, 1.0f), VolumeF32(d, {1, 1, 1}, UnitTag::PwiArb, 1.0f)};
    for (float r : reps_long) s.pwi[1].push_back(VolumeF32(d, {1, 1, 1}, UnitTag::PwiArb, r));
    return s;
}

}  // namespace

TEST(Features, NamesAndChannelCounts) {
    EXPECT_EQ(features::variant_name(Variant::OnePld), "one-pld");
    EXPECT_EQ(features::variant_from_name("two-pld"), Variant::TwoPld);
    EXPECT_EQ(features::target_from_name("att"), Target::Att);
    EXPECT_FALSE(features::variant_from_name("three-pld").has_value());
    EXPECT_EQ(features::channel_count(Variant::OnePld), 2);
    EXPECT_EQ(features::channel_count(Variant::TwoPld), 3);
}

TEST(Features, DefaultSliceRange) {
    EXPECT_EQ(features::default_slice_range(60), (features::SliceRange{25, 20}));
    EXPECT_EQ(features::default_slice_range(20), (features::SliceRange{0, 20}));
    EXPECT_EQ(features::default_slice_range(16), (features::SliceRange{0, 16}));
    EXPECT_EQ(features::default_slice_range(30), (features::SliceRange{5, 20}));
}

TEST(MeanStd, HandComputedVoxel) {
    const auto s = tiny_series({1.0f, 3.0f});
    const auto [mean, sd] = features::mean_std_pwi(s, 1);
    EXPECT_FLOAT_EQ(mean[0], 2.0f);
    EXPECT_FLOAT_EQ(sd[0], 1.0f);
}

TEST(MeanStd, IdenticalRepeatsHaveZeroSd) {
    const auto s = tiny_series({2.5f, 2.5f, 2.5f});
    EXPECT_EQ(features::mean_std_pwi(s, 1).second[0], 0.0f);
}

TEST(MeanStd, SingleRepeatIsUndefined) {
    const auto s = tiny_series({2.5f});
    try {
        features::mean_std_pwi(s, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("std undefined"), std::string::npos);
    }
}

TEST(MeanStd, NoiselessPhantomMatchesKinetics) {
    const auto maps = small_maps();
    const auto series = phantom::simulate_series(maps, kProto, 0.0, 1);
    const auto [mean, sd] = features::mean_std_pwi(series, 3);
    for (std::size_t i = 0; i < mean.size(); ++i) {
        if (!series.mask[i]) {
            EXPECT_EQ(mean[i], 0.0f);
            continue;
        }
        const double s = static_cast<float>(kinetic::signal_at({maps.cbf[i], maps.att[i], maps.m0[i]}, kProto, 1.7));
        EXPECT_NEAR(mean[i], s / maps.m0[i], 1e-6 * std::abs(s / maps.m0[i]) + 1e-12);
        EXPECT_EQ(sd[i], 0.0f);
    }
}

TEST(BuildInput, ShapesAndOrdering) {
    const auto maps = small_maps();
    const auto series = phantom::simulate_series(maps, kProto, 0.2, 3);
    const auto one = features::build_input(series, Variant::OnePld, {}, {}, "s1");
    const auto two = features::build_input(series, Variant::TwoPld, {}, {}, "s1");
    ASSERT_EQ(one.size(), 16u);
    ASSERT_EQ(two.size(), 16u);
    EXPECT_EQ(one[0].channels.size(), 2u);
    EXPECT_EQ(two[0].channels.size(), 3u);
    EXPECT_EQ(one[3].slice_index, 3);
    EXPECT_EQ(one[3].subject_id, "s1");
    EXPECT_EQ(one[0].width, 24);
    // Long-PLD mean channel is shared by both variants.
    EXPECT_EQ(one[5].channels[0], two[5].channels[1]);
}

TEST(BuildInput, DelayChannelComposesWeightedDelay) {
    const auto maps = small_maps();
    const auto series = phantom::simulate_series(maps, kProto, 0.0, 1);
    const features::TargetScaling scaling;
    const auto chans = features::feature_volumes(series, Variant::TwoPld, scaling);
    int checked = 0;
    for (std::size_t i = 0; i < maps.labels.size(); ++i) {
        if (maps.labels[i] != static_cast<int>(phantom::Tissue::Gm) || !series.mask[i]) continue;
        const std::vector<double> means{chans[0][i], chans[1][i]};
        const auto wd = reffit::weighted_delay(means, std::vector<double>{0.7, 1.7});
        EXPECT_NEAR(chans[2][i], wd.seconds * scaling.att_scale, 1e-6);
        ++checked;
    }
    EXPECT_GT(checked, 100);
}

TEST(BuildInput, ZeroFlowGivesZeroChannels) {
    phantom::PhantomSpec s;
    s.dims = {24, 24, 16};
    s.gm.cbf = 0.0;
    s.wm.cbf = 0.0;
    const auto maps = phantom::make_phantom_maps(s);
    const auto series = phantom::simulate_series(maps, kProto, 0.0, 1);
    for (const auto& v : features::feature_volumes(series, Variant::TwoPld))
        for (float x : v.values()) EXPECT_EQ(x, 0.0f);
}

TEST(BuildInput, MissingPldIsAnError) {
    const auto maps = small_maps();
    auto proto = kProto;
    proto.plds_s = {0.2, 0.9, 1.2, 1.7, 2.2};
    const auto series = phantom::simulate_series(maps, proto, 0.0, 1);
    EXPECT_THROW(features::build_input(series, Variant::TwoPld), Error);
    EXPECT_NO_THROW(features::build_input(series, Variant::OnePld));
}

TEST(BuildInput, InvariantToJointIntensityScale) {
    const auto maps = small_maps();
    const auto series = phantom::simulate_series(maps, kProto, 0.2, 9);
    auto scaled = series;
    for (auto& stack : scaled.pwi)
        for (auto& v : stack)
            for (auto& x : v.data()) x *= 4.0f;
    for (auto& v : scaled.m0)
        for (auto& x : v.data()) x *= 4.0f;
    const auto a = features::feature_volumes(series, Variant::TwoPld);
    const auto b = features::feature_volumes(scaled, Variant::TwoPld);
    for (std::size_t c = 0; c < a.size(); ++c)
        for (std::size_t i = 0; i < a[c].size(); ++i)
            EXPECT_NEAR(b[c][i], a[c][i], 1e-6 * std::abs(a[c][i]) + 1e-12);
}

TEST(Scaling, ForwardAndInverse) {
    const features::TargetScaling s;
    VolumeF32 cbf({2, 1, 1}, {1, 1, 1}, UnitTag::CbfMlPer100gMin, std::vector<float>{150.0f, 75.0f});
    const auto sc = features::scale_target(cbf, Target::Cbf, s);
    EXPECT_FLOAT_EQ(sc[0], 1.0f);
    EXPECT_EQ(sc.unit(), UnitTag::Dimensionless);
    VolumeF32 att({1, 1, 1}, {1, 1, 1}, UnitTag::Seconds, std::vector<float>{1.5f});
    EXPECT_FLOAT_EQ(features::scale_target(att, Target::Att, s)[0], 0.5f);
    EXPECT_THROW(features::scale_target(att, Target::Cbf, s), Error);
}

TEST(Scaling, RoundTripWithinOneUlp) {
    RandomStream r(5, {});
    VolumeF32 v({16, 16, 4}, {1, 1, 1}, UnitTag::Seconds);
    for (auto& x : v.data()) x = static_cast<float>(3.0 * r.uniform());
    const features::TargetScaling s;
    const auto back = features::unscale_target(features::scale_target(v, Target::Att, s), Target::Att, s);
    EXPECT_EQ(back.unit(), UnitTag::Seconds);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const float a = v[i], b = back[i];
        EXPECT_LE(std::abs(a - b), std::nextafter(std::abs(a), INFINITY) - std::abs(a)) << i;
    }
}
