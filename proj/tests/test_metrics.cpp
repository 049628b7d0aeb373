#include <gtest/gtest.h>

#include <cmath>

#include "aslperf/metrics.hpp"
#include "aslperf/random.hpp"

using namespace aslperf;
using namespace aslperf::metrics;

namespace {

struct Image {
    std::vector<float> data;
    int w = 0, h = 0;
    [[nodiscard]] ImageView view() const { return {data, w, h}; }
};

// Values on a 1/4096 grid so that offsets by 0.5 or 0.25 are exact in float.
Image random_image(int w, int h, RandomStream& r, double scale = 1.0) {
    Image im{std::vector<float>(static_cast<std::size_t>(w) * h), w, h};
    for (auto& v : im.data) v = static_cast<float>(std::floor(scale * r.uniform() * 4096.0) / 4096.0);
    return im;
}

// Direct per-window SSIM with the full 2D window, averaged over valid windows.
double brute_force_ssim(const Image& a, const Image& b, double range) {
    const auto win = ssim_window();
    const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
    double total = 0.0;
    int count = 0;
    for (int y0 = 0; y0 + 11 <= a.h; ++y0)
        for (int x0 = 0; x0 + 11 <= a.w; ++x0) {
            double mx = 0, my = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    const std::size_t k = static_cast<std::size_t>(y0 + i) * a.w + x0 + j;
                    mx += win[i * 11 + j] * a.data[k];
                    my += win[i * 11 + j] * b.data[k];
                }
            double vx = 0, vy = 0, cxy = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    const std::size_t k = static_cast<std::size_t>(y0 + i) * a.w + x0 + j;
                    const double dx = a.data[k] - mx, dy = b.data[k] - my;
                    vx += win[i * 11 + j] * dx * dx;
                    vy += win[i * 11 + j] * dy * dy;
                    cxy += win[i * 11 + j] * dx * dy;
                }
            total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    return total / count;
}

}  // namespace

TEST(Psnr, AnalyticCases) {
    RandomStream r(1, {});
    auto ref = random_image(16, 16, r);
    Image pred = ref;
    for (auto& v : pred.data) v += 0.5f;
    // MSE 0.25 at range 5: 10 log10(100).
    EXPECT_NEAR(psnr(pred.view(), ref.view(), 5.0), 20.0, 1e-9);
    EXPECT_NEAR(psnr(pred.view(), ref.view(), 10.0) - psnr(pred.view(), ref.view(), 5.0), 20.0 * std::log10(2.0),
                1e-9);
    EXPECT_NEAR(20.0 * std::log10(2.0), 6.0206, 1e-4);
    EXPECT_TRUE(std::isinf(psnr(ref.view(), ref.view(), 1.0)));
    EXPECT_THROW(psnr(ref.view(), ref.view(), 0.0), Error);
}

TEST(Ssim, WindowIsNormalizedGaussian) {
    const auto w = ssim_window();
    ASSERT_EQ(w.size(), 121u);
    double s = 0.0;
    for (double v : w) s += v;
    EXPECT_NEAR(s, 1.0, 1e-15);
    EXPECT_NEAR(w[5 * 11 + 6] / w[5 * 11 + 5], std::exp(-1.0 / (2 * 1.5 * 1.5)), 1e-14);
}

TEST(Ssim, IdenticalIsOneAndNegatedIsNegative) {
    RandomStream r(2, {});
    const auto a = random_image(20, 18, r);
    EXPECT_NEAR(ssim(a.view(), a.view(), 1.0), 1.0, 1e-12);
    Image neg = a;
    for (auto& v : neg.data) v = 1.0f - v;
    EXPECT_LT(ssim(a.view(), neg.view(), 1.0), 0.0);
}

TEST(Ssim, MatchesBruteForceOnRandomPairs) {
    RandomStream r(3, {});
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        const auto a = random_image(16, 16, r, 2.0);
        auto b = a;
        for (auto& v : b.data) v += static_cast<float>(0.5 * (r.uniform() - 0.5));
        worst = std::max(worst, std::abs(ssim(a.view(), b.view(), 2.0) - brute_force_ssim(a, b, 2.0)));
    }
    EXPECT_LT(worst, 1e-9);
}

// Reference value from an established SSIM implementation (gaussian weights,
// sigma 1.5, sample covariance off) on the same float32 images.
TEST(Ssim, MatchesExternalReference) {
    const int h = 20, w = 24;
    Image x{std::vector<float>(h * w), w, h}, y = x;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double v = std::sin(0.7 * i) + std::cos(0.3 * j);
            x.data[i * w + j] = static_cast<float>(v);
            y.data[i * w + j] = static_cast<float>(v + 0.1 * std::cos(0.05 * i * j));
        }
    EXPECT_NEAR(ssim(x.view(), y.view(), 4.0), 0.9717912503846029, 1e-9);
}

TEST(Ssim, Symmetric) {
    RandomStream r(4, {});
    const auto a = random_image(16, 16, r), b = random_image(16, 16, r);
    EXPECT_NEAR(ssim(a.view(), b.view(), 1.0), ssim(b.view(), a.view(), 1.0), 1e-14);
}

TEST(Ssim, DecreasesWithNoise) {
    RandomStream r(5, {});
    const auto a = random_image(32, 32, r);
    double prev = 1.0;
    for (double amp : {0.05, 0.2, 0.6}) {
        RandomStream n(6, {});
        Image b = a;
        for (auto& v : b.data) v += static_cast<float>(amp * (n.uniform() - 0.5));
        const double s = ssim(a.view(), b.view(), 1.0);
        EXPECT_LT(s, prev);
        prev = s;
    }
}

TEST(Ssim, RejectsSmallOrMismatched) {
    RandomStream r(7, {});
    const auto a = random_image(10, 16, r), b = random_image(16, 16, r), c = random_image(16, 12, r);
    EXPECT_THROW(ssim(a.view(), a.view(), 1.0), Error);
    EXPECT_THROW(ssim(b.view(), c.view(), 1.0), Error);
}

TEST(Evaluate, PerSliceScoresAndAggregate) {
    const Dims d{12, 12, 4};
    VolumeF32 ref(d, {1, 1, 1}, UnitTag::Seconds), pred(d, {1, 1, 1}, UnitTag::Seconds);
    RandomStream r(8, {});
    for (std::size_t i = 0; i < ref.size(); ++i) {
        ref[i] = static_cast<float>(std::floor(r.uniform() * 4096.0) / 4096.0);
        pred[i] = ref[i];
    }
    for (std::size_t i = 2 * 144; i < 3 * 144; ++i) pred[i] += 0.25f;
    EvalReport report;
    evaluate(pred, ref, {1, 2}, 1.0, "sub-000", "two-pld", features::Target::Att, report);
    evaluate(pred, ref, {1, 2}, 1.0, "sub-000", "one-pld", features::Target::Att, report);
    ASSERT_EQ(report.slices.size(), 4u);
    EXPECT_EQ(report.slices[0].slice, 1);
    EXPECT_TRUE(report.slices[0].psnr_infinite);
    EXPECT_NEAR(report.slices[1].psnr, 10.0 * std::log10(16.0), 1e-9);
    aggregate(report, 9.0, 1.0);
    ASSERT_EQ(report.aggregates.size(), 2u);
    const auto& a = report.aggregates[0];
    EXPECT_EQ(a.variant, "two-pld");
    EXPECT_EQ(a.count, 2u);
    EXPECT_EQ(a.psnr_infinite, 1u);
    EXPECT_NEAR(a.psnr_mean, 10.0 * std::log10(16.0), 1e-9);
    EXPECT_EQ(a.psnr_std, 0.0);
    EXPECT_NEAR(a.ssim_mean, (1.0 + report.slices[1].ssim) / 2.0, 1e-15);
    EXPECT_NEAR(a.ssim_std, (1.0 - report.slices[1].ssim) / 2.0, 1e-15);
    EXPECT_EQ(a.data_range, 1.0);
    EXPECT_THROW(evaluate(pred, ref, {3, 2}, 1.0, "s", "v", features::Target::Att, report), Error);
}

TEST(Evaluate, DataRangeUsesMaskedSlicesOnly) {
    const Dims d{4, 4, 3};
    VolumeF32 ref(d, {1, 1, 1}, UnitTag::CbfMlPer100gMin, 10.0f);
    MaskVolume mask(d, {1, 1, 1}, UnitTag::Dimensionless, std::uint8_t{1});
    ref[0] = 100.0f;             // slice 0, outside the range
    ref[16 + 5] = 30.0f;         // slice 1
    ref[16 + 6] = -50.0f;        // slice 1, masked out
    mask[16 + 6] = 0;
    ref[32 + 1] = 2.0f;          // slice 2
    const VolumeF32* refs[] = {&ref};
    const MaskVolume* masks[] = {&mask};
    EXPECT_DOUBLE_EQ(data_range_over(refs, masks, {1, 2}), 28.0);
    const VolumeF32 flat(d, {1, 1, 1}, UnitTag::CbfMlPer100gMin, 1.0f);
    const VolumeF32* flats[] = {&flat};
    EXPECT_THROW(data_range_over(flats, masks, {0, 3}), Error);
}
