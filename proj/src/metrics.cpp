#include "aslperf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

namespace aslperf::metrics {

namespace {

void require_same_shape(ImageView a, ImageView b, const char* what) {
    if (a.width != b.width || a.height != b.height || a.data.size() != b.data.size())
        throw Error(std::string(what) + ": image shape mismatch");
    if (a.data.size() != static_cast<std::size_t>(a.width) * a.height)
        throw Error(std::string(what) + ": view size does not match width*height");
}

std::vector<double> gaussian_1d() {
    std::vector<double> g(kSsimWindow);
    const int half = kSsimWindow / 2;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - half;
        g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += g[i];
    }
    for (auto& v : g) v /= sum;
    return g;
}

// Valid-mode separable filtering: out is (w - 10) x (h - 10).
std::vector<double> filter_valid(const std::vector<double>& img, int w, int h, const std::vector<double>& g) {
    const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(ow) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) s += g[k] * img[static_cast<std::size_t>(y) * w + x + k];
            rows[static_cast<std::size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) s += g[k] * rows[static_cast<std::size_t>(y + k) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

}  // namespace

double psnr(ImageView pred, ImageView ref, double data_range) {
    require_same_shape(pred, ref, "psnr");
    if (!(data_range > 0.0)) throw Error("psnr: data_range must be > 0");
    double se = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double d = static_cast<double>(pred.data[i]) - static_cast<double>(ref.data[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(pred.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / mse);
}

std::vector<double> ssim_window() {
    const auto g = gaussian_1d();
    std::vector<double> w(kSsimWindow * kSsimWindow);
    for (int i = 0; i < kSsimWindow; ++i)
        for (int j = 0; j < kSsimWindow; ++j) w[i * kSsimWindow + j] = g[i] * g[j];
    return w;
}

double ssim(ImageView pred, ImageView ref, double data_range) {
    require_same_shape(pred, ref, "ssim");
    if (!(data_range > 0.0)) throw Error("ssim: data_range must be > 0");
    if (pred.width < kSsimWindow || pred.height < kSsimWindow) throw Error("ssim: image smaller than window");
    const int w = pred.width, h = pred.height;
    const std::size_t n = pred.data.size();
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = pred.data[i];
        y[i] = ref.data[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto g = gaussian_1d();
    const auto mx = filter_valid(x, w, h, g), my = filter_valid(y, w, h, g);
    const auto sxx = filter_valid(xx, w, h, g), syy = filter_valid(yy, w, h, g), sxy = filter_valid(xy, w, h, g);
    const double c1 = (kSsimK1 * data_range) * (kSsimK1 * data_range);
    const double c2 = (kSsimK2 * data_range) * (kSsimK2 * data_range);
    double sum = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cov = sxy[i] - mx[i] * my[i];
        sum += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return sum / static_cast<double>(mx.size());
}

double data_range_over(std::span<const VolumeF32* const> refs, std::span<const MaskVolume* const> masks,
                       features::SliceRange range) {
    if (refs.size() != masks.size()) throw Error("data_range_over: refs and masks differ in count");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t k = 0; k < refs.size(); ++k) {
        const auto& ref = *refs[k];
        const auto& mask = *masks[k];
        if (!ref.same_grid(mask)) throw Error("data_range_over: mask grid differs from reference");
        for (int z = range.first; z < range.first + range.count; ++z) {
            const auto r = ref.slice(z);
            const auto m = mask.slice(z);
            for (std::size_t i = 0; i < r.size(); ++i) {
                if (!m[i]) continue;
                lo = std::min(lo, static_cast<double>(r[i]));
                hi = std::max(hi, static_cast<double>(r[i]));
            }
        }
    }
    if (!(hi > lo)) throw Error("data_range_over: reference has no dynamic range inside the mask");
    return hi - lo;
}

void evaluate(const VolumeF32& pred, const VolumeF32& ref, features::SliceRange range, double data_range,
              const std::string& subject, const std::string& variant, features::Target target, EvalReport& report) {
    if (pred.dims() != ref.dims()) throw Error("evaluate: prediction and reference dims differ");
    if (range.first < 0 || range.first + range.count > ref.dims().nz) throw Error("evaluate: slice range outside volume");
    for (int z = range.first; z < range.first + range.count; ++z) {
        const auto p = slice_view(pred, z), r = slice_view(ref, z);
        SliceScore s{subject, z, target, variant, ssim(p, r, data_range), psnr(p, r, data_range), false};
        s.psnr_infinite = std::isinf(s.psnr);
        report.slices.push_back(std::move(s));
    }
}

void aggregate(EvalReport& report, double cbf_range, double att_range) {
    report.aggregates.clear();
    for (const auto& s : report.slices) {
        const bool seen = std::any_of(report.aggregates.begin(), report.aggregates.end(), [&](const Aggregate& a) {
            return a.variant == s.variant && a.target == s.target;
        });
        if (!seen) report.aggregates.push_back({s.variant, s.target});
    }
    for (auto& a : report.aggregates) {
        std::vector<double> ssims, psnrs;
        for (const auto& s : report.slices) {
            if (s.variant != a.variant || s.target != a.target) continue;
            ssims.push_back(s.ssim);
            if (s.psnr_infinite)
                ++a.psnr_infinite;
            else
                psnrs.push_back(s.psnr);
        }
        auto mean_sd = [](const std::vector<double>& v) -> std::pair<double, double> {
            if (v.empty()) return {0.0, 0.0};
            double m = 0.0;
            for (double x : v) m += x;
            m /= static_cast<double>(v.size());
            double ss = 0.0;
            for (double x : v) ss += (x - m) * (x - m);
            return {m, std::sqrt(ss / static_cast<double>(v.size()))};
        };
        a.count = ssims.size();
        std::tie(a.ssim_mean, a.ssim_std) = mean_sd(ssims);
        std::tie(a.psnr_mean, a.psnr_std) = mean_sd(psnrs);
        if (psnrs.empty() && a.psnr_infinite > 0) a.psnr_mean = std::numeric_limits<double>::infinity();
        a.data_range = a.target == features::Target::Cbf ? cbf_range : att_range;
    }
}

}  // namespace aslperf::metrics
