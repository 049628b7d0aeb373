#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "aslperf/core.hpp"

namespace aslperf::tensor {

/// (batch, channel, height, width) array, row-major with width fastest.
template <typename T>
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_, T fill = T{})
        : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

    [[nodiscard]] std::array<int, 4> shape() const noexcept { return {n, c, h, w}; }
    [[nodiscard]] std::size_t size() const noexcept { return data.size(); }
    [[nodiscard]] std::size_t plane_size() const noexcept { return static_cast<std::size_t>(h) * w; }
    [[nodiscard]] std::size_t sample_size() const noexcept { return c * plane_size(); }

    [[nodiscard]] std::size_t offset(int in, int ic, int i, int j) const noexcept {
        return ((static_cast<std::size_t>(in) * c + ic) * h + i) * w + j;
    }
    T& at(int in, int ic, int i, int j) noexcept { return data[offset(in, ic, i, j)]; }
    const T& at(int in, int ic, int i, int j) const noexcept { return data[offset(in, ic, i, j)]; }

    std::span<T> sample(int in) noexcept {
        return std::span<T>(data).subspan(in * sample_size(), sample_size());
    }
    std::span<const T> sample(int in) const noexcept {
        return std::span<const T>(data).subspan(in * sample_size(), sample_size());
    }
    std::span<T> plane(int in, int ic) noexcept {
        return std::span<T>(data).subspan(offset(in, ic, 0, 0), plane_size());
    }
    std::span<const T> plane(int in, int ic) const noexcept {
        return std::span<const T>(data).subspan(offset(in, ic, 0, 0), plane_size());
    }
};

inline constexpr int kKernel = 3;

/// 3x3 convolution, stride 1, zero "same" padding, with gradient buffers.
template <typename T>
struct ConvLayer {
    int c_out = 0;
    int c_in = 0;
    std::vector<T> weight;  ///< (c_out, c_in, 3, 3)
    std::vector<T> bias;    ///< (c_out)
    std::vector<T> grad_weight;
    std::vector<T> grad_bias;

    ConvLayer() = default;
    ConvLayer(int out, int in)
        : c_out(out), c_in(in),
          weight(static_cast<std::size_t>(out) * in * kKernel * kKernel),
          bias(out),
          grad_weight(weight.size()),
          grad_bias(out) {}

    [[nodiscard]] std::size_t parameter_count() const noexcept { return weight.size() + bias.size(); }
    void zero_grad();
    T& w(int o, int k, int di, int dj) noexcept { return weight[((o * c_in + k) * kKernel + di) * kKernel + dj]; }
    const T& w(int o, int k, int di, int dj) const noexcept {
        return weight[((o * c_in + k) * kKernel + di) * kKernel + dj];
    }
};

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvLayer<T>& layer);

/// Accumulates dW, db into the layer's gradient buffers and returns dx.
template <typename T>
Tensor4<T> conv2d_backward(const Tensor4<T>& x, ConvLayer<T>& layer, const Tensor4<T>& dy);

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& x);
/// Gradient is zero where x <= 0.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& dy);

template <typename T>
Tensor4<T> add_forward(const Tensor4<T>& a, const Tensor4<T>& b);
/// In-place a += b.
template <typename T>
void add_inplace(Tensor4<T>& a, const Tensor4<T>& b);

template <typename T>
Tensor4<T> concat_channels_forward(std::span<const Tensor4<T>> parts);
/// Splits dy along channels into pieces of the given channel counts.
template <typename T>
std::vector<Tensor4<T>> concat_channels_backward(const Tensor4<T>& dy, std::span<const int> channels);

/// Channels [first, first + count) of x.
template <typename T>
Tensor4<T> slice_channels(const Tensor4<T>& x, int first, int count);

template <typename T>
struct LossResult {
    double loss = 0.0;
    Tensor4<T> grad;  ///< dloss/dpred
};

/// Mean |pred - target| over elements where mask != 0 (all when mask is null).
/// `normalizer` > 0 overrides the element count in the mean, for losses split
/// across sub-batches.
template <typename T>
LossResult<T> mae_loss(const Tensor4<T>& pred, const Tensor4<T>& target, const Tensor4<T>* mask = nullptr,
                       double normalizer = 0.0);

template <typename T>
struct ParamRef {
    std::string name;
    std::vector<std::uint32_t> shape;
    std::span<T> value;
    std::span<T> grad;
};

template <typename T>
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lr = 1e-3;
    std::int64_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

/// One bias-corrected Adam update over every parameter tensor.
template <typename T>
void adam_step(std::span<const ParamRef<T>> params, AdamState<T>& state);

enum class LrMode {
    Successive,          ///< each drop multiplies the current rate
    RelativeToInitial,   ///< each drop sets rate = initial * factor
};

struct LrSchedule {
    double initial = 1e-3;
    std::vector<int> drop_epochs{60, 120};
    std::vector<double> drop_factors{0.1, 0.05};
    LrMode mode = LrMode::Successive;
    bool operator==(const LrSchedule&) const = default;
};

double lr_schedule(int epoch, const LrSchedule& schedule = {});

/// Named float32 tensor as stored in a checkpoint file.
struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> shape;
    std::vector<float> values;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian: "WDSR", u32 version, then per entry u32 name length, name,
/// u32 rank, u32 dims, f32 payload.
void write_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> entries);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

}  // namespace aslperf::tensor
