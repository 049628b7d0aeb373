#include "aslperf/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace aslperf::tensor {

static_assert(std::endian::native == std::endian::little, "checkpoint and NIfTI I/O assume a little-endian host");

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
void require_same_shape(const Tensor4<T>& a, const Tensor4<T>& b, const char* what) {
    if (a.shape() != b.shape()) throw Error(std::string(what) + ": shape mismatch");
}

// cols(r, i*w + j) = x(k, i + di - 1, j + dj - 1), r = (k*3 + di)*3 + dj, zero outside.
template <typename T>
void im2col(std::span<const T> x, int c, int h, int w, std::vector<T>& cols) {
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    cols.assign(static_cast<std::size_t>(c) * kKernel * kKernel * hw, T{});
    for (int k = 0; k < c; ++k) {
        const T* src = x.data() + k * hw;
        for (int di = 0; di < kKernel; ++di) {
            for (int dj = 0; dj < kKernel; ++dj) {
                T* row = cols.data() + ((k * kKernel + di) * kKernel + dj) * hw;
                const int j0 = std::max(0, 1 - dj);
                const int j1 = std::min(w, w + 1 - dj);
                for (int i = 0; i < h; ++i) {
                    const int si = i + di - 1;
                    if (si < 0 || si >= h) continue;
                    const T* s = src + static_cast<std::size_t>(si) * w + (dj - 1);
                    T* d = row + static_cast<std::size_t>(i) * w;
                    for (int j = j0; j < j1; ++j) d[j] = s[j];
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const std::vector<T>& cols, int c, int h, int w, std::span<T> dx) {
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int k = 0; k < c; ++k) {
        T* dst = dx.data() + k * hw;
        for (int di = 0; di < kKernel; ++di) {
            for (int dj = 0; dj < kKernel; ++dj) {
                const T* row = cols.data() + ((k * kKernel + di) * kKernel + dj) * hw;
                const int j0 = std::max(0, 1 - dj);
                const int j1 = std::min(w, w + 1 - dj);
                for (int i = 0; i < h; ++i) {
                    const int si = i + di - 1;
                    if (si < 0 || si >= h) continue;
                    T* d = dst + static_cast<std::size_t>(si) * w + (dj - 1);
                    const T* s = row + static_cast<std::size_t>(i) * w;
                    for (int j = j0; j < j1; ++j) d[j] += s[j];
                }
            }
        }
    }
}

}  // namespace

template <typename T>
void ConvLayer<T>::zero_grad() {
    std::fill(grad_weight.begin(), grad_weight.end(), T{});
    std::fill(grad_bias.begin(), grad_bias.end(), T{});
}

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvLayer<T>& layer) {
    if (x.c != layer.c_in) throw Error("conv2d_forward: channel mismatch");
    Tensor4<T> y(x.n, layer.c_out, x.h, x.w);
    const Eigen::Index k = static_cast<Eigen::Index>(layer.c_in) * kKernel * kKernel;
    const Eigen::Index hw = static_cast<Eigen::Index>(x.plane_size());
    Eigen::Map<const RowMat<T>> weight(layer.weight.data(), layer.c_out, k);
    Eigen::Map<const ColVec<T>> bias(layer.bias.data(), layer.c_out);
    std::vector<T> cols;
    for (int s = 0; s < x.n; ++s) {
        im2col(x.sample(s), x.c, x.h, x.w, cols);
        Eigen::Map<const RowMat<T>> c(cols.data(), k, hw);
        Eigen::Map<RowMat<T>> out(y.sample(s).data(), layer.c_out, hw);
        out.noalias() = weight * c;
        out.colwise() += bias;
    }
    return y;
}

template <typename T>
Tensor4<T> conv2d_backward(const Tensor4<T>& x, ConvLayer<T>& layer, const Tensor4<T>& dy) {
    if (x.c != layer.c_in) throw Error("conv2d_backward: channel mismatch");
    if (dy.n != x.n || dy.c != layer.c_out || dy.h != x.h || dy.w != x.w)
        throw Error("conv2d_backward: shape mismatch");
    Tensor4<T> dx(x.n, x.c, x.h, x.w);
    const Eigen::Index k = static_cast<Eigen::Index>(layer.c_in) * kKernel * kKernel;
    const Eigen::Index hw = static_cast<Eigen::Index>(x.plane_size());
    Eigen::Map<const RowMat<T>> weight(layer.weight.data(), layer.c_out, k);
    Eigen::Map<RowMat<T>> grad_w(layer.grad_weight.data(), layer.c_out, k);
    Eigen::Map<ColVec<T>> grad_b(layer.grad_bias.data(), layer.c_out);
    std::vector<T> cols, dcols(static_cast<std::size_t>(k * hw));
    for (int s = 0; s < x.n; ++s) {
        im2col(x.sample(s), x.c, x.h, x.w, cols);
        Eigen::Map<const RowMat<T>> c(cols.data(), k, hw);
        Eigen::Map<const RowMat<T>> g(dy.sample(s).data(), layer.c_out, hw);
        grad_w.noalias() += g * c.transpose();
        // Fixed summation order: vectorized reductions depend on buffer alignment.
        const T* gp = dy.sample(s).data();
        for (int o = 0; o < layer.c_out; ++o) {
            T acc = 0;
            for (Eigen::Index i = 0; i < hw; ++i) acc += gp[o * hw + i];
            grad_b[o] += acc;
        }
        Eigen::Map<RowMat<T>> dc(dcols.data(), k, hw);
        dc.noalias() = weight.transpose() * g;
        col2im_add(dcols, x.c, x.h, x.w, dx.sample(s));
    }
    return dx;
}

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& x) {
    Tensor4<T> y = x;
    for (auto& v : y.data) v = v > T{} ? v : T{};
    return y;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& dy) {
    require_same_shape(x, dy, "relu_backward");
    Tensor4<T> dx(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) dx.data[i] = x.data[i] > T{} ? dy.data[i] : T{};
    return dx;
}

template <typename T>
Tensor4<T> add_forward(const Tensor4<T>& a, const Tensor4<T>& b) {
    Tensor4<T> y = a;
    add_inplace(y, b);
    return y;
}

template <typename T>
void add_inplace(Tensor4<T>& a, const Tensor4<T>& b) {
    require_same_shape(a, b, "add");
    for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

template <typename T>
Tensor4<T> concat_channels_forward(std::span<const Tensor4<T>> parts) {
    if (parts.empty()) throw Error("concat_channels: no inputs");
    const auto& first = parts.front();
    int channels = 0;
    for (const auto& p : parts) {
        if (p.n != first.n || p.h != first.h || p.w != first.w) throw Error("concat_channels: shape mismatch");
        channels += p.c;
    }
    Tensor4<T> y(first.n, channels, first.h, first.w);
    for (int s = 0; s < first.n; ++s) {
        auto dst = y.sample(s).begin();
        for (const auto& p : parts) {
            const auto src = p.sample(s);
            dst = std::copy(src.begin(), src.end(), dst);
        }
    }
    return y;
}

template <typename T>
std::vector<Tensor4<T>> concat_channels_backward(const Tensor4<T>& dy, std::span<const int> channels) {
    int total = 0;
    for (int c : channels) total += c;
    if (total != dy.c) throw Error("concat_channels_backward: channel counts do not sum to dy channels");
    std::vector<Tensor4<T>> out;
    int first = 0;
    for (int c : channels) {
        out.push_back(slice_channels(dy, first, c));
        first += c;
    }
    return out;
}

template <typename T>
Tensor4<T> slice_channels(const Tensor4<T>& x, int first, int count) {
    if (first < 0 || count < 0 || first + count > x.c) throw Error("slice_channels: range outside tensor");
    Tensor4<T> y(x.n, count, x.h, x.w);
    for (int s = 0; s < x.n; ++s) {
        const auto src = x.sample(s).subspan(first * x.plane_size(), count * x.plane_size());
        std::copy(src.begin(), src.end(), y.sample(s).begin());
    }
    return y;
}

template <typename T>
LossResult<T> mae_loss(const Tensor4<T>& pred, const Tensor4<T>& target, const Tensor4<T>* mask, double normalizer) {
    require_same_shape(pred, target, "mae_loss");
    if (mask) require_same_shape(pred, *mask, "mae_loss mask");
    std::size_t included = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (!mask || mask->data[i] != T{}) ++included;
    const double denom = normalizer > 0.0 ? normalizer : static_cast<double>(included);
    LossResult<T> out{0.0, Tensor4<T>(pred.n, pred.c, pred.h, pred.w)};
    if (denom == 0.0) return out;
    const T step = static_cast<T>(1.0 / denom);
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask && mask->data[i] == T{}) continue;
        const double diff = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
        sum += std::abs(diff);
        out.grad.data[i] = diff > 0.0 ? step : (diff < 0.0 ? -step : T{});
    }
    out.loss = sum / denom;
    return out;
}

template <typename T>
void adam_step(std::span<const ParamRef<T>> params, AdamState<T>& state) {
    if (state.m.size() != params.size()) {
        state.m.clear();
        state.v.clear();
        for (const auto& p : params) {
            state.m.emplace_back(p.value.size(), T{});
            state.v.emplace_back(p.value.size(), T{});
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& p = params[k];
        if (p.grad.size() != p.value.size() || state.m[k].size() != p.value.size())
            throw Error("adam_step: parameter/gradient shape mismatch for " + p.name);
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double update = state.lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps);
            p.value[i] = static_cast<T>(p.value[i] - update);
        }
    }
}

double lr_schedule(int epoch, const LrSchedule& schedule) {
    if (schedule.drop_epochs.size() != schedule.drop_factors.size())
        throw Error("lr_schedule: drop_epochs and drop_factors differ in length");
    double lr = schedule.initial;
    for (std::size_t i = 0; i < schedule.drop_epochs.size(); ++i) {
        if (epoch < schedule.drop_epochs[i]) break;
        lr = schedule.mode == LrMode::Successive ? lr * schedule.drop_factors[i]
                                                 : schedule.initial * schedule.drop_factors[i];
    }
    return lr;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

bool get_u32(std::istream& is, std::uint32_t& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return is.gcount() == sizeof v;
}

constexpr char kMagic[4] = {'W', 'D', 'S', 'R'};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, 4);
    put_u32(os, kCheckpointVersion);
    for (const auto& e : entries) {
        std::size_t count = 1;
        for (auto d : e.shape) count *= d;
        if (count != e.values.size()) throw Error("checkpoint entry " + e.name + ": shape does not match payload");
        put_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put_u32(os, static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) put_u32(os, d);
        os.write(reinterpret_cast<const char*>(e.values.data()),
                 static_cast<std::streamsize>(e.values.size() * sizeof(float)));
    }
    if (!os) throw Error("failed writing checkpoint: " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint: " + path.string());
    char magic[4] = {};
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) throw Error("checkpoint: bad magic");
    std::uint32_t version = 0;
    if (!get_u32(is, version)) throw Error("checkpoint: truncated header");
    if (version != kCheckpointVersion) throw Error("checkpoint: unsupported version " + std::to_string(version));
    std::vector<NamedTensor> out;
    std::uint32_t name_len = 0;
    while (get_u32(is, name_len)) {
        if (name_len > 4096) throw Error("checkpoint: corrupt entry name length");
        NamedTensor e;
        e.name.resize(name_len);
        is.read(e.name.data(), name_len);
        std::uint32_t rank = 0;
        if (static_cast<std::uint32_t>(is.gcount()) != name_len || !get_u32(is, rank) || rank > 8)
            throw Error("checkpoint: truncated entry");
        std::size_t count = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            std::uint32_t d = 0;
            if (!get_u32(is, d)) throw Error("checkpoint: truncated entry");
            e.shape.push_back(d);
            count *= d;
        }
        e.values.resize(count);
        is.read(reinterpret_cast<char*>(e.values.data()), static_cast<std::streamsize>(count * sizeof(float)));
        if (static_cast<std::size_t>(is.gcount()) != count * sizeof(float)) throw Error("checkpoint: truncated payload");
        out.push_back(std::move(e));
    }
    return out;
}

#define ASLPERF_INSTANTIATE(T)                                                                              \
    template struct ConvLayer<T>;                                                                            \
    template Tensor4<T> conv2d_forward(const Tensor4<T>&, const ConvLayer<T>&);                             \
    template Tensor4<T> conv2d_backward(const Tensor4<T>&, ConvLayer<T>&, const Tensor4<T>&);               \
    template Tensor4<T> relu_forward(const Tensor4<T>&);                                                    \
    template Tensor4<T> relu_backward(const Tensor4<T>&, const Tensor4<T>&);                                \
    template Tensor4<T> add_forward(const Tensor4<T>&, const Tensor4<T>&);                                  \
    template void add_inplace(Tensor4<T>&, const Tensor4<T>&);                                              \
    template Tensor4<T> concat_channels_forward(std::span<const Tensor4<T>>);                               \
    template std::vector<Tensor4<T>> concat_channels_backward(const Tensor4<T>&, std::span<const int>);     \
    template Tensor4<T> slice_channels(const Tensor4<T>&, int, int);                                        \
    template LossResult<T> mae_loss(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>*, double);       \
    template void adam_step(std::span<const ParamRef<T>>, AdamState<T>&);

ASLPERF_INSTANTIATE(float)
ASLPERF_INSTANTIATE(double)

#undef ASLPERF_INSTANTIATE

}  // namespace aslperf::tensor
