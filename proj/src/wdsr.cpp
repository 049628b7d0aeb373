#include "aslperf/wdsr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>

#include "aslperf/parallel.hpp"
#include "aslperf/random.hpp"

namespace aslperf::wdsr {

using tensor::conv2d_backward;
using tensor::conv2d_forward;

void validate_config(const WdsrConfig& cfg) {
    if (cfg.n_blocks < 1) throw Error("wdsr: n_blocks must be >= 1");
    if (cfg.n_filters < 1 || cfg.expansion < 1) throw Error("wdsr: n_filters and expansion must be >= 1");
    if (cfg.in_channels < 1) throw Error("wdsr: in_channels must be >= 1");
    if (cfg.out_channels != 1) throw Error("wdsr: out_channels must be 1");
    if (cfg.batch < 1 || cfg.epochs < 1) throw Error("wdsr: batch and epochs must be >= 1");
    if (!(cfg.lr.initial > 0.0)) throw Error("wdsr: learning rate must be > 0");
    if (cfg.lr.drop_epochs.size() != cfg.lr.drop_factors.size())
        throw Error("wdsr: lr drop_epochs and drop_factors differ in length");
}

std::size_t parameter_count(const WdsrConfig& cfg) {
    const std::size_t f = cfg.n_filters, c = cfg.in_channels, wide = f * cfg.expansion, k = 9;
    const std::size_t inputs = c * (f * k + f);
    const std::size_t fusion = f * c * f * k + f;
    const std::size_t block = (wide * f * k + wide) + (f * wide * k + f);
    const std::size_t output = cfg.out_channels * f * k + cfg.out_channels;
    return inputs + fusion + cfg.n_blocks * block + output;
}

template <typename T>
std::size_t WdsrModel<T>::parameter_count() const {
    std::size_t n = fusion.parameter_count() + output.parameter_count();
    for (const auto& l : input_convs) n += l.parameter_count();
    for (const auto& b : blocks) n += b.expand.parameter_count() + b.contract.parameter_count();
    return n;
}

namespace {

template <typename T, typename Fn>
void for_each_layer(WdsrModel<T>& m, Fn&& fn) {
    for (std::size_t c = 0; c < m.input_convs.size(); ++c) fn("input." + std::to_string(c), m.input_convs[c]);
    fn(std::string("fusion"), m.fusion);
    for (std::size_t b = 0; b < m.blocks.size(); ++b) {
        fn("block." + std::to_string(b) + ".expand", m.blocks[b].expand);
        fn("block." + std::to_string(b) + ".contract", m.blocks[b].contract);
    }
    fn(std::string("output"), m.output);
}

template <typename T, typename Fn>
void for_each_layer(const WdsrModel<T>& m, Fn&& fn) {
    for_each_layer(const_cast<WdsrModel<T>&>(m), [&](const std::string& name, ConvLayer<T>& l) {
        fn(name, static_cast<const ConvLayer<T>&>(l));
    });
}

template <typename T>
std::vector<std::uint32_t> weight_shape(const ConvLayer<T>& l) {
    return {static_cast<std::uint32_t>(l.c_out), static_cast<std::uint32_t>(l.c_in), tensor::kKernel,
            tensor::kKernel};
}

}  // namespace

template <typename T>
std::vector<tensor::ParamRef<T>> WdsrModel<T>::params() {
    std::vector<tensor::ParamRef<T>> out;
    for_each_layer(*this, [&](const std::string& name, ConvLayer<T>& l) {
        out.push_back({name + ".weight", weight_shape(l), l.weight, l.grad_weight});
        out.push_back({name + ".bias", {static_cast<std::uint32_t>(l.c_out)}, l.bias, l.grad_bias});
    });
    return out;
}

template <typename T>
void WdsrModel<T>::zero_grad() {
    for_each_layer(*this, [](const std::string&, ConvLayer<T>& l) { l.zero_grad(); });
}

template <typename T>
template <typename U>
WdsrModel<U> WdsrModel<T>::cast() const {
    WdsrModel<U> out = make_zero_model<U>(config);
    auto src = const_cast<WdsrModel<T>&>(*this).params();
    auto dst = out.params();
    for (std::size_t k = 0; k < src.size(); ++k)
        std::transform(src[k].value.begin(), src[k].value.end(), dst[k].value.begin(),
                       [](T v) { return static_cast<U>(v); });
    return out;
}

template <typename T>
WdsrModel<T> make_zero_model(const WdsrConfig& cfg) {
    validate_config(cfg);
    WdsrModel<T> m;
    m.config = cfg;
    const int f = cfg.n_filters;
    for (int c = 0; c < cfg.in_channels; ++c) m.input_convs.emplace_back(f, 1);
    m.fusion = ConvLayer<T>(f, f * cfg.in_channels);
    for (int b = 0; b < cfg.n_blocks; ++b)
        m.blocks.push_back({ConvLayer<T>(f * cfg.expansion, f), ConvLayer<T>(f, f * cfg.expansion)});
    m.output = ConvLayer<T>(cfg.out_channels, f);
    return m;
}

template <typename T>
WdsrModel<T> make_model(const WdsrConfig& cfg) {
    WdsrModel<T> m = make_zero_model<T>(cfg);
    std::uint64_t layer_id = 0;
    for_each_layer(m, [&](const std::string&, ConvLayer<T>& l) {
        RandomStream rng(cfg.seed, {0x1417ULL, layer_id++});
        const double sd = std::sqrt(2.0 / (static_cast<double>(l.c_in) * tensor::kKernel * tensor::kKernel));
        for (auto& w : l.weight) w = static_cast<T>(sd * rng.normal());
    });
    return m;
}

template <typename T>
Tensor4<T> forward(const WdsrModel<T>& model, const Tensor4<T>& x, ForwardCache<T>* cache) {
    if (x.c != model.config.in_channels) throw Error("wdsr forward: channel mismatch");
    std::vector<Tensor4<T>> branches;
    std::vector<Tensor4<T>> inputs;
    for (int c = 0; c < x.c; ++c) {
        inputs.push_back(tensor::slice_channels(x, c, 1));
        branches.push_back(conv2d_forward(inputs.back(), model.input_convs[c]));
    }
    Tensor4<T> concat = tensor::concat_channels_forward<T>(branches);
    Tensor4<T> s = conv2d_forward(concat, model.fusion);
    Tensor4<T> y = s;
    if (cache) {
        cache->block_inputs.clear();
        cache->block_expanded.clear();
        cache->block_activated.clear();
    }
    for (const auto& block : model.blocks) {
        Tensor4<T> e = conv2d_forward(y, block.expand);
        Tensor4<T> r = tensor::relu_forward(e);
        Tensor4<T> k = conv2d_forward(r, block.contract);
        if (cache) {
            cache->block_inputs.push_back(y);
            cache->block_expanded.push_back(std::move(e));
            cache->block_activated.push_back(std::move(r));
        }
        tensor::add_inplace(y, k);
    }
    tensor::add_inplace(y, s);
    Tensor4<T> out = conv2d_forward(y, model.output);
    if (cache) {
        cache->channel_inputs = std::move(inputs);
        cache->concat = std::move(concat);
        cache->fusion_out = std::move(s);
        cache->skip_sum = std::move(y);
    }
    return out;
}

template <typename T>
void backward(WdsrModel<T>& model, const ForwardCache<T>& cache, const Tensor4<T>& dout) {
    Tensor4<T> dy = conv2d_backward(cache.skip_sum, model.output, dout);
    Tensor4<T> ds = dy;
    for (int b = static_cast<int>(model.blocks.size()) - 1; b >= 0; --b) {
        auto& block = model.blocks[b];
        const Tensor4<T> dr = conv2d_backward(cache.block_activated[b], block.contract, dy);
        const Tensor4<T> de = tensor::relu_backward(cache.block_expanded[b], dr);
        tensor::add_inplace(dy, conv2d_backward(cache.block_inputs[b], block.expand, de));
    }
    tensor::add_inplace(ds, dy);
    const Tensor4<T> dconcat = conv2d_backward(cache.concat, model.fusion, ds);
    const std::vector<int> widths(model.input_convs.size(), model.config.n_filters);
    const auto dbranches = tensor::concat_channels_backward<T>(dconcat, widths);
    for (std::size_t c = 0; c < model.input_convs.size(); ++c)
        conv2d_backward(cache.channel_inputs[c], model.input_convs[c], dbranches[c]);
}

void Dataset::add(const features::ModelInput& in, std::span<const float> target) {
    const int c = static_cast<int>(in.channels.size());
    if (examples.empty() && channels == 0) {
        channels = c;
        height = in.height;
        width = in.width;
    }
    if (c != channels || in.height != height || in.width != width)
        throw Error("dataset: example shape differs from the dataset");
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    if (target.size() != plane) throw Error("dataset: target shape does not match input");
    Example ex;
    ex.input.reserve(plane * c);
    for (const auto& ch : in.channels) ex.input.insert(ex.input.end(), ch.begin(), ch.end());
    ex.target.assign(target.begin(), target.end());
    examples.push_back(std::move(ex));
}

namespace {

void gather(const Dataset& data, std::span<const std::size_t> idx, Tensor4<float>& x, Tensor4<float>& t) {
    const int n = static_cast<int>(idx.size());
    x = Tensor4<float>(n, data.channels, data.height, data.width);
    t = Tensor4<float>(n, 1, data.height, data.width);
    for (int s = 0; s < n; ++s) {
        const auto& ex = data.examples[idx[s]];
        std::copy(ex.input.begin(), ex.input.end(), x.sample(s).begin());
        std::copy(ex.target.begin(), ex.target.end(), t.sample(s).begin());
    }
}

void copy_weights(const WdsrModel<float>& from, WdsrModel<float>& to) {
    auto src = const_cast<WdsrModel<float>&>(from).params();
    auto dst = to.params();
    for (std::size_t k = 0; k < src.size(); ++k) std::copy(src[k].value.begin(), src[k].value.end(), dst[k].value.begin());
}

void add_grads(const WdsrModel<float>& from, WdsrModel<float>& to) {
    auto src = const_cast<WdsrModel<float>&>(from).params();
    auto dst = to.params();
    for (std::size_t k = 0; k < src.size(); ++k)
        for (std::size_t i = 0; i < src[k].grad.size(); ++i) dst[k].grad[i] += src[k].grad[i];
}

// Forward/backward over idx in micro-batches; returns the summed loss share.
double accumulate_gradients(WdsrModel<float>& model, const Dataset& data, std::span<const std::size_t> idx,
                            int micro_batch, double normalizer) {
    double loss = 0.0;
    Tensor4<float> x, t;
    ForwardCache<float> cache;
    for (std::size_t begin = 0; begin < idx.size(); begin += micro_batch) {
        const std::size_t end = std::min(idx.size(), begin + static_cast<std::size_t>(micro_batch));
        gather(data, idx.subspan(begin, end - begin), x, t);
        const auto pred = forward(model, x, &cache);
        const auto l = tensor::mae_loss<float>(pred, t, nullptr, normalizer);
        loss += l.loss;
        backward(model, cache, l.grad);
    }
    return loss;
}

}  // namespace

double evaluate_mae(const WdsrModel<float>& model, const Dataset& data, int batch) {
    if (data.empty()) return 0.0;
    std::vector<std::size_t> all(data.examples.size());
    std::iota(all.begin(), all.end(), 0);
    const double total = static_cast<double>(all.size()) * data.height * data.width;
    double loss = 0.0;
    Tensor4<float> x, t;
    for (std::size_t begin = 0; begin < all.size(); begin += batch) {
        const std::size_t end = std::min(all.size(), begin + static_cast<std::size_t>(batch));
        gather(data, std::span<const std::size_t>(all).subspan(begin, end - begin), x, t);
        loss += tensor::mae_loss<float>(forward(model, x), t, nullptr, total).loss;
    }
    return loss;
}

TrainResult train(const WdsrConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                  const TrainOptions& options) {
    validate_config(cfg);
    if (train_set.empty()) throw Error("train: empty training split");
    if (train_set.channels != cfg.in_channels) throw Error("train: dataset channels do not match config");
    if (!val_set.empty() && (val_set.channels != train_set.channels || val_set.height != train_set.height ||
                             val_set.width != train_set.width))
        throw Error("train: validation shape differs from training shape");

    TrainResult result{make_model<float>(cfg), {}, -1};
    WdsrModel<float>& model = result.model;
    WdsrModel<float> best = model;
    double best_score = std::numeric_limits<double>::infinity();
    tensor::AdamState<float> adam;

    const int threads = std::max(1, options.threads);
    const int micro = std::max(1, options.micro_batch);
    std::vector<WdsrModel<float>> replicas(threads > 1 ? threads : 0, model);

    const std::size_t n = train_set.examples.size();
    const double plane = static_cast<double>(train_set.height) * train_set.width;
    std::vector<std::size_t> order(n);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        RandomStream rng(cfg.seed, {0x5eedULL, static_cast<std::uint64_t>(epoch)});
        shuffle_in_place(order, rng);
        adam.lr = tensor::lr_schedule(epoch, cfg.lr);

        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < n; begin += cfg.batch) {
            const std::size_t end = std::min(n, begin + static_cast<std::size_t>(cfg.batch));
            const auto batch = std::span<const std::size_t>(order).subspan(begin, end - begin);
            const double normalizer = static_cast<double>(batch.size()) * plane;
            model.zero_grad();
            double batch_loss = 0.0;
            if (threads == 1) {
                batch_loss = accumulate_gradients(model, train_set, batch, micro, normalizer);
            } else {
                std::vector<double> losses(threads, 0.0);
                for (auto& r : replicas) {
                    copy_weights(model, r);
                    r.zero_grad();
                }
                parallel_chunks(batch.size(), threads, [&](std::size_t chunk, std::size_t b, std::size_t e) {
                    losses[chunk] =
                        accumulate_gradients(replicas[chunk], train_set, batch.subspan(b, e - b), micro, normalizer);
                });
                for (int k = 0; k < threads; ++k) {
                    add_grads(replicas[k], model);
                    batch_loss += losses[k];
                }
            }
            auto params = model.params();
            tensor::adam_step<float>(params, adam);
            epoch_loss += batch_loss * static_cast<double>(batch.size());
        }

        EpochLog entry{epoch, adam.lr, epoch_loss / static_cast<double>(n), std::nullopt};
        if (!val_set.empty()) entry.val_mae = evaluate_mae(model, val_set);
        const double score = entry.val_mae.value_or(entry.train_mae);
        if (score < best_score) {
            best_score = score;
            best = model;
            result.best_epoch = epoch;
        }
        result.log.push_back(entry);
        if (options.on_epoch) options.on_epoch(entry);
        if (options.stop_below_mae > 0.0 && score < options.stop_below_mae) break;
    }
    result.model = std::move(best);
    result.model.zero_grad();
    return result;
}

std::vector<std::vector<float>> predict_slices(const WdsrModel<float>& model,
                                               const std::vector<features::ModelInput>& inputs, int batch) {
    std::vector<std::vector<float>> out;
    if (inputs.empty()) return out;
    Dataset data;
    for (const auto& in : inputs) {
        const std::vector<float> dummy(static_cast<std::size_t>(in.width) * in.height, 0.0f);
        data.add(in, dummy);
    }
    if (data.channels != model.config.in_channels) throw Error("predict: variant mismatch (channel count)");
    std::vector<std::size_t> all(inputs.size());
    std::iota(all.begin(), all.end(), 0);
    Tensor4<float> x, t;
    for (std::size_t begin = 0; begin < all.size(); begin += batch) {
        const std::size_t end = std::min(all.size(), begin + static_cast<std::size_t>(batch));
        gather(data, std::span<const std::size_t>(all).subspan(begin, end - begin), x, t);
        const auto y = forward(model, x);
        for (int s = 0; s < y.n; ++s) out.emplace_back(y.sample(s).begin(), y.sample(s).end());
    }
    return out;
}

Prediction predict_from_channels(const WdsrModel<float>& model, const std::vector<VolumeF32>& channels,
                                 features::Variant variant, features::Target target,
                                 const features::TargetScaling& scaling, features::SliceRange range) {
    if (model.config.in_channels != features::channel_count(variant))
        throw Error("predict: variant mismatch between model and features");
    const auto inputs = features::slice_inputs(channels, variant, range);
    const auto outputs = predict_slices(model, inputs);
    const auto& grid = channels.front();
    VolumeF32 scaled(grid.dims(), grid.voxel_mm(), UnitTag::Dimensionless);
    Prediction pred;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto dst = scaled.slice(inputs[k].slice_index);
        std::copy(outputs[k].begin(), outputs[k].end(), dst.begin());
        pred.predicted_slices.push_back(inputs[k].slice_index);
    }
    for (int z = 0; z < grid.dims().nz; ++z)
        if (!range.contains(z)) pred.zero_filled_slices.push_back(z);
    pred.map = features::unscale_target(scaled, target, scaling);
    return pred;
}

Prediction predict_volume(const WdsrModel<float>& model, const PerfusionSeries& series, features::Variant variant,
                          features::Target target, const features::TargetScaling& scaling,
                          std::optional<features::SliceRange> range) {
    if (model.config.in_channels != features::channel_count(variant))
        throw Error("predict: variant mismatch between model and features");
    const auto channels = features::feature_volumes(series, variant, scaling);
    return predict_from_channels(model, channels, variant, target, scaling,
                                 range.value_or(features::default_slice_range(series.dims().nz)));
}

std::vector<tensor::NamedTensor> to_named_tensors(const WdsrModel<float>& model) {
    std::vector<tensor::NamedTensor> out;
    for (const auto& p : const_cast<WdsrModel<float>&>(model).params())
        out.push_back({p.name, p.shape, std::vector<float>(p.value.begin(), p.value.end())});
    return out;
}

WdsrModel<float> from_named_tensors(const std::vector<tensor::NamedTensor>& entries) {
    std::map<std::string, const tensor::NamedTensor*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;
    auto find = [&](const std::string& name) -> const tensor::NamedTensor& {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw Error("checkpoint: missing tensor " + name);
        return *it->second;
    };
    WdsrConfig cfg;
    cfg.in_channels = 0;
    while (by_name.count("input." + std::to_string(cfg.in_channels) + ".weight")) ++cfg.in_channels;
    cfg.n_blocks = 0;
    while (by_name.count("block." + std::to_string(cfg.n_blocks) + ".expand.weight")) ++cfg.n_blocks;
    if (cfg.in_channels == 0 || cfg.n_blocks == 0) throw Error("checkpoint: not a WDSR model");
    const auto& first = find("input.0.weight");
    const auto& expand = find("block.0.expand.weight");
    if (first.shape.size() != 4 || expand.shape.size() != 4) throw Error("checkpoint: bad weight rank");
    cfg.n_filters = static_cast<int>(first.shape[0]);
    cfg.expansion = static_cast<int>(expand.shape[0]) / std::max(cfg.n_filters, 1);
    cfg.out_channels = static_cast<int>(find("output.weight").shape.at(0));

    WdsrModel<float> model = make_zero_model<float>(cfg);
    for (auto& p : model.params()) {
        const auto& e = find(p.name);
        if (e.shape != p.shape) throw Error("checkpoint: shape mismatch for " + p.name);
        std::copy(e.values.begin(), e.values.end(), p.value.begin());
    }
    if (by_name.size() != model.params().size()) throw Error("checkpoint: unexpected extra tensors");
    return model;
}

void save_model(const WdsrModel<float>& model, const std::filesystem::path& path) {
    tensor::write_checkpoint(path, to_named_tensors(model));
}

WdsrModel<float> load_model(const std::filesystem::path& path) { return from_named_tensors(tensor::read_checkpoint(path)); }

template struct WdsrModel<float>;
template struct WdsrModel<double>;
template WdsrModel<double> WdsrModel<float>::cast<double>() const;
template WdsrModel<float> WdsrModel<double>::cast<float>() const;
template WdsrModel<float> WdsrModel<float>::cast<float>() const;
template WdsrModel<double> WdsrModel<double>::cast<double>() const;
template WdsrModel<float> make_zero_model<float>(const WdsrConfig&);
template WdsrModel<double> make_zero_model<double>(const WdsrConfig&);
template WdsrModel<float> make_model<float>(const WdsrConfig&);
template WdsrModel<double> make_model<double>(const WdsrConfig&);
template Tensor4<float> forward(const WdsrModel<float>&, const Tensor4<float>&, ForwardCache<float>*);
template Tensor4<double> forward(const WdsrModel<double>&, const Tensor4<double>&, ForwardCache<double>*);
template void backward(WdsrModel<float>&, const ForwardCache<float>&, const Tensor4<float>&);
template void backward(WdsrModel<double>&, const ForwardCache<double>&, const Tensor4<double>&);

}  // namespace aslperf::wdsr
