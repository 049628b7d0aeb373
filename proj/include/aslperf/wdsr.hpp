#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "aslperf/features.hpp"
#include "aslperf/tensor.hpp"

namespace aslperf::wdsr {

using tensor::ConvLayer;
using tensor::Tensor4;

struct WdsrConfig {
    int n_blocks = 8;
    int n_filters = 32;
    int expansion = 4;
    int in_channels = 2;
    int out_channels = 1;
    int batch = 32;
    int epochs = 300;
    tensor::LrSchedule lr{};
    std::uint64_t seed = 0;

    bool operator==(const WdsrConfig&) const = default;
};

void validate_config(const WdsrConfig& cfg);

/// Closed-form parameter count of the topology described by `cfg`.
std::size_t parameter_count(const WdsrConfig& cfg);

template <typename T>
struct WdsrBlock {
    ConvLayer<T> expand;    ///< F -> F * expansion, followed by ReLU
    ConvLayer<T> contract;  ///< F * expansion -> F
};

/// Per-channel input convs, channel concat, fusion conv, wide-activation
/// residual blocks, global skip from the fusion output, linear output conv.
template <typename T>
struct WdsrModel {
    WdsrConfig config;
    std::vector<ConvLayer<T>> input_convs;
    ConvLayer<T> fusion;
    std::vector<WdsrBlock<T>> blocks;
    ConvLayer<T> output;

    [[nodiscard]] std::size_t parameter_count() const;
    std::vector<tensor::ParamRef<T>> params();
    void zero_grad();

    template <typename U>
    [[nodiscard]] WdsrModel<U> cast() const;
};

/// Layers shaped per `cfg`; weights zero.
template <typename T>
WdsrModel<T> make_zero_model(const WdsrConfig& cfg);

/// He-normal weights (gain sqrt(2), fan-in scaled) from cfg.seed, zero biases.
template <typename T>
WdsrModel<T> make_model(const WdsrConfig& cfg);

/// Activations kept by forward() for backward().
template <typename T>
struct ForwardCache {
    std::vector<Tensor4<T>> channel_inputs;
    Tensor4<T> concat;
    Tensor4<T> fusion_out;
    std::vector<Tensor4<T>> block_inputs;
    std::vector<Tensor4<T>> block_expanded;
    std::vector<Tensor4<T>> block_activated;
    Tensor4<T> skip_sum;
};

template <typename T>
Tensor4<T> forward(const WdsrModel<T>& model, const Tensor4<T>& x, ForwardCache<T>* cache = nullptr);

/// Accumulates parameter gradients of sum(dout * forward(x)) into the model.
template <typename T>
void backward(WdsrModel<T>& model, const ForwardCache<T>& cache, const Tensor4<T>& dout);

/// One training/validation example: channels-first input and a single-channel target.
struct Example {
    std::vector<float> input;   ///< channels * height * width
    std::vector<float> target;  ///< height * width
};

struct Dataset {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<Example> examples;

    [[nodiscard]] bool empty() const { return examples.empty(); }
    void add(const features::ModelInput& in, std::span<const float> target);
};

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double train_mae = 0.0;
    std::optional<double> val_mae;
};

struct TrainOptions {
    int threads = 1;
    int micro_batch = 8;
    /// Stop once the selection score (validation MAE when a validation set is
    /// given, else the epoch train MAE) falls below this value (0 disables).
    double stop_below_mae = 0.0;
    std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
    WdsrModel<float> model;
    std::vector<EpochLog> log;
    int best_epoch = -1;
};

/// MAE training with Adam and the step schedule; returns the parameters of the
/// epoch with the lowest validation MAE (train MAE when `val` is empty).
TrainResult train(const WdsrConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                  const TrainOptions& options = {});

/// Mean absolute error of the model over a dataset.
double evaluate_mae(const WdsrModel<float>& model, const Dataset& data, int batch = 8);

/// Network outputs (height*width each) for a list of inputs.
std::vector<std::vector<float>> predict_slices(const WdsrModel<float>& model,
                                               const std::vector<features::ModelInput>& inputs, int batch = 8);

struct Prediction {
    VolumeF32 map;                       ///< physical units
    std::vector<int> predicted_slices;
    std::vector<int> zero_filled_slices;
};

/// Runs the model over every slice in `range` and reassembles a volume in
/// physical units; slices outside the range are zero.
Prediction predict_volume(const WdsrModel<float>& model, const PerfusionSeries& series, features::Variant variant,
                          features::Target target, const features::TargetScaling& scaling,
                          std::optional<features::SliceRange> range = {});

/// Same, from precomputed channel volumes.
Prediction predict_from_channels(const WdsrModel<float>& model, const std::vector<VolumeF32>& channels,
                                 features::Variant variant, features::Target target,
                                 const features::TargetScaling& scaling, features::SliceRange range);

std::vector<tensor::NamedTensor> to_named_tensors(const WdsrModel<float>& model);
/// Rebuilds a model; topology is inferred from tensor names and shapes.
WdsrModel<float> from_named_tensors(const std::vector<tensor::NamedTensor>& entries);

void save_model(const WdsrModel<float>& model, const std::filesystem::path& path);
WdsrModel<float> load_model(const std::filesystem::path& path);

}  // namespace aslperf::wdsr
