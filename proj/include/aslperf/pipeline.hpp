#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "aslperf/config.hpp"
#include "aslperf/metrics.hpp"
#include "aslperf/wdsr.hpp"

namespace aslperf::pipeline {

namespace fs = std::filesystem;

/// A required upstream artifact does not exist.
class MissingInput : public Error {
public:
    using Error::Error;
};

struct Subject {
    int index = 0;
    std::string id;     ///< "sub-007"
    std::string split;  ///< train | val | test
};

/// All subjects of the configured cohort with their split labels, by index.
std::vector<Subject> cohort(const io::ExperimentConfig& cfg);

/// Phantom spec of one subject: the configured spec with per-subject seeds.
phantom::PhantomSpec subject_spec(const io::ExperimentConfig& cfg, int index);

struct ModelKey {
    features::Variant variant = features::Variant::OnePld;
    features::Target target = features::Target::Cbf;

    [[nodiscard]] std::string name() const;  ///< e.g. "two-pld_att"
};

/// one-pld/cbf, one-pld/att, two-pld/cbf, two-pld/att.
std::vector<ModelKey> all_models();

fs::path phantom_dir(const fs::path& root);
fs::path fit_dir(const fs::path& root);
fs::path features_dir(const fs::path& root);
fs::path models_dir(const fs::path& root);
fs::path pred_dir(const fs::path& root);
fs::path eval_dir(const fs::path& root);

/// Ground truth maps, noisy series and mask of every subject.
void run_phantom(const io::ExperimentConfig& cfg, const fs::path& out_root, int threads);
PerfusionSeries load_series(const io::ExperimentConfig& cfg, const fs::path& root, const std::string& subject);

/// Reference CBF/ATT maps from the all-PLD conventional fit.
void run_fit(const io::ExperimentConfig& cfg, const fs::path& in_root, const fs::path& out_root, int threads);

/// Network input channel volumes for both variants plus the dataset manifest.
void run_features(const io::ExperimentConfig& cfg, const fs::path& in_root, const fs::path& out_root, int threads);

/// Slices of every subject in `split` as (input, scaled reference target) examples.
wdsr::Dataset load_dataset(const io::ExperimentConfig& cfg, const fs::path& root, ModelKey key,
                           const std::string& split);

/// Network config for one model.
wdsr::WdsrConfig net_config(const io::ExperimentConfig& cfg, ModelKey key);

/// Trains one model, writes its checkpoint and JSONL epoch log.
wdsr::TrainResult run_train(const io::ExperimentConfig& cfg, const fs::path& in_root, const fs::path& out_root,
                            ModelKey key, int threads);

/// Predicted maps of one model for every test subject.
void run_predict(const io::ExperimentConfig& cfg, const fs::path& in_root, const fs::path& out_root, ModelKey key,
                 int threads);

/// Prediction of one model for one subject (physical units).
VolumeF32 predict_subject(const io::ExperimentConfig& cfg, const fs::path& root, const wdsr::WdsrModel<float>& model,
                          ModelKey key, const std::string& subject);

struct EvalSummary {
    double cbf_range = 0.0;
    double att_range = 0.0;
    metrics::EvalReport report;
    std::string table;
};

/// max - min of the reference maps over test subjects, in-mask, extracted slices.
double reference_range(const io::ExperimentConfig& cfg, const fs::path& root, features::Target target);

/// Scores predictions of `models` against the reference maps of the test
/// subjects. `pred_root` holds <variant>/<subject>/<target>.nii, or
/// <subject>/<target>.nii when the variant directory is absent.
EvalSummary run_eval(const io::ExperimentConfig& cfg, const fs::path& ref_root, const fs::path& pred_root,
                     const fs::path& out_root, const std::vector<ModelKey>& models, int threads);

/// Aggregate test score of an in-memory model (used for untrained baselines).
metrics::Aggregate score_model(const io::ExperimentConfig& cfg, const fs::path& root,
                               const wdsr::WdsrModel<float>& model, ModelKey key, double data_range, int threads);

/// Plain-text variant x target table of SSIM and PSNR (mean +- sd).
std::string format_table(const metrics::EvalReport& report);

/// phantom -> fit -> features -> train x4 -> predict -> eval under `root`.
EvalSummary run_all(const io::ExperimentConfig& cfg, const fs::path& root, int threads);

}  // namespace aslperf::pipeline
