#include "aslperf/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "aslperf/manifest.hpp"
#include "aslperf/nifti.hpp"
#include "aslperf/parallel.hpp"
#include "aslperf/random.hpp"
#include "aslperf/reffit.hpp"
#include "json.hpp"

namespace aslperf::pipeline {

using features::Target;
using features::Variant;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSplitStream = 0x5b117;

std::string subject_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "sub-%03d", index);
    return buf;
}

std::string pwi_name(std::size_t pld, std::size_t rep) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "pwi_p%zu_r%02zu.nii", pld, rep);
    return buf;
}

std::string channel_name(Variant v, std::size_t c) {
    return std::string(features::variant_name(v)) + "_c" + std::to_string(c) + ".nii";
}

std::string target_file(Target t) { return std::string(features::target_name(t)) + ".nii"; }

const fs::path& require_file(const fs::path& p) {
    if (!fs::exists(p)) throw MissingInput("missing input: " + p.string());
    return p;
}

VolumeF32 read_required(const fs::path& p) { return io::read_volume(require_file(p)); }

void ensure_dir(const fs::path& p) { fs::create_directories(p); }

std::vector<Subject> in_split(const io::ExperimentConfig& cfg, const std::string& split) {
    std::vector<Subject> out;
    for (auto& s : cohort(cfg))
        if (s.split == split) out.push_back(s);
    return out;
}

std::vector<VolumeF32> read_channels(const fs::path& root, const std::string& subject, Variant v) {
    std::vector<VolumeF32> out;
    for (int c = 0; c < features::channel_count(v); ++c)
        out.push_back(read_required(features_dir(root) / subject / channel_name(v, c)));
    return out;
}

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// JSON number, or the string "inf" for infinite PSNR.
json number_or_inf(double v) { return std::isfinite(v) ? json(v) : json(format_double(v)); }

}  // namespace

std::string ModelKey::name() const {
    return std::string(features::variant_name(variant)) + "_" + std::string(features::target_name(target));
}

std::vector<ModelKey> all_models() {
    return {{Variant::OnePld, Target::Cbf}, {Variant::OnePld, Target::Att},
            {Variant::TwoPld, Target::Cbf}, {Variant::TwoPld, Target::Att}};
}

fs::path phantom_dir(const fs::path& root) { return root / "phantom"; }
fs::path fit_dir(const fs::path& root) { return root / "fit"; }
fs::path features_dir(const fs::path& root) { return root / "features"; }
fs::path models_dir(const fs::path& root) { return root / "models"; }
fs::path pred_dir(const fs::path& root) { return root / "pred"; }
fs::path eval_dir(const fs::path& root) { return root / "eval"; }

std::vector<Subject> cohort(const io::ExperimentConfig& cfg) {
    const int n = cfg.split.total();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    RandomStream rng(cfg.split.seed, {kSplitStream});
    shuffle_in_place(order, rng);
    std::vector<Subject> out(n);
    for (int pos = 0; pos < n; ++pos) {
        const int idx = order[pos];
        const char* split = pos < cfg.split.train ? "train" : pos < cfg.split.train + cfg.split.val ? "val" : "test";
        out[idx] = {idx, subject_id(idx), split};
    }
    return out;
}

phantom::PhantomSpec subject_spec(const io::ExperimentConfig& cfg, int index) {
    auto spec = cfg.phantom;
    spec.geometry_seed = stream_key(cfg.phantom.geometry_seed, {static_cast<std::uint64_t>(index)});
    spec.noise_seed = stream_key(cfg.phantom.noise_seed, {static_cast<std::uint64_t>(index)});
    return spec;
}

void run_phantom(const io::ExperimentConfig& cfg, const fs::path& out_root, int threads) {
    const auto subjects = cohort(cfg);
    const fs::path dir = phantom_dir(out_root);
    ensure_dir(dir);
    parallel_for(subjects.size(), threads, [&](std::size_t k) {
        const auto& s = subjects[k];
        const auto spec = subject_spec(cfg, s.index);
        const auto maps = phantom::make_phantom_maps(spec);
        const auto series =
            phantom::simulate_series(maps, cfg.protocol, spec.noise_sigma, spec.noise_seed, cfg.mask_threshold);
        const fs::path sdir = dir / s.id;
        ensure_dir(sdir);
        io::write_nifti(maps.cbf, sdir / "cbf_true.nii");
        io::write_nifti(maps.att, sdir / "att_true.nii");
        io::write_nifti(maps.m0, sdir / "m0_true.nii");
        io::write_mask(maps.labels, sdir / "labels.nii");
        io::write_mask(series.mask, sdir / "mask.nii");
        for (std::size_t m = 0; m < series.m0.size(); ++m)
            io::write_nifti(series.m0[m], sdir / ("m0_" + std::to_string(m) + ".nii"));
        for (std::size_t p = 0; p < series.pwi.size(); ++p)
            for (std::size_t r = 0; r < series.pwi[p].size(); ++r) io::write_nifti(series.pwi[p][r], sdir / pwi_name(p, r));
    });
    std::ofstream os(dir / "subjects.jsonl", std::ios::trunc);
    for (const auto& s : subjects) {
        const auto spec = subject_spec(cfg, s.index);
        os << json{{"subject", s.id},
                   {"index", s.index},
                   {"split", s.split},
                   {"geometry_seed", spec.geometry_seed},
                   {"noise_seed", spec.noise_seed}}
                  .dump()
           << '\n';
    }
    if (!os) throw Error("cannot write subjects list under " + dir.string());
}

PerfusionSeries load_series(const io::ExperimentConfig& cfg, const fs::path& root, const std::string& subject) {
    const fs::path sdir = phantom_dir(root) / subject;
    PerfusionSeries series;
    series.protocol = cfg.protocol;
    series.mask = io::read_mask(require_file(sdir / "mask.nii"));
    for (int m = 0;; ++m) {
        const fs::path p = sdir / ("m0_" + std::to_string(m) + ".nii");
        if (!fs::exists(p)) break;
        series.m0.push_back(io::read_volume(p));
    }
    if (series.m0.empty()) throw MissingInput("missing input: " + (sdir / "m0_0.nii").string());
    series.pwi.resize(cfg.protocol.plds_s.size());
    for (std::size_t p = 0; p < series.pwi.size(); ++p)
        for (int r = 0; r < cfg.protocol.repeats[p]; ++r)
            series.pwi[p].push_back(read_required(sdir / pwi_name(p, static_cast<std::size_t>(r))));
    validate_series(series);
    return series;
}

void run_fit(const io::ExperimentConfig& cfg, const fs::path& in_root, const fs::path& out_root, int threads) {
    const fs::path dir = fit_dir(out_root);
    ensure_dir(dir);
    for (const auto& s : cohort(cfg)) {
        const auto series = load_series(cfg, in_root, s.id);
        const auto maps = reffit::fit_volume(series, cfg.fit, threads);
        const fs::path sdir = dir / s.id;
        ensure_dir(sdir);
        io::write_nifti(maps.cbf, sdir / target_file(Target::Cbf));
        io::write_nifti(maps.att, sdir / target_file(Target::Att));
        io::write_mask(maps.flags, sdir / "flags.nii");
    }
}

void run_features(const io::ExperimentConfig& cfg, const fs::path& in_root, const fs::path& out_root, int threads) {
    const fs::path dir = features_dir(out_root);
    ensure_dir(dir);
    const auto subjects = cohort(cfg);
    const auto range = cfg.slice_range();
    const Variant variants[] = {Variant::OnePld, Variant::TwoPld};
    std::vector<std::vector<io::ManifestRecord>> per_subject(subjects.size());
    parallel_for(subjects.size(), threads, [&](std::size_t k) {
        const auto& s = subjects[k];
        const auto series = load_series(cfg, in_root, s.id);
        const fs::path ref_dir = fit_dir(in_root) / s.id;
        const auto cbf = read_required(ref_dir / target_file(Target::Cbf));
        const auto att = read_required(ref_dir / target_file(Target::Att));
        const fs::path sdir = dir / s.id;
        ensure_dir(sdir);
        for (Variant v : variants) {
            const auto vols = features::feature_volumes(series, v, cfg.scaling);
            std::vector<std::string> inputs;
            for (std::size_t c = 0; c < vols.size(); ++c) {
                io::write_nifti(vols[c], sdir / channel_name(v, c));
                inputs.push_back((fs::path("features") / s.id / channel_name(v, c)).generic_string());
            }
            for (int z = range.first; z < range.first + range.count; ++z) {
                std::uint64_t h = 0xcbf29ce484222325ULL;
                for (const auto& vol : vols) h = io::fnv1a64(vol.slice(z), h);
                h = io::fnv1a64(cbf.slice(z), h);
                h = io::fnv1a64(att.slice(z), h);
                per_subject[k].push_back({s.id, s.split, std::string(features::variant_name(v)), z, inputs,
                                          (fs::path("fit") / s.id / target_file(Target::Cbf)).generic_string(),
                                          (fs::path("fit") / s.id / target_file(Target::Att)).generic_string(),
                                          io::hex64(h)});
            }
        }
    });
    std::vector<io::ManifestRecord> records;
    for (auto& r : per_subject) records.insert(records.end(), r.begin(), r.end());
    io::write_manifest(records, dir / "manifest.jsonl");
}

wdsr::Dataset load_dataset(const io::ExperimentConfig& cfg, const fs::path& root, ModelKey key,
                           const std::string& split) {
    wdsr::Dataset data;
    const auto range = cfg.slice_range();
    for (const auto& s : in_split(cfg, split)) {
        const auto channels = read_channels(root, s.id, key.variant);
        const auto ref = read_required(fit_dir(root) / s.id / target_file(key.target));
        const auto scaled = features::scale_target(ref, key.target, cfg.scaling);
        for (const auto& in : features::slice_inputs(channels, key.variant, range, s.id))
            data.add(in, scaled.slice(in.slice_index));
    }
    return data;
}

wdsr::WdsrConfig net_config(const io::ExperimentConfig& cfg, ModelKey key) {
    auto net = cfg.training.net;
    net.in_channels = features::channel_count(key.variant);
    net.out_channels = 1;
    return net;
}

wdsr::TrainResult run_train(const io::ExperimentConfig& cfg, const fs::path& in_root, const fs::path& out_root,
                            ModelKey key, int threads) {
    const auto train_set = load_dataset(cfg, in_root, key, "train");
    if (train_set.empty()) throw Error("train: empty training split");
    const auto val_set = load_dataset(cfg, in_root, key, "val");
    const fs::path dir = models_dir(out_root);
    ensure_dir(dir);
    std::ofstream log(dir / (key.name() + "_log.jsonl"), std::ios::trunc);
    if (!log) throw Error("cannot write training log under " + dir.string());
    wdsr::TrainOptions opts;
    opts.threads = threads;
    opts.micro_batch = cfg.training.micro_batch;
    opts.on_epoch = [&](const wdsr::EpochLog& e) {
        json j{{"epoch", e.epoch}, {"lr", e.lr}, {"train_mae", e.train_mae}};
        j["val_mae"] = e.val_mae ? json(*e.val_mae) : json(nullptr);
        log << j.dump() << '\n';
        log.flush();
    };
    auto result = wdsr::train(net_config(cfg, key), train_set, val_set, opts);
    log << json{{"best_epoch", result.best_epoch}}.dump() << '\n';
    wdsr::save_model(result.model, dir / (key.name() + ".wdsr"));
    return result;
}

VolumeF32 predict_subject(const io::ExperimentConfig& cfg, const fs::path& root, const wdsr::WdsrModel<float>& model,
                          ModelKey key, const std::string& subject) {
    const auto channels = read_channels(root, subject, key.variant);
    return wdsr::predict_from_channels(model, channels, key.variant, key.target, cfg.scaling, cfg.slice_range()).map;
}

void run_predict(const io::ExperimentConfig& cfg, const fs::path& in_root, const fs::path& out_root, ModelKey key,
                 int threads) {
    const auto model = wdsr::load_model(require_file(models_dir(in_root) / (key.name() + ".wdsr")));
    const auto subjects = in_split(cfg, "test");
    const fs::path dir = pred_dir(out_root) / std::string(features::variant_name(key.variant));
    parallel_for(subjects.size(), threads, [&](std::size_t k) {
        const auto map = predict_subject(cfg, in_root, model, key, subjects[k].id);
        ensure_dir(dir / subjects[k].id);
        io::write_nifti(map, dir / subjects[k].id / target_file(key.target));
    });
}

double reference_range(const io::ExperimentConfig& cfg, const fs::path& root, Target target) {
    std::vector<VolumeF32> refs;
    std::vector<MaskVolume> masks;
    for (const auto& s : in_split(cfg, "test")) {
        refs.push_back(read_required(fit_dir(root) / s.id / target_file(target)));
        masks.push_back(io::read_mask(require_file(phantom_dir(root) / s.id / "mask.nii")));
    }
    std::vector<const VolumeF32*> rp;
    std::vector<const MaskVolume*> mp;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        rp.push_back(&refs[i]);
        mp.push_back(&masks[i]);
    }
    return metrics::data_range_over(rp, mp, cfg.slice_range());
}

std::string format_table(const metrics::EvalReport& report) {
    const Variant variants[] = {Variant::OnePld, Variant::TwoPld};
    const Target targets[] = {Target::Cbf, Target::Att};
    auto find = [&](Variant v, Target t) -> const metrics::Aggregate* {
        for (const auto& a : report.aggregates)
            if (a.variant == features::variant_name(v) && a.target == t) return &a;
        return nullptr;
    };
    std::ostringstream os;
    char buf[128];
    for (int metric = 0; metric < 2; ++metric) {
        os << (metric == 0 ? "SSIM (mean +- sd)\n" : "PSNR dB (mean +- sd)\n");
        std::snprintf(buf, sizeof buf, "%-8s%-22s%-22s\n", "target", "one-pld", "two-pld");
        os << buf;
        for (Target t : targets) {
            std::snprintf(buf, sizeof buf, "%-8s", t == Target::Cbf ? "CBF" : "ATT");
            os << buf;
            for (Variant v : variants) {
                const auto* a = find(v, t);
                if (!a)
                    std::snprintf(buf, sizeof buf, "%-22s", "-");
                else {
                    char cell[64];
                    if (metric == 0)
                        std::snprintf(cell, sizeof cell, "%.4f +- %.4f", a->ssim_mean, a->ssim_std);
                    else
                        std::snprintf(cell, sizeof cell, "%.2f +- %.2f", a->psnr_mean, a->psnr_std);
                    std::snprintf(buf, sizeof buf, "%-22s", cell);
                }
                os << buf;
            }
            os << '\n';
        }
    }
    return os.str();
}

EvalSummary run_eval(const io::ExperimentConfig& cfg, const fs::path& ref_root, const fs::path& pred_root,
                     const fs::path& out_root, const std::vector<ModelKey>& models, int threads) {
    EvalSummary summary;
    summary.cbf_range = reference_range(cfg, ref_root, Target::Cbf);
    summary.att_range = reference_range(cfg, ref_root, Target::Att);
    const auto subjects = in_split(cfg, "test");
    const auto range = cfg.slice_range();
    for (const auto& key : models) {
        const std::string vname(features::variant_name(key.variant));
        const double data_range = key.target == Target::Cbf ? summary.cbf_range : summary.att_range;
        std::vector<metrics::EvalReport> parts(subjects.size());
        parallel_for(subjects.size(), threads, [&](std::size_t k) {
            const auto& s = subjects[k];
            fs::path pred_path = pred_root / vname / s.id / target_file(key.target);
            if (!fs::exists(pred_root / vname)) pred_path = pred_root / s.id / target_file(key.target);
            const auto pred = read_required(pred_path);
            const auto ref = read_required(fit_dir(ref_root) / s.id / target_file(key.target));
            metrics::evaluate(pred, ref, range, data_range, s.id, vname, key.target, parts[k]);
        });
        for (auto& p : parts)
            summary.report.slices.insert(summary.report.slices.end(), p.slices.begin(), p.slices.end());
    }
    metrics::aggregate(summary.report, summary.cbf_range, summary.att_range);
    summary.table = format_table(summary.report);

    const fs::path dir = eval_dir(out_root);
    ensure_dir(dir);
    std::ofstream rep(dir / "report.jsonl", std::ios::trunc);
    for (const auto& s : summary.report.slices)
        rep << json{{"kind", "slice"},
                    {"subject", s.subject},
                    {"slice", s.slice},
                    {"target", features::target_name(s.target)},
                    {"variant", s.variant},
                    {"ssim", s.ssim},
                    {"psnr", number_or_inf(s.psnr)},
                    {"psnr_infinite", s.psnr_infinite}}
                   .dump()
            << '\n';
    json aggs = json::array();
    for (const auto& a : summary.report.aggregates) {
        json j{{"kind", "aggregate"},
               {"target", features::target_name(a.target)},
               {"variant", a.variant},
               {"count", a.count},
               {"ssim_mean", a.ssim_mean},
               {"ssim_std", a.ssim_std},
               {"psnr_mean", number_or_inf(a.psnr_mean)},
               {"psnr_std", a.psnr_std},
               {"psnr_infinite", a.psnr_infinite},
               {"data_range", a.data_range}};
        rep << j.dump() << '\n';
        aggs.push_back(j);
    }
    if (!rep) throw Error("cannot write eval report under " + dir.string());
    std::ofstream sum(dir / "summary.json", std::ios::trunc);
    sum << json{{"cbf_range", summary.cbf_range}, {"att_range", summary.att_range}, {"aggregates", aggs}}.dump(2)
        << '\n';
    std::ofstream table(dir / "summary.txt", std::ios::trunc);
    table << summary.table;
    if (!sum || !table) throw Error("cannot write eval summary under " + dir.string());
    return summary;
}

metrics::Aggregate score_model(const io::ExperimentConfig& cfg, const fs::path& root,
                               const wdsr::WdsrModel<float>& model, ModelKey key, double data_range, int threads) {
    const auto subjects = in_split(cfg, "test");
    const std::string vname(features::variant_name(key.variant));
    std::vector<metrics::EvalReport> parts(subjects.size());
    parallel_for(subjects.size(), threads, [&](std::size_t k) {
        const auto pred = predict_subject(cfg, root, model, key, subjects[k].id);
        const auto ref = read_required(fit_dir(root) / subjects[k].id / target_file(key.target));
        metrics::evaluate(pred, ref, cfg.slice_range(), data_range, subjects[k].id, vname, key.target, parts[k]);
    });
    metrics::EvalReport report;
    for (auto& p : parts) report.slices.insert(report.slices.end(), p.slices.begin(), p.slices.end());
    metrics::aggregate(report, data_range, data_range);
    return report.aggregates.front();
}

EvalSummary run_all(const io::ExperimentConfig& cfg, const fs::path& root, int threads) {
    ensure_dir(root);
    io::save_config(cfg, root / "config.json");
    run_phantom(cfg, root, threads);
    run_fit(cfg, root, root, threads);
    run_features(cfg, root, root, threads);
    for (const auto& key : all_models()) {
        run_train(cfg, root, root, key, threads);
        run_predict(cfg, root, root, key, threads);
    }
    return run_eval(cfg, root, pred_dir(root), root, all_models(), threads);
}

}  // namespace aslperf::pipeline
