// aslperf: command line driver for the perfusion pipeline stages.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "aslperf/config.hpp"
#include "aslperf/nifti.hpp"
#include "aslperf/pipeline.hpp"

namespace {

using namespace aslperf;
namespace fs = std::filesystem;

enum Exit : int {
    kOk = 0,
    kUsage = 2,
    kConfig = 3,
    kMissingInput = 4,
    kStageFailure = 5,
    kIo = 6,
    kInternal = 70,
};

struct Options {
    std::string config;
    std::string in;
    std::string out;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    std::string variant;
    std::string target;
    std::string pred;
};

std::vector<pipeline::ModelKey> selected_models(const Options& o) {
    std::vector<pipeline::ModelKey> keys;
    for (const auto& k : pipeline::all_models()) {
        if (!o.variant.empty() && features::variant_name(k.variant) != o.variant) continue;
        if (!o.target.empty() && features::target_name(k.target) != o.target) continue;
        keys.push_back(k);
    }
    return keys;
}

int run_stage(const std::string& stage, const Options& o) {
    auto cfg = io::load_config(o.config);
    if (o.seed) cfg.training.net.seed = *o.seed;
    const fs::path in = o.in.empty() ? fs::path(cfg.work_dir) : fs::path(o.in);
    const fs::path out = o.out.empty() ? fs::path(cfg.work_dir) : fs::path(o.out);
    const int threads = o.threads;

    if (stage == "phantom") {
        pipeline::run_phantom(cfg, out, threads);
    } else if (stage == "fit") {
        pipeline::run_fit(cfg, in, out, threads);
    } else if (stage == "features") {
        pipeline::run_features(cfg, in, out, threads);
    } else if (stage == "train") {
        for (const auto& key : selected_models(o)) {
            const auto r = pipeline::run_train(cfg, in, out, key, threads);
            std::printf("%s: best epoch %d of %zu\n", key.name().c_str(), r.best_epoch, r.log.size());
        }
    } else if (stage == "predict") {
        for (const auto& key : selected_models(o)) pipeline::run_predict(cfg, in, out, key, threads);
    } else if (stage == "eval") {
        const fs::path pred = o.pred.empty() ? pipeline::pred_dir(in) : fs::path(o.pred);
        const auto summary = pipeline::run_eval(cfg, in, pred, out, selected_models(o), threads);
        std::fputs(summary.table.c_str(), stdout);
    } else if (stage == "all") {
        const auto summary = pipeline::run_all(cfg, out, threads);
        std::fputs(summary.table.c_str(), stdout);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ASL perfusion pipeline: phantom, fit, features, train, predict, eval"};
    app.require_subcommand(1);
    Options o;

    const char* stages[][2] = {
        {"phantom", "simulate the synthetic cohort"},
        {"fit", "conventional all-PLD CBF/ATT fit (reference maps)"},
        {"features", "network input channels and dataset manifest"},
        {"train", "train network models"},
        {"predict", "predict test-subject maps"},
        {"eval", "SSIM/PSNR of predictions against reference maps"},
        {"all", "run every stage and print the evaluation table"},
    };
    for (const auto& [name, help] : stages) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--threads", o.threads, "worker threads; 1 is strictly reproducible")
            ->check(CLI::Range(1, 1024));
        sub->add_option("--seed", o.seed, "override the training seed");
        const std::string n = name;
        if (n != "phantom" && n != "all") sub->add_option("--in", o.in, "input root (default: config work_dir)");
        sub->add_option("--out", o.out, "output root (default: config work_dir)");
        if (n == "train" || n == "predict" || n == "eval") {
            sub->add_option("--variant", o.variant, "one-pld | two-pld (default: both)")
                ->check(CLI::IsMember({"one-pld", "two-pld"}));
            sub->add_option("--target", o.target, "cbf | att (default: both)")->check(CLI::IsMember({"cbf", "att"}));
        }
        if (n == "eval") sub->add_option("--pred", o.pred, "prediction root (default: <in>/pred)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    const std::string stage = app.get_subcommands().front()->get_name();
    auto fail = [&](const char* kind, const std::string& what, int code) {
        std::fprintf(stderr, "aslperf %s: %s: %s\n", stage.c_str(), kind, what.c_str());
        return code;
    };
    try {
        return run_stage(stage, o);
    } catch (const io::ConfigError& e) {
        return fail("config error", e.what(), kConfig);
    } catch (const pipeline::MissingInput& e) {
        return fail("missing input", e.what(), kMissingInput);
    } catch (const io::NiftiError& e) {
        return fail("i/o error", e.what(), kIo);
    } catch (const std::filesystem::filesystem_error& e) {
        return fail("i/o error", e.what(), kIo);
    } catch (const Error& e) {
        return fail("stage failed", e.what(), kStageFailure);
    } catch (const std::exception& e) {
        return fail("internal error", e.what(), kInternal);
    }
}
