#include "aslperf/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace aslperf::io {

using nlohmann::json;

namespace {

std::string join(const std::string& parent, const std::string& key) {
    return parent.empty() ? key : parent + "." + key;
}

std::string indexed(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

// Reads one JSON object, tracking consumed keys so leftovers can be rejected.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    const json& get(const std::string& key) {
        const auto it = j_.find(key);
        if (it == j_.end()) throw ConfigError(join(path_, key), "missing required key");
        seen_.insert(key);
        return *it;
    }

    Section section(const std::string& key) { return Section(get(key), join(path_, key)); }

    double number(const std::string& key) { return as_number(get(key), join(path_, key)); }

    double positive(const std::string& key) {
        const double v = number(key);
        if (!(v > 0.0)) throw ConfigError(join(path_, key), "must be > 0");
        return v;
    }

    double non_negative(const std::string& key) {
        const double v = number(key);
        if (!(v >= 0.0)) throw ConfigError(join(path_, key), "must be >= 0");
        return v;
    }

    long long integer(const std::string& key, long long lo, long long hi) {
        return as_integer(get(key), join(path_, key), lo, hi);
    }

    std::uint64_t seed(const std::string& key) {
        const json& v = get(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
            throw ConfigError(join(path_, key), "expected a non-negative integer");
        return v.get<std::uint64_t>();
    }

    std::string string(const std::string& key) {
        const json& v = get(key);
        if (!v.is_string()) throw ConfigError(join(path_, key), "expected a string");
        return v.get<std::string>();
    }

    std::vector<double> numbers(const std::string& key, bool allow_empty = false) {
        const json& v = get(key);
        const std::string p = join(path_, key);
        if (!v.is_array()) throw ConfigError(p, "expected an array of numbers");
        if (v.empty() && !allow_empty) throw ConfigError(p, "must not be empty");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_number(v[i], indexed(p, i)));
        return out;
    }

    std::vector<int> integers(const std::string& key, long long lo, long long hi, bool allow_empty = false) {
        const json& v = get(key);
        const std::string p = join(path_, key);
        if (!v.is_array()) throw ConfigError(p, "expected an array of integers");
        if (v.empty() && !allow_empty) throw ConfigError(p, "must not be empty");
        std::vector<int> out;
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back(static_cast<int>(as_integer(v[i], indexed(p, i), lo, hi)));
        return out;
    }

    std::vector<double> fixed_numbers(const std::string& key, std::size_t n) {
        auto v = numbers(key);
        if (v.size() != n) throw ConfigError(join(path_, key), "expected exactly " + std::to_string(n) + " values");
        return v;
    }

    reffit::Bounds bounds(const std::string& key) {
        const auto v = fixed_numbers(key, 2);
        if (!(v[0] < v[1])) throw ConfigError(join(path_, key), "bounds must satisfy lo < hi");
        return {v[0], v[1]};
    }

    /// Rejects keys never read.
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(join(path_, it.key()), "unknown key");
    }

    [[nodiscard]] const std::string& path() const { return path_; }

private:
    static double as_number(const json& v, const std::string& p) {
        if (!v.is_number()) throw ConfigError(p, "expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw ConfigError(p, "must be finite");
        return d;
    }

    static long long as_integer(const json& v, const std::string& p, long long lo, long long hi) {
        if (!v.is_number_integer()) throw ConfigError(p, "expected an integer");
        if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(hi))
            throw ConfigError(p, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
        const long long x = v.get<long long>();
        if (x < lo || x > hi) throw ConfigError(p, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
        return x;
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

constexpr long long kIntMax = 1'000'000'000;

AcquisitionProtocol read_protocol(Section s) {
    AcquisitionProtocol p;
    p.plds_s = s.numbers("plds_s");
    p.tau_s = s.positive("tau_s");
    p.repeats = s.integers("repeats", 1, 100000);
    p.t1b_s = s.positive("t1b_s");
    p.alpha = s.positive("alpha");
    p.lambda_bp = s.positive("lambda_bp");
    p.slice_dt_s = s.non_negative("slice_dt_s");
    s.finish();
    const auto violations = validate_protocol(p);
    if (!violations.empty()) throw ConfigError(join(s.path(), violations.front().field), violations.front().message);
    return p;
}

phantom::TissueClass read_tissue(Section s) {
    phantom::TissueClass t;
    t.cbf = s.non_negative("cbf");
    t.att = s.non_negative("att");
    t.m0 = s.non_negative("m0");
    s.finish();
    return t;
}

phantom::PhantomSpec read_phantom(Section s) {
    phantom::PhantomSpec p;
    const auto dims = s.integers("dims", 16, 4096);
    if (dims.size() != 3) throw ConfigError(join(s.path(), "dims"), "expected exactly 3 values");
    p.dims = {dims[0], dims[1], dims[2]};
    const auto vox = s.fixed_numbers("voxel_mm", 3);
    for (std::size_t i = 0; i < 3; ++i) {
        if (!(vox[i] > 0.0)) throw ConfigError(indexed(join(s.path(), "voxel_mm"), i), "must be > 0");
        p.voxel_mm[i] = static_cast<float>(vox[i]);
    }
    p.gm = read_tissue(s.section("gm"));
    p.wm = read_tissue(s.section("wm"));
    p.csf = read_tissue(s.section("csf"));
    p.cbf_modulation = s.non_negative("cbf_modulation");
    if (!(p.cbf_modulation < 0.5)) throw ConfigError(join(s.path(), "cbf_modulation"), "must be in [0, 0.5)");
    p.att_modulation = s.non_negative("att_modulation");
    if (!(p.att_modulation < 0.5)) throw ConfigError(join(s.path(), "att_modulation"), "must be in [0, 0.5)");
    p.geometry_seed = s.seed("geometry_seed");
    p.noise_seed = s.seed("noise_seed");
    p.noise_sigma = s.non_negative("noise_sigma");
    s.finish();
    try {
        phantom::validate_spec(p);
    } catch (const Error& e) {
        throw ConfigError(s.path(), e.what());
    }
    return p;
}

reffit::FitConfig read_fit(Section s) {
    reffit::FitConfig f;
    f.cbf_bounds = s.bounds("cbf_bounds");
    f.att_bounds = s.bounds("att_bounds");
    f.max_iter = static_cast<int>(s.integer("max_iter", 1, 100000));
    f.initial_damping = s.positive("initial_damping");
    f.damping_up = s.positive("damping_up");
    if (!(f.damping_up > 1.0)) throw ConfigError(join(s.path(), "damping_up"), "must be > 1");
    f.damping_down = s.positive("damping_down");
    if (!(f.damping_down < 1.0)) throw ConfigError(join(s.path(), "damping_down"), "must be < 1");
    f.tol = s.positive("tol");
    f.att_init_grid = s.numbers("att_init_grid");
    f.residual_weights = s.numbers("residual_weights", true);
    for (std::size_t i = 0; i < f.residual_weights.size(); ++i)
        if (!(f.residual_weights[i] > 0.0))
            throw ConfigError(indexed(join(s.path(), "residual_weights"), i), "must be > 0");
    f.noise_floor_k = s.non_negative("noise_floor_k");
    s.finish();
    try {
        reffit::validate_config(f);
    } catch (const Error& e) {
        throw ConfigError(s.path(), e.what());
    }
    return f;
}

tensor::LrSchedule read_lr(Section s) {
    tensor::LrSchedule lr;
    lr.initial = s.positive("initial");
    lr.drop_epochs = s.integers("drop_epochs", 1, kIntMax, true);
    lr.drop_factors = s.numbers("drop_factors", true);
    const std::string p = s.path();
    if (lr.drop_factors.size() != lr.drop_epochs.size())
        throw ConfigError(join(p, "drop_factors"), "length must match drop_epochs");
    for (std::size_t i = 1; i < lr.drop_epochs.size(); ++i)
        if (lr.drop_epochs[i] <= lr.drop_epochs[i - 1])
            throw ConfigError(indexed(join(p, "drop_epochs"), i), "drop epochs must be increasing");
    for (std::size_t i = 0; i < lr.drop_factors.size(); ++i)
        if (!(lr.drop_factors[i] > 0.0)) throw ConfigError(indexed(join(p, "drop_factors"), i), "must be > 0");
    const std::string mode = s.string("mode");
    if (mode == "successive")
        lr.mode = tensor::LrMode::Successive;
    else if (mode == "relative-to-initial")
        lr.mode = tensor::LrMode::RelativeToInitial;
    else
        throw ConfigError(join(p, "mode"), "expected \"successive\" or \"relative-to-initial\"");
    s.finish();
    return lr;
}

TrainingConfig read_training(Section s) {
    TrainingConfig t;
    t.net.n_blocks = static_cast<int>(s.integer("n_blocks", 1, 1024));
    t.net.n_filters = static_cast<int>(s.integer("n_filters", 1, 4096));
    t.net.expansion = static_cast<int>(s.integer("expansion", 1, 64));
    t.net.batch = static_cast<int>(s.integer("batch", 1, 1 << 20));
    t.net.epochs = static_cast<int>(s.integer("epochs", 1, kIntMax));
    t.net.seed = s.seed("seed");
    t.net.lr = read_lr(s.section("lr"));
    t.micro_batch = static_cast<int>(s.integer("micro_batch", 1, 1 << 20));
    s.finish();
    return t;
}

json lr_json(const tensor::LrSchedule& lr) {
    return {{"initial", lr.initial},
            {"drop_epochs", lr.drop_epochs},
            {"drop_factors", lr.drop_factors},
            {"mode", lr.mode == tensor::LrMode::Successive ? "successive" : "relative-to-initial"}};
}

json tissue_json(const phantom::TissueClass& t) { return {{"cbf", t.cbf}, {"att", t.att}, {"m0", t.m0}}; }

}  // namespace

void validate(const ExperimentConfig& cfg) {
    const auto violations = validate_protocol(cfg.protocol);
    if (!violations.empty())
        throw ConfigError("protocol." + violations.front().field, violations.front().message);
    if (!cfg.protocol.find_pld(features::kShortPld) || !cfg.protocol.find_pld(features::kLongPld))
        throw ConfigError("protocol.plds_s", "must contain 0.7 and 1.7 s for the network inputs");
    if (cfg.protocol.repeats[*cfg.protocol.find_pld(features::kLongPld)] < 2)
        throw ConfigError("protocol.repeats", "need >= 2 repeats at 1.7 s for the std channel");
    if (!cfg.fit.residual_weights.empty() && cfg.fit.residual_weights.size() != cfg.protocol.plds_s.size())
        throw ConfigError("fit.residual_weights", "length must be 0 or the number of PLDs");
    if (!(cfg.mask_threshold > 0.0 && cfg.mask_threshold < 1.0)) throw ConfigError("mask.threshold", "must be in (0, 1)");
    if (cfg.slices.count < 0) throw ConfigError("features.slice_count", "must be >= 0");
    if (cfg.slices.count > 0 && (cfg.slices.first < 0 || cfg.slices.first + cfg.slices.count > cfg.phantom.dims.nz))
        throw ConfigError("features.slice_first", "slice range exceeds phantom.dims[2]");
    if (!(cfg.scaling.cbf_scale > 0.0)) throw ConfigError("scaling.cbf_scale", "must be > 0");
    if (!(cfg.scaling.att_scale > 0.0)) throw ConfigError("scaling.att_scale", "must be > 0");
    if (cfg.split.train < 1) throw ConfigError("split.train", "must be >= 1");
    if (cfg.split.test < 1) throw ConfigError("split.test", "must be >= 1");
    if (cfg.split.val < 0) throw ConfigError("split.val", "must be >= 0");
    if (cfg.work_dir.empty()) throw ConfigError("paths.work_dir", "must not be empty");
    auto net = cfg.training.net;
    net.in_channels = 2;
    try {
        wdsr::validate_config(net);
    } catch (const Error& e) {
        throw ConfigError("training", e.what());
    }
}

std::string to_json(const ExperimentConfig& cfg) {
    const auto& p = cfg.protocol;
    const auto& ph = cfg.phantom;
    const auto& f = cfg.fit;
    const auto& n = cfg.training.net;
    json j;
    j["protocol"] = {{"plds_s", p.plds_s},       {"tau_s", p.tau_s},          {"repeats", p.repeats},
                     {"t1b_s", p.t1b_s},         {"alpha", p.alpha},          {"lambda_bp", p.lambda_bp},
                     {"slice_dt_s", p.slice_dt_s}};
    j["phantom"] = {{"dims", {ph.dims.nx, ph.dims.ny, ph.dims.nz}},
                    {"voxel_mm", {ph.voxel_mm[0], ph.voxel_mm[1], ph.voxel_mm[2]}},
                    {"gm", tissue_json(ph.gm)},
                    {"wm", tissue_json(ph.wm)},
                    {"csf", tissue_json(ph.csf)},
                    {"cbf_modulation", ph.cbf_modulation},
                    {"att_modulation", ph.att_modulation},
                    {"geometry_seed", ph.geometry_seed},
                    {"noise_seed", ph.noise_seed},
                    {"noise_sigma", ph.noise_sigma}};
    j["mask"] = {{"threshold", cfg.mask_threshold}};
    j["fit"] = {{"cbf_bounds", {f.cbf_bounds.lo, f.cbf_bounds.hi}},
                {"att_bounds", {f.att_bounds.lo, f.att_bounds.hi}},
                {"max_iter", f.max_iter},
                {"initial_damping", f.initial_damping},
                {"damping_up", f.damping_up},
                {"damping_down", f.damping_down},
                {"tol", f.tol},
                {"att_init_grid", f.att_init_grid},
                {"residual_weights", f.residual_weights},
                {"noise_floor_k", f.noise_floor_k}};
    j["features"] = {{"slice_first", cfg.slices.first}, {"slice_count", cfg.slices.count}};
    j["scaling"] = {{"cbf_scale", cfg.scaling.cbf_scale}, {"att_scale", cfg.scaling.att_scale}};
    j["training"] = {{"n_blocks", n.n_blocks}, {"n_filters", n.n_filters},         {"expansion", n.expansion},
                     {"batch", n.batch},       {"epochs", n.epochs},               {"seed", n.seed},
                     {"lr", lr_json(n.lr)},    {"micro_batch", cfg.training.micro_batch}};
    j["split"] = {{"train", cfg.split.train}, {"val", cfg.split.val}, {"test", cfg.split.test}, {"seed", cfg.split.seed}};
    j["paths"] = {{"work_dir", cfg.work_dir}};
    return j.dump(2) + "\n";
}

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
    }
    Section root(j, "");
    ExperimentConfig cfg;
    cfg.protocol = read_protocol(root.section("protocol"));
    cfg.phantom = read_phantom(root.section("phantom"));
    {
        auto s = root.section("mask");
        cfg.mask_threshold = s.positive("threshold");
        s.finish();
    }
    cfg.fit = read_fit(root.section("fit"));
    {
        auto s = root.section("features");
        cfg.slices.first = static_cast<int>(s.integer("slice_first", 0, 1 << 15));
        cfg.slices.count = static_cast<int>(s.integer("slice_count", 0, 1 << 15));
        s.finish();
    }
    {
        auto s = root.section("scaling");
        cfg.scaling.cbf_scale = s.positive("cbf_scale");
        cfg.scaling.att_scale = s.positive("att_scale");
        s.finish();
    }
    cfg.training = read_training(root.section("training"));
    {
        auto s = root.section("split");
        cfg.split.train = static_cast<int>(s.integer("train", 1, 1 << 20));
        cfg.split.val = static_cast<int>(s.integer("val", 0, 1 << 20));
        cfg.split.test = static_cast<int>(s.integer("test", 1, 1 << 20));
        cfg.split.seed = s.seed("seed");
        s.finish();
    }
    {
        auto s = root.section("paths");
        cfg.work_dir = s.string("work_dir");
        s.finish();
    }
    root.finish();
    validate(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open config: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("cannot write config: " + path.string());
    os << to_json(cfg);
}

}  // namespace aslperf::io
