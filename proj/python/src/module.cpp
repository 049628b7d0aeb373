#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "aslperf/config.hpp"
#include "aslperf/core.hpp"
#include "aslperf/kinetic.hpp"
#include "aslperf/metrics.hpp"
#include "aslperf/nifti.hpp"
#include "aslperf/pipeline.hpp"
#include "aslperf/reffit.hpp"

namespace py = pybind11;
using namespace aslperf;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// Volumes are exposed as (nz, ny, nx) arrays; x varies fastest in both.
FloatArray to_array(const VolumeF32& v) {
    const auto& d = v.dims();
    FloatArray out({d.nz, d.ny, d.nx});
    std::copy(v.values().begin(), v.values().end(), out.mutable_data());
    return out;
}

VolumeF32 from_array(const FloatArray& a, std::array<float, 3> voxel_mm, const std::string& unit) {
    if (a.ndim() != 3) throw py::value_error("expected a 3D array (nz, ny, nx)");
    const auto tag = unit_from_name(unit);
    if (!tag) throw py::value_error("unknown unit: " + unit);
    const Dims d{static_cast<int>(a.shape(2)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0))};
    return VolumeF32(d, voxel_mm, *tag, std::vector<float>(a.data(), a.data() + a.size()));
}

metrics::ImageView view_of(const FloatArray& a) {
    if (a.ndim() != 2) throw py::value_error("expected a 2D array (height, width)");
    return {std::span<const float>(a.data(), static_cast<std::size_t>(a.size())), static_cast<int>(a.shape(1)),
            static_cast<int>(a.shape(0))};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "ASL perfusion kinetics, fitting, metrics and pipeline stages";
    py::register_exception<Error>(m, "AslperfError", PyExc_RuntimeError);
    py::register_exception<io::ConfigError>(m, "ConfigError", PyExc_ValueError);

    py::class_<AcquisitionProtocol>(m, "Protocol")
        .def(py::init<>())
        .def_readwrite("plds_s", &AcquisitionProtocol::plds_s)
        .def_readwrite("tau_s", &AcquisitionProtocol::tau_s)
        .def_readwrite("repeats", &AcquisitionProtocol::repeats)
        .def_readwrite("t1b_s", &AcquisitionProtocol::t1b_s)
        .def_readwrite("alpha", &AcquisitionProtocol::alpha)
        .def_readwrite("lambda_bp", &AcquisitionProtocol::lambda_bp)
        .def_readwrite("slice_dt_s", &AcquisitionProtocol::slice_dt_s);

    m.def(
        "signal_curve",
        [](double f_cbf, double delta_att, double m0, const AcquisitionProtocol& proto) {
            return kinetic::signal_curve({f_cbf, delta_att, m0}, proto);
        },
        py::arg("f_cbf"), py::arg("delta_att"), py::arg("m0"), py::arg("protocol") = AcquisitionProtocol{},
        "Noiseless difference signal at each PLD of the protocol.");

    m.def(
        "signal_at",
        [](double f_cbf, double delta_att, double m0, double pld_s, const AcquisitionProtocol& proto) {
            return kinetic::signal_at({f_cbf, delta_att, m0}, proto, pld_s);
        },
        py::arg("f_cbf"), py::arg("delta_att"), py::arg("m0"), py::arg("pld_s"),
        py::arg("protocol") = AcquisitionProtocol{});

    m.def(
        "fit_voxel",
        [](const std::vector<double>& pwi_means, double m0, const AcquisitionProtocol& proto) {
            const auto r = reffit::fit_voxel(pwi_means, m0, proto, {});
            py::dict d;
            d["cbf"] = r.f_cbf;
            d["att"] = r.delta_att;
            d["flag"] = static_cast<int>(r.flag);
            d["cost"] = r.cost;
            d["iterations"] = r.iterations;
            return d;
        },
        py::arg("pwi_means"), py::arg("m0"), py::arg("protocol") = AcquisitionProtocol{},
        "Weighted least-squares CBF/ATT fit of one voxel's per-PLD mean PWI.");

    m.def(
        "ssim", [](const FloatArray& pred, const FloatArray& ref, double data_range) {
            return metrics::ssim(view_of(pred), view_of(ref), data_range);
        },
        py::arg("pred"), py::arg("ref"), py::arg("data_range"));
    m.def(
        "psnr", [](const FloatArray& pred, const FloatArray& ref, double data_range) {
            return metrics::psnr(view_of(pred), view_of(ref), data_range);
        },
        py::arg("pred"), py::arg("ref"), py::arg("data_range"));

    m.def(
        "read_nifti",
        [](const std::filesystem::path& path) {
            const auto v = io::read_volume(path);
            return py::make_tuple(to_array(v), std::array<float, 3>(v.voxel_mm()), std::string(unit_name(v.unit())));
        },
        py::arg("path"), "Returns (array (nz, ny, nx), voxel_mm, unit).");
    m.def(
        "write_nifti",
        [](const std::filesystem::path& path, const FloatArray& data, std::array<float, 3> voxel_mm,
           const std::string& unit) { io::write_nifti(from_array(data, voxel_mm, unit), path); },
        py::arg("path"), py::arg("data"), py::arg("voxel_mm") = std::array<float, 3>{1, 1, 1},
        py::arg("unit") = "dimensionless");

    m.def(
        "validate_config", [](const std::string& text) { return io::to_json(io::parse_config(text)); },
        py::arg("json_text"), "Strict parse; returns the canonical JSON text.");
    m.def("default_config", [] { return io::to_json(io::ExperimentConfig{}); });

    m.def(
        "run_all",
        [](const std::filesystem::path& config, const std::filesystem::path& out, int threads) {
            const auto cfg = io::load_config(config);
            py::gil_scoped_release release;
            return pipeline::run_all(cfg, out, threads).table;
        },
        py::arg("config"), py::arg("out"), py::arg("threads") = 1,
        "Runs every pipeline stage and returns the evaluation table.");
}
