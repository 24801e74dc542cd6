#include "instab/checkpoint.hpp"
#include "instab/config.hpp"
#include "instab/errors.hpp"
#include "instab/evaluation.hpp"
#include "instab/interval.hpp"
#include "instab/network.hpp"
#include "instab/ood.hpp"
#include "instab/phantom.hpp"
#include "instab/radon.hpp"
#include "instab/uq.hpp"

#include <nlohmann/json.hpp>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>

namespace py = pybind11;
using namespace instab;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a)
{
    Tensor::Shape shape(a.shape(), a.shape() + a.ndim());
    if (shape.empty()) {
        shape = {1};
    }
    Tensor t(shape);
    std::copy_n(a.data(), t.size(), t.raw());
    return t;
}

Array to_array(const Tensor& t)
{
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array a(shape);
    std::copy_n(t.raw(), t.size(), a.mutable_data());
    return a;
}

/// Images may come in as [N, N]; the library wants [1, N, N].
Tensor image(const Array& a)
{
    Tensor t = to_tensor(a);
    if (t.rank() == 2) {
        t = t.reshaped({1, t.dim(0), t.dim(1)});
    }
    return t;
}

RadonGeometry geometry(std::size_t n, bool limited)
{
    return limited ? RadonGeometry::limited(n) : RadonGeometry::full(n, 180);
}

struct Network {
    NetworkSpec spec;
    NetworkParams params;
};

struct IntervalNetwork {
    NetworkSpec spec;
    IntervalParams params;
};

} // namespace

PYBIND11_MODULE(_instab, m)
{
    m.doc() = "Interval neural networks and instability detection for image reconstruction";

    // Translators run newest first, so the base class goes in before its subclasses.
    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<ShapeError>(m, "ShapeError", base);
    py::register_exception<ContractError>(m, "ContractError", base);
    py::register_exception<DegenerateSampleError>(m, "DegenerateSampleError", base);
    py::register_exception<NumericalError>(m, "NumericalError", base);

    m.def("code_version", &code_version);

    m.def(
        "default_config", [](const std::string& task) { return nlohmann::json(default_config(task_from_string(task))).dump(); },
        py::arg("task"), "Default experiment config for 'denoise' or 'ct' as a JSON string.");
    m.def(
        "validate_config",
        [](const std::string& text) {
            auto cfg = nlohmann::json::parse(text).get<ExperimentConfig>();
            cfg.validate();
            return nlohmann::json(cfg).dump();
        },
        py::arg("config_json"), "Resolves a (partial) config against the defaults and validates it.");

    m.def(
        "make_phantom",
        [](const std::string& kind, std::size_t size, std::uint64_t seed) {
            const PhantomKind k = kind == "shepp_logan"       ? PhantomKind::shepp_logan
                                  : kind == "random_ellipses" ? PhantomKind::random_ellipses
                                  : kind == "texture"         ? PhantomKind::texture
                                                              : throw ConfigError("unknown phantom kind " + kind);
            return to_array(make_phantom(k, size, seed));
        },
        py::arg("kind"), py::arg("size"), py::arg("seed") = 0);

    m.def(
        "radon", [](const Array& img, bool limited) {
            const Tensor x = image(img);
            return to_array(radon(x, geometry(x.dim(1), limited)));
        },
        py::arg("image"), py::arg("limited") = false);
    m.def(
        "backproject", [](const Array& sino, std::size_t n, bool limited) {
            return to_array(backproject(to_tensor(sino), geometry(n, limited)));
        },
        py::arg("sinogram"), py::arg("size"), py::arg("limited") = false);
    m.def(
        "fbp", [](const Array& sino, std::size_t n, bool limited) {
            return to_array(fbp(to_tensor(sino), geometry(n, limited)));
        },
        py::arg("sinogram"), py::arg("size"), py::arg("limited") = false);

    m.def("pearson", [](const Array& a, const Array& b) { return pearson(to_tensor(a), to_tensor(b)); });
    m.def("advdetect_score", [](const Array& uc, const Array& ua, const Array& rc, const Array& ra) {
        return advdetect_score(to_tensor(uc), to_tensor(ua), to_tensor(rc), to_tensor(ra));
    });
    m.def("artdetect_score", [](const Array& uc, const Array& uo, const Array& mask) {
        return artdetect_score(to_tensor(uc), to_tensor(uo), to_tensor(mask));
    });
    m.def(
        "render_heatmap", [](const Array& img, double lo, double hi, const std::string& path) {
            render_heatmap(to_tensor(img), lo, hi, path);
        },
        py::arg("image"), py::arg("lo"), py::arg("hi"), py::arg("path"));
    m.def("load_tensor", [](const std::string& path) { return to_array(load_tensor(path)); });
    m.def("save_tensor", [](const std::string& path, const Array& a) { save_tensor(path, to_tensor(a)); });

    py::class_<Network>(m, "Network")
        .def_static(
            "load",
            [](const std::string& path) {
                auto l = load_network(path);
                return Network{std::move(l.spec), std::move(l.params)};
            })
        .def_static(
            "denoiser",
            [](std::size_t side, std::size_t layers, std::size_t channels, double rate, std::uint64_t seed) {
                auto spec = make_denoiser_spec(side, layers, channels, rate);
                return Network{spec, init_params(spec, seed)};
            },
            py::arg("side"), py::arg("layers") = 6, py::arg("channels") = 16, py::arg("dropout") = 0.05,
            py::arg("seed") = 0)
        .def_property_readonly("input_shape", [](const Network& n) { return n.spec.input_shape; })
        .def_property_readonly("parameter_count", [](const Network& n) { return n.params.parameter_count(); })
        .def("forward", [](const Network& n, const Array& x) { return to_array(forward(n.spec, n.params, image(x))); })
        .def(
            "mcdrop",
            [](const Network& n, const Array& x, std::size_t T, std::uint64_t seed) {
                auto r = mcdrop_uncertainty(n.spec, n.params, image(x), {T, {}, seed});
                return py::make_tuple(to_array(r.mean), to_array(r.heatmap));
            },
            py::arg("x"), py::arg("T") = 16, py::arg("seed") = 0)
        .def(
            "to_interval",
            [](const Network& n, std::size_t k) {
                return IntervalNetwork{n.spec, make_interval_params(n.spec, n.params, k)};
            },
            py::arg("interval_layers"));

    py::class_<IntervalNetwork>(m, "IntervalNetwork")
        .def_static("load",
                    [](const std::string& path) {
                        auto [spec, ip] = load_interval_network(path);
                        return IntervalNetwork{std::move(spec), std::move(ip)};
                    })
        .def_property_readonly("interval_layers", [](const IntervalNetwork& n) { return n.params.interval_layers; })
        .def("forward", [](const IntervalNetwork& n, const Array& x) {
            const auto p = inn_forward(n.spec, n.params, image(x));
            return py::make_tuple(to_array(p.central), to_array(p.lower), to_array(p.upper));
        });
}
