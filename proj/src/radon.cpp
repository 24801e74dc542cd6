#include "instab/radon.hpp"

#include "instab/errors.hpp"
#include "instab/rng.hpp"

#include <fftw3.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <random>

namespace instab {

RadonGeometry RadonGeometry::full(std::size_t image_size, std::size_t num_angles)
{
    if (num_angles == 0) {
        throw ConfigError("radon: need at least one angle");
    }
    RadonGeometry g;
    g.image_size = image_size;
    g.num_detectors = default_detectors(image_size);
    g.angle_step_deg = 180.0 / static_cast<double>(num_angles);
    for (std::size_t k = 0; k < num_angles; ++k) {
        g.angles_deg.push_back(g.angle_step_deg * static_cast<double>(k));
    }
    g.validate();
    return g;
}

RadonGeometry RadonGeometry::limited(std::size_t image_size, double wedge_start, double wedge_end, double step)
{
    if (!(step > 0.0) || !(wedge_start <= wedge_end) || wedge_start < 0.0 || wedge_end > 180.0) {
        throw ConfigError("radon: invalid limited-angle geometry");
    }
    RadonGeometry g;
    g.image_size = image_size;
    g.num_detectors = default_detectors(image_size);
    g.angle_step_deg = step;
    g.wedge_start_deg = wedge_start;
    g.wedge_end_deg = wedge_end;
    for (std::size_t k = 0;; ++k) {
        const double a = step * static_cast<double>(k);
        if (a >= 180.0 - 1e-9) {
            break;
        }
        if (a >= wedge_start - 1e-9 && a < wedge_end - 1e-9) {
            continue;
        }
        g.angles_deg.push_back(a);
    }
    g.validate();
    return g;
}

std::size_t RadonGeometry::default_detectors(std::size_t image_size)
{
    return static_cast<std::size_t>(std::ceil(static_cast<double>(image_size) * std::numbers::sqrt2)) + 2;
}

void RadonGeometry::validate() const
{
    if (image_size == 0 || angles_deg.empty()) {
        throw ConfigError("radon: empty geometry");
    }
    if (static_cast<double>(num_detectors) < static_cast<double>(image_size) * std::numbers::sqrt2) {
        throw ConfigError("radon: " + std::to_string(num_detectors) + " detectors do not cover the image diagonal");
    }
    for (double a : angles_deg) {
        if (!(a >= 0.0 && a < 180.0)) {
            throw ConfigError("radon: angle " + std::to_string(a) + " outside [0, 180)");
        }
    }
    if (!(angle_step_deg > 0.0)) {
        throw ConfigError("radon: angle step must be positive");
    }
}

void to_json(nlohmann::json& j, const RadonGeometry& g)
{
    j = {{"image_size", g.image_size},       {"angles_deg", g.angles_deg},
         {"num_detectors", g.num_detectors}, {"angle_step_deg", g.angle_step_deg},
         {"wedge_start_deg", g.wedge_start_deg}, {"wedge_end_deg", g.wedge_end_deg}};
}

void from_json(const nlohmann::json& j, RadonGeometry& g)
{
    j.at("image_size").get_to(g.image_size);
    j.at("angles_deg").get_to(g.angles_deg);
    j.at("num_detectors").get_to(g.num_detectors);
    j.at("angle_step_deg").get_to(g.angle_step_deg);
    j.at("wedge_start_deg").get_to(g.wedge_start_deg);
    j.at("wedge_end_deg").get_to(g.wedge_end_deg);
    g.validate();
}

namespace {

void check_image(const Tensor& image, const RadonGeometry& geom)
{
    const auto n = geom.image_size;
    const auto& s = image.shape();
    const bool ok = (s == Tensor::Shape{n, n}) || (s == Tensor::Shape{1, n, n});
    if (!ok) {
        throw ShapeError("radon: image " + shape_str(s) + " does not match geometry size " + std::to_string(n));
    }
}

/// Calls f(angle, pixel, detector, weight) for every non-zero entry of the
/// system matrix. Each ray is sampled once per column (or row, whichever the
/// ray crosses faster) with linear interpolation between the two nearest
/// pixels, weighted by the path length per step.
template <class F>
void for_each_entry(const RadonGeometry& geom, F&& f)
{
    const auto n = geom.image_size;
    const double c = (static_cast<double>(n) - 1.0) / 2.0;
    const double dc = (static_cast<double>(geom.num_detectors) - 1.0) / 2.0;
    const auto last = static_cast<std::ptrdiff_t>(n) - 1;
    for (std::size_t k = 0; k < geom.num_angles(); ++k) {
        const double th = geom.angles_deg[k] * std::numbers::pi / 180.0;
        const double ct = std::cos(th);
        const double st = std::sin(th);
        const bool by_column = std::abs(st) >= std::abs(ct);
        const double step = 1.0 / (by_column ? std::abs(st) : std::abs(ct));
        for (std::size_t d = 0; d < geom.num_detectors; ++d) {
            const double s = static_cast<double>(d) - dc;
            for (std::size_t m = 0; m < n; ++m) {
                // Crossing point of the ray with column (or row) m, as a fractional row (or column).
                double pos;
                if (by_column) {
                    const double x = static_cast<double>(m) - c;
                    const double t = (s * ct - x) / st;
                    pos = c - (s * st + t * ct);
                } else {
                    const double y = c - static_cast<double>(m);
                    const double t = (y - s * st) / ct;
                    pos = (s * ct - t * st) + c;
                }
                const double fl = std::floor(pos);
                const double w = pos - fl;
                const auto q = static_cast<std::ptrdiff_t>(fl);
                auto emit = [&](std::ptrdiff_t idx, double wt) {
                    if (idx < 0 || idx > last || wt == 0.0) {
                        return;
                    }
                    const auto u = static_cast<std::size_t>(idx);
                    f(k, by_column ? u * n + m : m * n + u, d, wt * step);
                };
                emit(q, 1.0 - w);
                emit(q + 1, w);
            }
        }
    }
}

} // namespace

Tensor radon(const Tensor& image, const RadonGeometry& geom)
{
    geom.validate();
    check_image(image, geom);
    Tensor sino(geom.sinogram_shape());
    const double* img = image.raw();
    double* out = sino.raw();
    const auto nd = geom.num_detectors;
    for_each_entry(geom, [&](std::size_t k, std::size_t p, std::size_t d, double w) { out[k * nd + d] += w * img[p]; });
    return sino;
}

Tensor backproject(const Tensor& sinogram, const RadonGeometry& geom)
{
    geom.validate();
    if (sinogram.shape() != geom.sinogram_shape()) {
        throw ShapeError("backproject: sinogram " + shape_str(sinogram.shape()) + " expected " +
                         shape_str(geom.sinogram_shape()));
    }
    Tensor image(geom.image_shape());
    const double* s = sinogram.raw();
    double* out = image.raw();
    const auto nd = geom.num_detectors;
    for_each_entry(geom, [&](std::size_t k, std::size_t p, std::size_t d, double w) { out[p] += w * s[k * nd + d]; });
    return image;
}

namespace {

struct FftwFree {
    void operator()(void* p) const { fftw_free(p); }
};

std::size_t filter_length(std::size_t detectors)
{
    std::size_t p = 1;
    while (p < 2 * detectors) {
        p *= 2;
    }
    return p;
}

/// Spectrum of the sampled ramp kernel h[0] = 1/4, h[odd n] = -1/(pi n)^2.
std::vector<double> ramp_spectrum(std::size_t len)
{
    std::vector<double> h(len, 0.0);
    h[0] = 0.25;
    for (std::size_t n = 1; n < len / 2; n += 2) {
        const double v = -1.0 / (std::numbers::pi * std::numbers::pi * static_cast<double>(n * n));
        h[n] = v;
        h[len - n] = v;
    }
    const std::size_t nc = len / 2 + 1;
    std::unique_ptr<fftw_complex[], FftwFree> spec(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * nc)));
    fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(len), h.data(), spec.get(), FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
    std::vector<double> out(nc);
    for (std::size_t f = 0; f < nc; ++f) {
        out[f] = spec[f][0];
    }
    return out;
}

} // namespace

Tensor ramp_filter(const Tensor& sinogram)
{
    if (sinogram.rank() != 2) {
        throw ShapeError("ramp_filter: expected [angles, detectors], got " + shape_str(sinogram.shape()));
    }
    const auto na = sinogram.dim(0);
    const auto nd = sinogram.dim(1);
    const auto len = filter_length(nd);
    const auto nc = len / 2 + 1;
    const auto H = ramp_spectrum(len);

    std::unique_ptr<double[], FftwFree> buf(static_cast<double*>(fftw_malloc(sizeof(double) * len)));
    std::unique_ptr<fftw_complex[], FftwFree> spec(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * nc)));
    fftw_plan fwd = fftw_plan_dft_r2c_1d(static_cast<int>(len), buf.get(), spec.get(), FFTW_ESTIMATE);
    fftw_plan inv = fftw_plan_dft_c2r_1d(static_cast<int>(len), spec.get(), buf.get(), FFTW_ESTIMATE);

    Tensor out(sinogram.shape());
    const double norm = 1.0 / static_cast<double>(len);
    for (std::size_t a = 0; a < na; ++a) {
        std::fill(buf.get(), buf.get() + len, 0.0);
        std::copy(sinogram.raw() + a * nd, sinogram.raw() + (a + 1) * nd, buf.get());
        fftw_execute(fwd);
        for (std::size_t f = 0; f < nc; ++f) {
            spec[f][0] *= H[f] * norm;
            spec[f][1] *= H[f] * norm;
        }
        fftw_execute(inv);
        std::copy(buf.get(), buf.get() + nd, out.raw() + a * nd);
    }
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
    return out;
}

Tensor fbp(const Tensor& sinogram, const RadonGeometry& geom)
{
    geom.validate();
    if (sinogram.shape() != geom.sinogram_shape()) {
        throw ShapeError("fbp: sinogram " + shape_str(sinogram.shape()) + " expected " +
                         shape_str(geom.sinogram_shape()));
    }
    Tensor image = backproject(ramp_filter(sinogram), geom);
    image *= geom.angle_step_deg * std::numbers::pi / 180.0;
    return image;
}

Tensor add_noise(const Tensor& image, const NoiseModel& model)
{
    if (!(model.sigma >= 0.0)) {
        throw ConfigError("add_noise: sigma must be non-negative");
    }
    Tensor out = image;
    if (model.sigma == 0.0) {
        return out;
    }
    Rng rng(model.seed);
    std::normal_distribution<double> gauss(0.0, model.sigma);
    for (auto& v : out.data()) {
        v += gauss(rng);
    }
    return out;
}

} // namespace instab
