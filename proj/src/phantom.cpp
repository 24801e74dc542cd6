#include "instab/phantom.hpp"

#include "instab/errors.hpp"
#include "instab/rng.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace instab {

std::string to_string(PhantomKind kind)
{
    switch (kind) {
    case PhantomKind::shepp_logan:
        return "shepp_logan";
    case PhantomKind::random_ellipses:
        return "random_ellipses";
    case PhantomKind::texture:
        return "texture";
    }
    return "unknown";
}

PhantomKind phantom_kind_from_string(const std::string& name)
{
    for (auto k : {PhantomKind::shepp_logan, PhantomKind::random_ellipses, PhantomKind::texture}) {
        if (to_string(k) == name) {
            return k;
        }
    }
    throw ConfigError("unknown phantom kind '" + name + "'");
}

namespace {

struct Ellipse {
    double value;
    double a;
    double b;
    double x0;
    double y0;
    double phi_deg;

    bool contains(double x, double y) const
    {
        const double ph = phi_deg * std::numbers::pi / 180.0;
        const double dx = x - x0;
        const double dy = y - y0;
        const double u = dx * std::cos(ph) + dy * std::sin(ph);
        const double v = -dx * std::sin(ph) + dy * std::cos(ph);
        return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
};

// Modified (higher-contrast) Shepp-Logan table.
constexpr std::array<Ellipse, 10> shepp_logan_table{{
    {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
    {-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0},
    {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0},
    {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0},
    {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},
    {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
    {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},
    {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
    {0.1, 0.023, 0.023, 0.0, -0.606, 0.0},
    {0.1, 0.023, 0.046, 0.06, -0.605, 0.0},
}};

/// Sums ellipse values at `ss`^2 sample points per pixel on [-1,1]^2 (y up).
Tensor rasterize(const std::vector<Ellipse>& ellipses, std::size_t size, std::size_t ss)
{
    Tensor img({1, size, size});
    const double n = static_cast<double>(size);
    const double inv = 1.0 / static_cast<double>(ss * ss);
    for (std::size_t i = 0; i < size; ++i) {
        for (std::size_t j = 0; j < size; ++j) {
            double acc = 0.0;
            for (std::size_t si = 0; si < ss; ++si) {
                for (std::size_t sj = 0; sj < ss; ++sj) {
                    const double x = (2.0 * (static_cast<double>(j) + (sj + 0.5) / ss)) / n - 1.0;
                    const double y = 1.0 - (2.0 * (static_cast<double>(i) + (si + 0.5) / ss)) / n;
                    for (const auto& e : ellipses) {
                        if (e.contains(x, y)) {
                            acc += e.value;
                        }
                    }
                }
            }
            img[i * size + j] = acc * inv;
        }
    }
    return img;
}

Tensor random_ellipses(std::size_t size, std::uint64_t seed)
{
    Rng rng(seed);
    auto u = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
    std::vector<Ellipse> es;
    // Body outline, then interior structures with signed contrast.
    es.push_back({u(0.3, 0.5), u(0.6, 0.85), u(0.6, 0.85), u(-0.05, 0.05), u(-0.05, 0.05), u(0.0, 180.0)});
    const std::size_t count = 4 + uniform_index(rng, 9);
    for (std::size_t k = 0; k < count; ++k) {
        const double r = u(0.0, 0.5);
        const double t = u(0.0, 2.0 * std::numbers::pi);
        const double sign = uniform01(rng) < 0.7 ? 1.0 : -1.0;
        es.push_back({sign * u(0.1, 0.5), u(0.04, 0.3), u(0.04, 0.3), r * std::cos(t), r * std::sin(t),
                      u(0.0, 180.0)});
    }
    Tensor img = rasterize(es, size, 2);
    return clip(img, 0.0, 1.0);
}

/// Bilinearly interpolated random lattice with `cells` cells per side.
void add_value_noise(Tensor& img, std::size_t size, std::size_t cells, double amplitude, Rng& rng)
{
    std::vector<double> grid((cells + 1) * (cells + 1));
    for (auto& g : grid) {
        g = uniform01(rng) * 2.0 - 1.0;
    }
    for (std::size_t i = 0; i < size; ++i) {
        const double gy = static_cast<double>(i) * static_cast<double>(cells) / static_cast<double>(size);
        const auto iy = static_cast<std::size_t>(gy);
        const double fy = gy - static_cast<double>(iy);
        for (std::size_t j = 0; j < size; ++j) {
            const double gx = static_cast<double>(j) * static_cast<double>(cells) / static_cast<double>(size);
            const auto ix = static_cast<std::size_t>(gx);
            const double fx = gx - static_cast<double>(ix);
            const auto at = [&](std::size_t a, std::size_t b) { return grid[a * (cells + 1) + b]; };
            const double v = (1 - fy) * ((1 - fx) * at(iy, ix) + fx * at(iy, ix + 1)) +
                             fy * ((1 - fx) * at(iy + 1, ix) + fx * at(iy + 1, ix + 1));
            img[i * size + j] += amplitude * v;
        }
    }
}

Tensor texture(std::size_t size, std::uint64_t seed)
{
    Rng rng(seed);
    Tensor img({1, size, size});
    double amp = 1.0;
    for (std::size_t cells = 2; cells <= size / 4; cells *= 2) {
        add_value_noise(img, size, cells, amp, rng);
        amp *= 0.55;
    }
    // Flat-shaded shapes give the sharp edges that smooth noise lacks.
    std::vector<Ellipse> shapes;
    const std::size_t count = 2 + uniform_index(rng, 5);
    for (std::size_t k = 0; k < count; ++k) {
        shapes.push_back({(uniform01(rng) * 2.0 - 1.0) * 1.2, 0.1 + 0.5 * uniform01(rng), 0.1 + 0.5 * uniform01(rng),
                          uniform01(rng) * 1.6 - 0.8, uniform01(rng) * 1.6 - 0.8, 180.0 * uniform01(rng)});
    }
    img += rasterize(shapes, size, 1);
    // Oriented stripes inside a random band.
    const double th = std::numbers::pi * uniform01(rng);
    const double freq = 0.15 + 0.5 * uniform01(rng);
    const double off = uniform01(rng) * static_cast<double>(size);
    for (std::size_t i = 0; i < size; ++i) {
        for (std::size_t j = 0; j < size; ++j) {
            const double s = static_cast<double>(j) * std::cos(th) + static_cast<double>(i) * std::sin(th);
            if (std::abs(s - off) < static_cast<double>(size) / 6.0) {
                img[i * size + j] += 0.4 * std::sin(freq * (static_cast<double>(j) * std::sin(th) -
                                                             static_cast<double>(i) * std::cos(th)));
            }
        }
    }
    const double lo = min_value(img);
    const double hi = max_value(img);
    for (auto& v : img.data()) {
        v = (v - lo) / (hi - lo);
    }
    return img;
}

} // namespace

Tensor make_phantom(PhantomKind kind, std::size_t size, std::uint64_t seed)
{
    if (size < 32) {
        throw ConfigError("make_phantom: size must be at least 32, got " + std::to_string(size));
    }
    switch (kind) {
    case PhantomKind::shepp_logan: {
        const std::vector<Ellipse> table(shepp_logan_table.begin(), shepp_logan_table.end());
        return clip(rasterize(table, size, 1), 0.0, 1.0);
    }
    case PhantomKind::random_ellipses:
        return random_ellipses(size, seed);
    case PhantomKind::texture:
        return texture(size, seed);
    }
    throw ConfigError("make_phantom: unknown kind");
}

Tensor make_disk(std::size_t size, double radius, std::size_t supersample)
{
    Tensor img({1, size, size});
    const double c = (static_cast<double>(size) - 1.0) / 2.0;
    const double ss = static_cast<double>(supersample);
    for (std::size_t i = 0; i < size; ++i) {
        for (std::size_t j = 0; j < size; ++j) {
            std::size_t hits = 0;
            for (std::size_t a = 0; a < supersample; ++a) {
                for (std::size_t b = 0; b < supersample; ++b) {
                    const double y = static_cast<double>(i) - 0.5 + (a + 0.5) / ss - c;
                    const double x = static_cast<double>(j) - 0.5 + (b + 0.5) / ss - c;
                    hits += (x * x + y * y <= radius * radius) ? 1 : 0;
                }
            }
            img[i * size + j] = static_cast<double>(hits) / (ss * ss);
        }
    }
    return img;
}

} // namespace instab
