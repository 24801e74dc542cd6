#include "instab/ood.hpp"

#include "instab/errors.hpp"
#include "instab/rng.hpp"

#include <array>
#include <cmath>
#include <numeric>
#include <string_view>

namespace instab {

std::string to_string(HalfSide side)
{
    switch (side) {
    case HalfSide::left:
        return "left";
    case HalfSide::right:
        return "right";
    case HalfSide::random:
        return "random";
    }
    return "unknown";
}

HalfSide half_side_from_string(const std::string& name)
{
    for (auto s : {HalfSide::left, HalfSide::right, HalfSide::random}) {
        if (to_string(s) == name) {
            return s;
        }
    }
    throw ConfigError("unknown half '" + name + "'");
}

namespace {

std::pair<std::size_t, std::size_t> dims(const Tensor& x, const char* what)
{
    const auto& s = x.shape();
    if (s.size() == 3 && s[0] == 1) {
        return {s[1], s[2]};
    }
    if (s.size() == 2) {
        return {s[0], s[1]};
    }
    throw ShapeError(std::string(what) + ": expected a single-channel image, got " + shape_str(s));
}

} // namespace

OodSample salt_pepper_half(const Tensor& clean, const NoiseModel& noise, const SaltPepperConfig& cfg)
{
    if (!(cfg.amount > 0.0 && cfg.amount <= 1.0)) {
        throw ConfigError("salt_pepper_half: amount must lie in (0, 1]");
    }
    const auto [h, w] = dims(clean, "salt_pepper_half");
    Rng rng(derive_seed(cfg.seed, {0x5a17}));
    bool left = cfg.side == HalfSide::left;
    if (cfg.side == HalfSide::random) {
        left = uniform01(rng) < 0.5;
    }
    const std::size_t c0 = left ? 0 : w / 2;
    const std::size_t c1 = left ? w / 2 : w;

    Tensor input = clip(add_noise(clean, noise), 0.0, 1.0);
    Tensor mask(clean.shape());
    std::vector<std::size_t> half;
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = c0; c < c1; ++c) {
            const auto i = r * w + c;
            mask[i] = 1.0;
            input[i] = clean[i];
            half.push_back(i);
        }
    }
    // Partial Fisher-Yates: the first `count` entries are the corrupted pixels.
    const auto count = static_cast<std::size_t>(std::lround(cfg.amount * static_cast<double>(half.size())));
    for (std::size_t k = 0; k < count; ++k) {
        std::swap(half[k], half[k + uniform_index(rng, half.size() - k)]);
        input[half[k]] = uniform01(rng) < 0.5 ? 0.0 : 1.0;
    }
    return {std::move(input), std::move(mask)};
}

namespace {

constexpr std::array<std::string_view, 16> dove_art{
    "...........#............",
    "..........##............",
    ".........###.......#....",
    "........####......##....",
    ".......#####.....###....",
    "......######....####....",
    ".....#######...#####....",
    "..##.########.######....",
    ".####################...",
    "#######################.",
    "..####################..",
    "....###############.....",
    "......##########........",
    ".......##....###........",
    "......##......###.......",
    "...............##.......",
};

} // namespace

Tensor dove_mask(std::size_t image_side, double area_fraction)
{
    if (!(area_fraction > 0.0 && area_fraction < 1.0)) {
        throw ConfigError("dove_mask: area fraction must lie in (0, 1)");
    }
    const std::size_t ah = dove_art.size();
    const std::size_t aw = dove_art[0].size();
    double filled = 0.0;
    for (auto row : dove_art) {
        filled += static_cast<double>(std::count(row.begin(), row.end(), '#'));
    }
    const double target = area_fraction * static_cast<double>(image_side * image_side);
    const double scale = std::sqrt(target / filled);
    const auto h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(scale * ah)));
    const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(scale * aw)));
    Tensor mask({h, w});
    for (std::size_t r = 0; r < h; ++r) {
        const auto ar = std::min(ah - 1, static_cast<std::size_t>((r + 0.5) * ah / h));
        for (std::size_t c = 0; c < w; ++c) {
            const auto ac = std::min(aw - 1, static_cast<std::size_t>((c + 0.5) * aw / w));
            mask[r * w + c] = dove_art[ar][ac] == '#' ? 1.0 : 0.0;
        }
    }
    return mask;
}

OodSample insert_silhouette(const Tensor& clean, const Tensor& shape, double intensity,
                            std::optional<Placement> position, std::uint64_t seed)
{
    if (!(intensity >= 0.0 && intensity <= 1.0)) {
        throw ContractError("insert_silhouette: intensity must lie in [0,1]");
    }
    if (shape.rank() != 2) {
        throw ShapeError("insert_silhouette: shape must be a 2-D mask, got " + shape_str(shape.shape()));
    }
    for (double v : shape.data()) {
        if (v != 0.0 && v != 1.0) {
            throw ContractError("insert_silhouette: shape mask must be binary");
        }
    }
    const auto [h, w] = dims(clean, "insert_silhouette");
    const auto sh = shape.dim(0);
    const auto sw = shape.dim(1);
    if (sh > h || sw > w) {
        throw ContractError("insert_silhouette: shape larger than image");
    }
    Placement at;
    if (position) {
        at = *position;
        if (at.row + sh > h || at.col + sw > w) {
            throw ContractError("insert_silhouette: shape out of bounds at (" + std::to_string(at.row) + ", " +
                                std::to_string(at.col) + ")");
        }
    } else {
        Rng rng(derive_seed(seed, {0xd0fe}));
        at.row = uniform_index(rng, h - sh + 1);
        at.col = uniform_index(rng, w - sw + 1);
    }
    Tensor image = clean;
    Tensor mask(clean.shape());
    for (std::size_t r = 0; r < sh; ++r) {
        for (std::size_t c = 0; c < sw; ++c) {
            if (shape[r * sw + c] != 0.0) {
                const auto i = (at.row + r) * w + at.col + c;
                image[i] = intensity;
                mask[i] = 1.0;
            }
        }
    }
    return {std::move(image), std::move(mask)};
}

} // namespace instab
