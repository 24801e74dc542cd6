#include "instab/checkpoint.hpp"
#include "instab/data.hpp"
#include "instab/errors.hpp"
#include "instab/ood.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

using namespace instab;

TEST_CASE("salt_pepper_half: corrupted half and untouched Gaussian half")
{
    const Tensor clean = make_phantom(PhantomKind::texture, 128, 3);
    const NoiseModel noise{25.0 / 255.0, 17};
    const Tensor reference = denoise_input(clean, noise);
    for (auto side : {HalfSide::left, HalfSide::right}) {
        const auto s = salt_pepper_half(clean, noise, {0.1, side, 5});
        std::size_t in_half = 0;
        std::size_t corrupted = 0;
        for (std::size_t r = 0; r < 128; ++r) {
            for (std::size_t c = 0; c < 128; ++c) {
                const auto i = r * 128 + c;
                const bool expect_mask = side == HalfSide::left ? c < 64 : c >= 64;
                CHECK(s.mask[i] == (expect_mask ? 1.0 : 0.0));
                if (!expect_mask) {
                    CHECK(s.input[i] == reference[i]);
                    continue;
                }
                ++in_half;
                if (s.input[i] != clean[i]) {
                    CHECK((s.input[i] == 0.0 || s.input[i] == 1.0));
                    ++corrupted;
                }
            }
        }
        // Pixels already at 0 or 1 may be "corrupted" to their own value.
        const double frac = static_cast<double>(corrupted) / static_cast<double>(in_half);
        CHECK(frac == doctest::Approx(0.1).epsilon(0.2));
        CHECK(std::abs(frac - 0.1) <= 0.02);
    }
    CHECK_THROWS_AS(salt_pepper_half(clean, noise, {0.0, HalfSide::left, 1}), ConfigError);
    const auto a = salt_pepper_half(clean, noise, {0.1, HalfSide::random, 8});
    const auto b = salt_pepper_half(clean, noise, {0.1, HalfSide::random, 8});
    CHECK(a.input == b.input);
    CHECK(a.mask == b.mask);
}

TEST_CASE("dove mask covers about 3% of the image")
{
    for (std::size_t side : {64u, 128u}) {
        const Tensor m = dove_mask(side);
        const double frac = sum(m) / static_cast<double>(side * side);
        CHECK(frac == doctest::Approx(0.03).epsilon(0.25));
    }
}

TEST_CASE("insert_silhouette: locality, intensity, position invariance")
{
    const Tensor clean = make_phantom(PhantomKind::random_ellipses, 64, 1);
    const Tensor shape = dove_mask(64);
    const double area = sum(shape);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto s = insert_silhouette(clean, shape, 1.0, std::nullopt, seed);
        CHECK(sum(s.mask) == area);
        for (std::size_t i = 0; i < clean.size(); ++i) {
            CHECK(s.input[i] == (s.mask[i] != 0.0 ? 1.0 : clean[i]));
        }
        CHECK(insert_silhouette(clean, shape, 1.0, std::nullopt, seed).input == s.input);
    }
    const auto empty = insert_silhouette(clean, Tensor({4, 4}), 0.7, Placement{0, 0}, 0);
    CHECK(empty.input == clean);
    CHECK(sum(empty.mask) == 0.0);
    CHECK_THROWS_AS(insert_silhouette(clean, shape, 1.0, Placement{60, 60}, 0), ContractError);
    CHECK_THROWS_AS(insert_silhouette(clean, shape, 1.5, std::nullopt, 0), ContractError);
}

TEST_CASE("corpus: deterministic 8/1/1 split and consistent pipelines")
{
    CorpusSpec c;
    c.task = Task::ct;
    c.count = 20;
    c.image_size = 32;
    CHECK(c.split_range(Split::train) == std::pair<std::size_t, std::size_t>{0, 16});
    CHECK(c.split_range(Split::val) == std::pair<std::size_t, std::size_t>{16, 18});
    CHECK(c.split_range(Split::test) == std::pair<std::size_t, std::size_t>{18, 20});
    const auto s = make_sample(c, 3);
    CHECK(s.input == make_sample(c, 3).input);
    CHECK(s.input == simulate_input(c, s.clean, s.seed));
    CHECK(min_value(s.input) >= 0.0);
    CHECK(max_value(s.input) <= 1.0);

    nlohmann::json j = c;
    CHECK(j.get<CorpusSpec>() == c);

    c.task = Task::denoise;
    const auto d = make_sample(c, 3);
    CHECK(d.input == denoise_input(d.clean, c.noise_model(d.seed)));
    CHECK_THROWS_AS(task_from_string("mri"), ConfigError);
}

TEST_CASE("CT inputs stay inside the fixed rescaling window")
{
    // The affine window should not clip reconstructions of corpus phantoms.
    CorpusSpec c;
    c.task = Task::ct;
    c.image_size = 64;
    double lo = 1e9;
    double hi = -1e9;
    for (std::size_t i = 0; i < 60; ++i) {
        const auto clean = make_phantom(PhantomKind::random_ellipses, 64, c.sample_seed(i));
        const auto rec = fbp(radon(clean, c.geometry()), c.geometry());
        lo = std::min(lo, min_value(rec));
        hi = std::max(hi, max_value(rec));
    }
    MESSAGE("FBP range [" << lo << ", " << hi << "]");
    CHECK(lo > c.scaling.lo);
    CHECK(hi < c.scaling.hi);
}

TEST_CASE("write_corpus emits tensors and a manifest")
{
    CorpusSpec c;
    c.count = 10;
    c.image_size = 32;
    const auto dir = std::filesystem::temp_directory_path() / "instab_corpus_test";
    std::filesystem::remove_all(dir);
    write_corpus(c, dir);
    std::ifstream in(dir / "manifest.json");
    const auto m = nlohmann::json::parse(in);
    CHECK(m.at("files").size() == 10);
    CHECK(m.at("files")[9].at("split") == "test");
    CHECK(load_tensor(dir / m.at("files")[0].at("clean").get<std::string>()) == make_sample(c, 0).clean);
    std::filesystem::remove_all(dir);
}
