#include "instab/errors.hpp"
#include "instab/evaluation.hpp"
#include "instab/rng.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

using namespace instab;

namespace {

Tensor random_tensor(std::size_t n, Rng& rng)
{
    Tensor t({n});
    for (auto& v : t.data()) {
        v = uniform01(rng);
    }
    return t;
}

Tensor permuted(const Tensor& t, const std::vector<std::size_t>& perm)
{
    Tensor out(t.shape());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        out[i] = t[perm[i]];
    }
    return out;
}

std::vector<unsigned char> pgm_pixels(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    std::string magic;
    std::size_t w = 0;
    std::size_t h = 0;
    int maxv = 0;
    in >> magic >> w >> h >> maxv;
    in.get();
    std::vector<unsigned char> px(w * h);
    in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    CHECK(magic == "P5");
    CHECK(maxv == 255);
    return px;
}

ScoreRecord rec(std::size_t run, std::size_t id, std::optional<double> r)
{
    ScoreRecord s;
    s.method = "inn";
    s.task = "ct";
    s.experiment = "advdetect";
    s.run = run;
    s.sample_id = id;
    s.r = r;
    s.moments = {4, 1, 2, 1, 2, 0.5 + 0.1 * static_cast<double>(id)};
    return s;
}

} // namespace

TEST_CASE("pearson examples")
{
    const Tensor a({4}, std::vector<double>{1, 2, 3, 5});
    Tensor neg = a;
    neg *= -1.0;
    CHECK(pearson(a, a) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(pearson(a, neg) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK_THROWS_AS(pearson(Tensor({4}, 2.0), a), DegenerateSampleError);
    CHECK_THROWS_AS(pearson(a, Tensor({3})), ShapeError);
}

TEST_CASE("pearson is symmetric, bounded and invariant under positive affine maps")
{
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor a = random_tensor(100, rng);
        const Tensor b = random_tensor(100, rng) + a;
        const double r = pearson(a, b);
        CHECK(r >= -1.0);
        CHECK(r <= 1.0);
        CHECK(pearson(b, a) == doctest::Approx(r).epsilon(1e-15));
        const double alpha = 0.1 + 10.0 * uniform01(rng);
        const double c = 20.0 * uniform01(rng) - 10.0;
        Tensor t = a;
        for (auto& v : t.data()) {
            v = alpha * v + c;
        }
        CHECK(std::abs(pearson(t, b) - r) < 1e-12);
        CHECK(std::abs(PearsonMoments::of(a, b).correlation() - r) < 1e-10);
    }
}

TEST_CASE("advdetect_score examples and permutation invariance")
{
    Rng rng(2);
    const Tensor u0 = random_tensor(64, rng);
    const Tensor r0 = random_tensor(64, rng);
    const Tensor delta = random_tensor(64, rng);
    CHECK(advdetect_score(u0, u0 + delta, r0, r0 + delta) == doctest::Approx(1.0));
    Tensor scaled = delta;
    scaled *= 3.5;
    CHECK(advdetect_score(u0, u0 + scaled, r0, r0 + delta) == doctest::Approx(1.0));

    const Tensor u1 = random_tensor(64, rng);
    const Tensor r1 = random_tensor(64, rng);
    std::vector<std::size_t> perm(64);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    CHECK(advdetect_score(permuted(u0, perm), permuted(u1, perm), permuted(r0, perm), permuted(r1, perm)) ==
          doctest::Approx(advdetect_score(u0, u1, r0, r1)).epsilon(1e-12));
}

TEST_CASE("advdetect_score null distribution on independent fields")
{
    Rng rng(3);
    int small = 0;
    const int trials = 200;
    for (int t = 0; t < trials; ++t) {
        const Tensor z({128 * 128});
        const double r = advdetect_score(z, random_tensor(128 * 128, rng), z, random_tensor(128 * 128, rng));
        small += std::abs(r) < 0.05 ? 1 : 0;
    }
    CHECK(small >= 198);
}

TEST_CASE("artdetect_score examples")
{
    Tensor mask({10});
    for (std::size_t i = 0; i < 4; ++i) {
        mask[i] = 1.0;
    }
    const Tensor zero({10});
    CHECK(artdetect_score(zero, mask, mask) == doctest::Approx(1.0));
    CHECK(artdetect_score(zero, Tensor({10}, 1.0) - mask, mask) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(artdetect_score(zero, Tensor({10}, 0.3), mask), DegenerateSampleError);
    CHECK_THROWS_AS(artdetect_score(zero, mask, Tensor({10}, 1.0)), DegenerateSampleError);
    CHECK_THROWS_AS(artdetect_score(zero, mask, Tensor({10}, 0.5)), ContractError);
    const auto r = make_record("inn", "ct", "artdetect", 0, 0, zero, mask);
    CHECK(!r.r.has_value());
}

TEST_CASE("aggregate: run means, population std, degenerate counts")
{
    CHECK(aggregate({rec(0, 0, 0.4), rec(0, 1, 0.6)})[0].std == 0.0);
    std::vector<ScoreRecord> records{rec(0, 0, 0.5), rec(1, 0, 0.6), rec(2, 0, 0.7), rec(2, 1, std::nullopt)};
    const auto rows = aggregate(records);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].mean == doctest::Approx(0.6));
    CHECK(rows[0].std == doctest::Approx(0.0816).epsilon(1e-3));
    CHECK(rows[0].degenerate == 1);
    CHECK(rows[0].samples == 3);
    CHECK_THROWS_AS(aggregate({}), ContractError);
    const auto all_bad = aggregate({rec(0, 0, std::nullopt), rec(1, 0, std::nullopt)});
    REQUIRE(all_bad.size() == 1);
    CHECK(std::isnan(all_bad[0].mean));
    CHECK(all_bad[0].degenerate == 2);
    CHECK(summary_json(all_bad)["table"]["advdetect"]["ct"]["inn"]["mean"].is_null());
}

TEST_CASE("aggregate is independent of record order")
{
    Rng rng(4);
    std::vector<ScoreRecord> records;
    for (std::size_t run = 0; run < 3; ++run) {
        for (std::size_t id = 0; id < 30; ++id) {
            for (const char* m : {"inn", "mcdrop"}) {
                auto r = rec(run, id, uniform01(rng) * 2.0 - 1.0);
                r.method = m;
                records.push_back(r);
            }
        }
    }
    const auto ref = summary_json(aggregate(records)).dump();
    for (int t = 0; t < 5; ++t) {
        std::shuffle(records.begin(), records.end(), rng);
        CHECK(summary_json(aggregate(records)).dump() == ref);
    }
}

TEST_CASE("records survive a CSV round trip")
{
    std::vector<ScoreRecord> records{rec(0, 0, 0.123456789012345678), rec(1, 2, std::nullopt)};
    const auto path = std::filesystem::temp_directory_path() / "instab_records.csv";
    write_records_csv(path, records);
    const auto back = read_records_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(*back[0].r == *records[0].r);
    CHECK(!back[1].r.has_value());
    CHECK(back[1].moments.sab == records[1].moments.sab);
    std::filesystem::remove(path);
}

TEST_CASE("render_heatmap windows")
{
    const auto path = std::filesystem::temp_directory_path() / "instab_heat.pgm";
    render_heatmap(Tensor({1, 4, 5}, -0.2), -0.2, 0.8, path);
    for (auto p : pgm_pixels(path)) {
        CHECK(p == 0);
    }
    render_heatmap(Tensor({4, 5}, 0.8), -0.2, 0.8, path);
    for (auto p : pgm_pixels(path)) {
        CHECK(p == 255);
    }
    Tensor ramp({1, 2, 3}, std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
    render_heatmap(ramp, min_value(ramp), max_value(ramp), path);
    const auto px = pgm_pixels(path);
    CHECK(*std::min_element(px.begin(), px.end()) == 0);
    CHECK(*std::max_element(px.begin(), px.end()) == 255);
    CHECK_THROWS_AS(render_heatmap(ramp, 1.0, 1.0, path), ContractError);
    CHECK_THROWS_AS(render_heatmap(ramp, 0.0, 1.0, "/nonexistent/dir/x.pgm"), IoError);
    std::filesystem::remove(path);
}
