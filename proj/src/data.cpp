#include "instab/data.hpp"

#include "instab/checkpoint.hpp"
#include "instab/config.hpp"
#include "instab/errors.hpp"
#include "instab/rng.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace instab {

std::string to_string(Task task)
{
    return task == Task::denoise ? "denoise" : "ct";
}

Task task_from_string(const std::string& name)
{
    if (name == "denoise") {
        return Task::denoise;
    }
    if (name == "ct") {
        return Task::ct;
    }
    throw ConfigError("unknown task '" + name + "' (expected denoise or ct)");
}

std::string to_string(Split split)
{
    switch (split) {
    case Split::train:
        return "train";
    case Split::val:
        return "val";
    case Split::test:
        return "test";
    }
    return "unknown";
}

Tensor denoise_input(const Tensor& clean, const NoiseModel& noise)
{
    return clip(add_noise(clean, noise), 0.0, 1.0);
}

Tensor ct_input(const Tensor& clean, const RadonGeometry& geom, const CtScaling& scaling)
{
    if (!(scaling.hi > scaling.lo)) {
        throw ConfigError("ct scaling requires hi > lo");
    }
    Tensor rec = fbp(radon(clean, geom), geom);
    for (auto& v : rec.data()) {
        v = std::clamp((v - scaling.lo) / (scaling.hi - scaling.lo), 0.0, 1.0);
    }
    return rec;
}

PhantomKind CorpusSpec::phantom_kind() const
{
    return task == Task::denoise ? PhantomKind::texture : PhantomKind::random_ellipses;
}

RadonGeometry CorpusSpec::geometry() const
{
    return RadonGeometry::limited(image_size, wedge_start_deg, wedge_end_deg, angle_step_deg);
}

NoiseModel CorpusSpec::noise_model(std::uint64_t s) const
{
    return {noise_sigma, derive_seed(s, {0x0153})};
}

std::pair<std::size_t, std::size_t> CorpusSpec::split_range(Split split) const
{
    const std::size_t n_train = count * 8 / 10;
    const std::size_t n_val = count / 10;
    switch (split) {
    case Split::train:
        return {0, n_train};
    case Split::val:
        return {n_train, n_train + n_val};
    case Split::test:
        return {n_train + n_val, count};
    }
    return {0, 0};
}

std::uint64_t CorpusSpec::sample_seed(std::size_t index) const
{
    return derive_seed(seed, {static_cast<std::uint64_t>(task), index});
}

void CorpusSpec::validate() const
{
    if (image_size < 32) {
        throw ConfigError("corpus image_size must be at least 32");
    }
    if (count < 10) {
        throw ConfigError("corpus needs at least 10 samples for an 8/1/1 split");
    }
    if (!(noise_sigma >= 0.0)) {
        throw ConfigError("corpus noise sigma must be non-negative");
    }
    if (!(scaling.hi > scaling.lo)) {
        throw ConfigError("ct scaling requires hi > lo");
    }
    if (task == Task::ct) {
        geometry().validate();
    }
}

void to_json(nlohmann::json& j, const CorpusSpec& c)
{
    j = {{"task", to_string(c.task)},
         {"image_size", c.image_size},
         {"count", c.count},
         {"seed", c.seed},
         {"noise_sigma", c.noise_sigma},
         {"wedge_start_deg", c.wedge_start_deg},
         {"wedge_end_deg", c.wedge_end_deg},
         {"angle_step_deg", c.angle_step_deg},
         {"ct_scaling", {{"lo", c.scaling.lo}, {"hi", c.scaling.hi}}}};
}

void from_json(const nlohmann::json& j, CorpusSpec& c)
{
    c.task = task_from_string(j.at("task").get<std::string>());
    j.at("image_size").get_to(c.image_size);
    j.at("count").get_to(c.count);
    j.at("seed").get_to(c.seed);
    j.at("noise_sigma").get_to(c.noise_sigma);
    j.at("wedge_start_deg").get_to(c.wedge_start_deg);
    j.at("wedge_end_deg").get_to(c.wedge_end_deg);
    j.at("angle_step_deg").get_to(c.angle_step_deg);
    j.at("ct_scaling").at("lo").get_to(c.scaling.lo);
    j.at("ct_scaling").at("hi").get_to(c.scaling.hi);
}

Tensor simulate_input(const CorpusSpec& corpus, const Tensor& clean, std::uint64_t sample_seed)
{
    if (corpus.task == Task::denoise) {
        return denoise_input(clean, corpus.noise_model(sample_seed));
    }
    return ct_input(clean, corpus.geometry(), corpus.scaling);
}

Sample make_sample(const CorpusSpec& corpus, std::size_t index)
{
    if (index >= corpus.count) {
        throw ContractError("make_sample: index " + std::to_string(index) + " outside corpus");
    }
    const auto s = corpus.sample_seed(index);
    Tensor clean = make_phantom(corpus.phantom_kind(), corpus.image_size, s);
    Tensor input = simulate_input(corpus, clean, s);
    return {s, std::move(clean), std::move(input)};
}

std::vector<Sample> make_split(const CorpusSpec& corpus, Split split)
{
    corpus.validate();
    const auto [b, e] = corpus.split_range(split);
    std::vector<Sample> out;
    out.reserve(e - b);
    for (std::size_t i = b; i < e; ++i) {
        out.push_back(make_sample(corpus, i));
    }
    return out;
}

void write_corpus(const CorpusSpec& corpus, const std::filesystem::path& dir)
{
    corpus.validate();
    std::filesystem::create_directories(dir);
    nlohmann::json files = nlohmann::json::array();
    for (Split split : {Split::train, Split::val, Split::test}) {
        const auto [b, e] = corpus.split_range(split);
        for (std::size_t i = b; i < e; ++i) {
            const auto s = make_sample(corpus, i);
            const std::string stem = to_string(corpus.task) + "_" + std::to_string(i);
            save_tensor(dir / (stem + "_clean.bin"), s.clean);
            save_tensor(dir / (stem + "_input.bin"), s.input);
            files.push_back({{"index", i},
                             {"clean", stem + "_clean.bin"},
                             {"input", stem + "_input.bin"},
                             {"seed", s.seed},
                             {"split", to_string(split)},
                             {"kind", to_string(corpus.phantom_kind())}});
        }
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) {
        throw IoError("cannot write " + (dir / "manifest.json").string());
    }
    out << nlohmann::json{{"corpus", corpus}, {"code_version", code_version()}, {"files", files}}.dump(2) << '\n';
}

} // namespace instab
