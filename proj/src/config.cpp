#include "instab/config.hpp"

#include "instab/errors.hpp"
#include "instab/interval.hpp"
#include "instab/rng.hpp"
#include "instab/uq.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <set>

#ifndef INSTAB_VERSION
#define INSTAB_VERSION "0.0.0"
#endif

namespace instab {

std::string to_string(Method m)
{
    switch (m) {
    case Method::inn:
        return "inn";
    case Method::mcdrop:
        return "mcdrop";
    case Method::probout:
        return "probout";
    }
    return "unknown";
}

Method method_from_string(const std::string& name)
{
    for (auto m : {Method::inn, Method::mcdrop, Method::probout}) {
        if (to_string(m) == name) {
            return m;
        }
    }
    throw ConfigError("unknown method '" + name + "'");
}

std::string to_string(OodMode m)
{
    return m == OodMode::saltpepper ? "saltpepper" : "silhouette";
}

OodMode ood_mode_from_string(const std::string& name)
{
    if (name == "saltpepper") {
        return OodMode::saltpepper;
    }
    if (name == "silhouette") {
        return OodMode::silhouette;
    }
    throw ConfigError("unknown ood mode '" + name + "'");
}

NetworkSpec ArchitectureConfig::build(std::size_t image_size) const
{
    if (kind == "denoiser") {
        return make_denoiser_spec(image_size, conv_layers, channels, dropout_rate);
    }
    if (kind == "unet") {
        return make_unet_spec(image_size, channels, dropout_rate);
    }
    throw ConfigError("unknown architecture '" + kind + "' (expected denoiser or unet)");
}

std::uint64_t ExperimentConfig::run_seed(std::size_t run) const
{
    return derive_seed(master_seed, {static_cast<std::uint64_t>(task), run});
}

bool ExperimentConfig::has_method(Method m) const
{
    return std::find(methods.begin(), methods.end(), m) != methods.end();
}

void ExperimentConfig::validate() const
{
    if (version != config_version) {
        throw ConfigError("config version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(config_version) + ")");
    }
    if (corpus.task != task) {
        throw ConfigError("corpus task does not match experiment task");
    }
    corpus.validate();
    train.validate();
    inn.train.validate();
    probout.validate();
    attack.validate();
    if (methods.empty()) {
        throw ConfigError("no uncertainty methods selected");
    }
    if (runs == 0 || test_samples == 0) {
        throw ConfigError("runs and test_samples must be positive");
    }
    const auto [tb, te] = corpus.split_range(Split::test);
    if (test_samples > te - tb) {
        throw ConfigError("test_samples exceeds the test split (" + std::to_string(te - tb) + ")");
    }
    if (mcdrop.T < 2) {
        throw ConfigError("mcdrop T must be at least 2");
    }
    if (!(inn.beta > 0.0)) {
        throw ConfigError("inn beta must be positive");
    }
    const NetworkSpec spec = network_spec();
    interval_entry_layer(spec, inn.interval_layers);
    if (!mcdrop.rates.empty()) {
        with_dropout_rates(spec, mcdrop.rates);
    }
    if (attack.patch_size == 0 || attack.patch_size > corpus.image_size) {
        throw ConfigError("attack patch size must lie in [1, image size]");
    }
    if (ood.mode == OodMode::saltpepper && !(ood.amount > 0.0 && ood.amount <= 1.0)) {
        throw ConfigError("ood amount must lie in (0, 1]");
    }
    if (ood.mode == OodMode::silhouette) {
        if (!(ood.intensity >= 0.0 && ood.intensity <= 1.0)) {
            throw ConfigError("ood intensity must lie in [0, 1]");
        }
        if (!(ood.area_fraction > 0.0 && ood.area_fraction < 1.0)) {
            throw ConfigError("ood area_fraction must lie in (0, 1)");
        }
    }
}

ExperimentConfig default_config(Task task)
{
    ExperimentConfig c;
    c.task = task;
    c.corpus.task = task;
    c.corpus.image_size = 64;
    c.corpus.count = 400;
    c.corpus.seed = 7;
    c.train = {20, 1e-3, 8, 32, 2, 0, {}};
    c.probout = {10, 1e-4, 8, 32, 2, 0, {}};
    if (task == Task::denoise) {
        c.architecture = {"denoiser", 6, 16, 0.05};
        c.inn = {1e-3, 3, {3, 1e-3, 8, 32, 1, 0, {}}};
        c.mcdrop = {128, {}};
        c.attack.lambda = 0.5;
        c.attack.patch_size = scaled_patch_size(c.corpus.image_size, false);
        c.ood = {OodMode::saltpepper, 0.1, HalfSide::random, 1.0, 0.03};
    } else {
        c.architecture = {"unet", 0, 8, 0.5};
        c.inn = {1e-4, 5, {3, 1e-3, 8, 32, 1, 0, {}}};
        c.mcdrop = {16, {}};
        c.attack.lambda = 0.0;
        c.attack.patch_size = scaled_patch_size(c.corpus.image_size, true);
        c.ood = {OodMode::silhouette, 0.1, HalfSide::random, 1.0, 0.03};
    }
    c.attack.max_iterations = 500;
    return c;
}

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where)
{
    if (!j.is_object()) {
        throw ConfigError(where + " must be an object");
    }
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) {
            throw ConfigError("unknown config key '" + where + (where.empty() ? "" : ".") + k + "'");
        }
    }
}

template <class T>
void get_if(const json& j, const char* key, T& out)
{
    if (j.contains(key)) {
        try {
            j.at(key).get_to(out);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config key '") + key + "': " + e.what());
        }
    }
}

json train_json(const TrainConfig& t)
{
    return {{"epochs", t.epochs},
            {"lr", t.lr},
            {"batch_size", t.batch_size},
            {"patch_size", t.patch_size},
            {"patches_per_image", t.patches_per_image}};
}

void train_from(const json& j, TrainConfig& t, const std::string& where)
{
    check_keys(j, {"epochs", "lr", "batch_size", "patch_size", "patches_per_image"}, where);
    get_if(j, "epochs", t.epochs);
    get_if(j, "lr", t.lr);
    get_if(j, "batch_size", t.batch_size);
    get_if(j, "patch_size", t.patch_size);
    get_if(j, "patches_per_image", t.patches_per_image);
}

} // namespace

void to_json(nlohmann::json& j, const ExperimentConfig& c)
{
    std::vector<std::string> methods;
    for (auto m : c.methods) {
        methods.push_back(to_string(m));
    }
    j = {{"version", c.version},
         {"task", to_string(c.task)},
         {"methods", methods},
         {"corpus", c.corpus},
         {"architecture",
          {{"kind", c.architecture.kind},
           {"conv_layers", c.architecture.conv_layers},
           {"channels", c.architecture.channels},
           {"dropout_rate", c.architecture.dropout_rate}}},
         {"train", train_json(c.train)},
         {"inn", {{"beta", c.inn.beta}, {"interval_layers", c.inn.interval_layers}, {"train", train_json(c.inn.train)}}},
         {"mcdrop", {{"T", c.mcdrop.T}, {"rates", c.mcdrop.rates}}},
         {"probout", train_json(c.probout)},
         {"attack",
          {{"lambda", c.attack.lambda},
           {"max_iterations", c.attack.max_iterations},
           {"tolerance", c.attack.tolerance},
           {"window", c.attack.window},
           {"memory", c.attack.memory},
           {"optimizer", to_string(c.attack.optimizer)},
           {"patch_size", c.attack.patch_size},
           {"noise_sigma", c.attack.noise_sigma}}},
         {"ood",
          {{"mode", to_string(c.ood.mode)},
           {"amount", c.ood.amount},
           {"side", to_string(c.ood.side)},
           {"intensity", c.ood.intensity},
           {"area_fraction", c.ood.area_fraction}}},
         {"master_seed", c.master_seed},
         {"runs", c.runs},
         {"test_samples", c.test_samples},
         {"panels", c.panels}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c)
{
    check_keys(j,
               {"version", "task", "methods", "corpus", "architecture", "train", "inn", "mcdrop", "probout", "attack",
                "ood", "master_seed", "runs", "test_samples", "panels"},
               "");
    const Task task = task_from_string(j.value("task", std::string("denoise")));
    c = default_config(task);
    get_if(j, "version", c.version);
    if (j.contains("methods")) {
        c.methods.clear();
        for (const auto& m : j.at("methods")) {
            c.methods.push_back(method_from_string(m.get<std::string>()));
        }
    }
    if (j.contains("corpus")) {
        const auto& k = j.at("corpus");
        check_keys(k,
                   {"task", "image_size", "count", "seed", "noise_sigma", "wedge_start_deg", "wedge_end_deg",
                    "angle_step_deg", "ct_scaling"},
                   "corpus");
        if (k.contains("task") && task_from_string(k.at("task").get<std::string>()) != task) {
            throw ConfigError("corpus.task does not match task");
        }
        get_if(k, "image_size", c.corpus.image_size);
        get_if(k, "count", c.corpus.count);
        get_if(k, "seed", c.corpus.seed);
        get_if(k, "noise_sigma", c.corpus.noise_sigma);
        get_if(k, "wedge_start_deg", c.corpus.wedge_start_deg);
        get_if(k, "wedge_end_deg", c.corpus.wedge_end_deg);
        get_if(k, "angle_step_deg", c.corpus.angle_step_deg);
        if (k.contains("ct_scaling")) {
            check_keys(k.at("ct_scaling"), {"lo", "hi"}, "corpus.ct_scaling");
            get_if(k.at("ct_scaling"), "lo", c.corpus.scaling.lo);
            get_if(k.at("ct_scaling"), "hi", c.corpus.scaling.hi);
        }
    }
    if (j.contains("architecture")) {
        const auto& a = j.at("architecture");
        check_keys(a, {"kind", "conv_layers", "channels", "dropout_rate"}, "architecture");
        get_if(a, "kind", c.architecture.kind);
        get_if(a, "conv_layers", c.architecture.conv_layers);
        get_if(a, "channels", c.architecture.channels);
        get_if(a, "dropout_rate", c.architecture.dropout_rate);
    }
    if (j.contains("train")) {
        train_from(j.at("train"), c.train, "train");
    }
    if (j.contains("inn")) {
        const auto& i = j.at("inn");
        check_keys(i, {"beta", "interval_layers", "train"}, "inn");
        get_if(i, "beta", c.inn.beta);
        get_if(i, "interval_layers", c.inn.interval_layers);
        if (i.contains("train")) {
            train_from(i.at("train"), c.inn.train, "inn.train");
        }
    }
    if (j.contains("mcdrop")) {
        check_keys(j.at("mcdrop"), {"T", "rates"}, "mcdrop");
        get_if(j.at("mcdrop"), "T", c.mcdrop.T);
        get_if(j.at("mcdrop"), "rates", c.mcdrop.rates);
    }
    if (j.contains("probout")) {
        train_from(j.at("probout"), c.probout, "probout");
    }
    if (j.contains("attack")) {
        const auto& a = j.at("attack");
        check_keys(a,
                   {"lambda", "max_iterations", "tolerance", "window", "memory", "optimizer", "patch_size",
                    "noise_sigma"},
                   "attack");
        get_if(a, "lambda", c.attack.lambda);
        get_if(a, "max_iterations", c.attack.max_iterations);
        get_if(a, "tolerance", c.attack.tolerance);
        get_if(a, "window", c.attack.window);
        get_if(a, "memory", c.attack.memory);
        if (a.contains("optimizer")) {
            c.attack.optimizer = attack_optimizer_from_string(a.at("optimizer").get<std::string>());
        }
        get_if(a, "patch_size", c.attack.patch_size);
        get_if(a, "noise_sigma", c.attack.noise_sigma);
    }
    if (j.contains("ood")) {
        const auto& o = j.at("ood");
        check_keys(o, {"mode", "amount", "side", "intensity", "area_fraction"}, "ood");
        if (o.contains("mode")) {
            c.ood.mode = ood_mode_from_string(o.at("mode").get<std::string>());
        }
        get_if(o, "amount", c.ood.amount);
        if (o.contains("side")) {
            c.ood.side = half_side_from_string(o.at("side").get<std::string>());
        }
        get_if(o, "intensity", c.ood.intensity);
        get_if(o, "area_fraction", c.ood.area_fraction);
    }
    get_if(j, "master_seed", c.master_seed);
    get_if(j, "runs", c.runs);
    get_if(j, "test_samples", c.test_samples);
    get_if(j, "panels", c.panels);
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    ExperimentConfig c = j.get<ExperimentConfig>();
    c.validate();
    return c;
}

std::string code_version()
{
    return INSTAB_VERSION;
}

} // namespace instab
