#include "instab/train.hpp"

#include "instab/checkpoint.hpp"
#include "instab/errors.hpp"
#include "instab/optim.hpp"
#include "instab/rng.hpp"
#include "instab/uq.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace instab {

void TrainConfig::validate() const
{
    if (!(lr > 0.0) || batch_size == 0 || patches_per_image == 0) {
        throw ConfigError("training: lr, batch_size and patches_per_image must be positive");
    }
}

NetworkSpec with_input_shape(const NetworkSpec& spec, Tensor::Shape shape)
{
    NetworkSpec out = spec;
    out.input_shape = std::move(shape);
    out.validate();
    return out;
}

std::vector<TrainingPair> epoch_crops(const std::vector<Sample>& samples, std::size_t patch_size,
                                      std::size_t patches_per_image, std::uint64_t seed, std::size_t epoch,
                                      std::size_t multiple_of)
{
    if (patch_size != 0 && patch_size % multiple_of != 0) {
        throw ConfigError("patch size " + std::to_string(patch_size) + " must be a multiple of " +
                          std::to_string(multiple_of));
    }
    Rng rng(derive_seed(seed, {epoch}));
    std::vector<TrainingPair> out;
    for (const auto& s : samples) {
        const auto& shape = s.input.shape();
        const std::size_t h = shape[1];
        const std::size_t w = shape[2];
        if (patch_size == 0 || (patch_size == h && patch_size == w)) {
            out.push_back({s.input, s.clean});
            continue;
        }
        if (patch_size > h || patch_size > w) {
            throw ConfigError("patch size exceeds image size");
        }
        for (std::size_t k = 0; k < patches_per_image; ++k) {
            const auto r0 = uniform_index(rng, h - patch_size + 1);
            const auto c0 = uniform_index(rng, w - patch_size + 1);
            TrainingPair p{Tensor({1, patch_size, patch_size}), Tensor({1, patch_size, patch_size})};
            for (std::size_t r = 0; r < patch_size; ++r) {
                for (std::size_t c = 0; c < patch_size; ++c) {
                    p.input[r * patch_size + c] = s.input[(r0 + r) * w + c0 + c];
                    p.target[r * patch_size + c] = s.clean[(r0 + r) * w + c0 + c];
                }
            }
            out.push_back(std::move(p));
        }
    }
    // Fisher-Yates with the epoch stream.
    for (std::size_t i = out.size(); i > 1; --i) {
        std::swap(out[i - 1], out[uniform_index(rng, i)]);
    }
    return out;
}

double validation_mse(const NetworkSpec& spec, const NetworkParams& params, const std::vector<Sample>& samples)
{
    if (samples.empty()) {
        throw ContractError("validation set is empty");
    }
    double total = 0.0;
    for (const auto& s : samples) {
        total += mse(forward(spec, params, s.input), s.clean);
    }
    return total / static_cast<double>(samples.size());
}

double validation_probout(const NetworkSpec& spec, const NetworkParams& params, const std::vector<Sample>& samples)
{
    if (samples.empty()) {
        throw ContractError("validation set is empty");
    }
    double total = 0.0;
    for (const auto& s : samples) {
        const auto p = probout_forward(spec, params, s.input);
        total += probout_loss(p.mean, p.variance, s.clean) / static_cast<double>(s.clean.size());
    }
    return total / static_cast<double>(samples.size());
}

namespace {

std::size_t spatial_multiple(const NetworkSpec& spec)
{
    std::size_t m = 1;
    for (const auto& l : spec.layers) {
        if (l.kind == LayerKind::downsample) {
            m *= 2;
        }
    }
    return m;
}

using LossFn = std::function<ad::Var(const NetworkSpec&, const ParamVars&, const TrainingPair&, const DropoutMasks&)>;
using ValFn = std::function<double(const NetworkParams&)>;

[[noreturn]] void diverged(const NetworkSpec& spec, const NetworkParams& last_good, const TrainConfig& cfg,
                           std::size_t epoch)
{
    std::string where;
    if (!cfg.divergence_checkpoint.empty()) {
        save_network(cfg.divergence_checkpoint, spec, last_good);
        where = "; last good parameters saved to " + cfg.divergence_checkpoint.string();
    }
    throw NumericalError("training diverged in epoch " + std::to_string(epoch) + where);
}

TrainResult fit(const NetworkSpec& spec, NetworkParams params, const std::vector<Sample>& train,
                const TrainConfig& cfg, const LossFn& loss_fn, const ValFn& val_fn, const EpochCallback& on_epoch)
{
    cfg.validate();
    check_params(spec, params);
    if (train.empty()) {
        throw ContractError("training set is empty");
    }
    const auto mult = spatial_multiple(spec);
    const std::size_t ps = cfg.patch_size;
    const NetworkSpec step_spec =
        ps == 0 ? spec : with_input_shape(spec, {spec.input_shape[0], ps, ps});

    TrainResult res;
    res.params = params;
    res.best_val = val_fn(params);
    res.log.push_back({0, NAN, res.best_val});
    if (on_epoch) {
        on_epoch(res.log.back());
    }
    Adam adam({cfg.lr});
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto crops = epoch_crops(train, ps, cfg.patches_per_image, cfg.seed, epoch, mult);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < crops.size(); b += cfg.batch_size) {
            const std::size_t e = std::min(crops.size(), b + cfg.batch_size);
            const auto pv = ParamVars::trainable(params);
            for (std::size_t i = b; i < e; ++i) {
                const auto masks = sample_dropout_masks(step_spec, derive_seed(cfg.seed, {epoch, i, 0xd209}));
                const auto loss = loss_fn(step_spec, pv, crops[i], masks);
                const double v = loss.value()[0];
                if (!std::isfinite(v)) {
                    diverged(spec, res.params, cfg, epoch);
                }
                epoch_loss += v;
                ad::backward(ad::scale(loss, 1.0 / static_cast<double>(e - b)));
            }
            const auto grads = pv.grads();
            try {
                require_finite_gradients(grads.tensors(), "training");
            } catch (const NumericalError&) {
                diverged(spec, res.params, cfg, epoch);
            }
            adam.step(params, grads);
        }
        const double val = val_fn(params);
        if (!std::isfinite(val)) {
            diverged(spec, res.params, cfg, epoch);
        }
        res.log.push_back({epoch, epoch_loss / static_cast<double>(crops.size()), val});
        if (val < res.best_val) {
            res.best_val = val;
            res.best_epoch = epoch;
            res.params = params;
        }
        if (on_epoch) {
            on_epoch(res.log.back());
        }
    }
    return res;
}

} // namespace

TrainResult train_baseline(const NetworkSpec& spec, NetworkParams init, const std::vector<Sample>& train,
                           const std::vector<Sample>& val, const TrainConfig& cfg, const EpochCallback& on_epoch)
{
    auto loss = [](const NetworkSpec& s, const ParamVars& pv, const TrainingPair& p, const DropoutMasks& m) {
        const auto out = forward_var(s, pv, ad::Var::constant(p.input), &m);
        return ad::scale(squared_error(out, p.target), 1.0 / static_cast<double>(p.target.size()));
    };
    auto val_fn = [&](const NetworkParams& p) { return validation_mse(spec, p, val); };
    return fit(spec, std::move(init), train, cfg, loss, val_fn, on_epoch);
}

TrainResult train_probout(const NetworkSpec& spec, NetworkParams init, const std::vector<Sample>& train,
                          const std::vector<Sample>& val, const TrainConfig& cfg, const EpochCallback& on_epoch)
{
    auto loss = [](const NetworkSpec& s, const ParamVars& pv, const TrainingPair& p, const DropoutMasks& m) {
        const auto out = probout_forward_var(s, pv, ad::Var::constant(p.input), &m);
        return ad::scale(probout_loss_var(out.mean, out.variance, p.target), 1.0 / static_cast<double>(p.target.size()));
    };
    auto val_fn = [&](const NetworkParams& p) { return validation_probout(spec, p, val); };
    return fit(spec, std::move(init), train, cfg, loss, val_fn, on_epoch);
}

double interval_coverage(const NetworkSpec& spec, const IntervalParams& ip, const std::vector<Sample>& samples)
{
    if (samples.empty()) {
        throw ContractError("coverage: no samples");
    }
    double inside = 0.0;
    double total = 0.0;
    for (const auto& s : samples) {
        const auto pred = inn_forward(spec, ip, s.input);
        inside += coverage(pred, s.clean) * static_cast<double>(s.clean.size());
        total += static_cast<double>(s.clean.size());
    }
    return inside / total;
}

InnTrainResult train_inn(const NetworkSpec& spec, const NetworkParams& central, const std::vector<Sample>& train,
                         const std::vector<Sample>& val, const InnTrainConfig& cfg, const EpochCallback& on_epoch)
{
    cfg.train.validate();
    if (!(cfg.beta > 0.0)) {
        throw ConfigError("INN beta must be positive");
    }
    if (train.empty() || val.empty()) {
        throw ContractError("INN training needs train and validation samples");
    }
    const std::size_t ps = cfg.train.patch_size;
    const NetworkSpec step_spec = ps == 0 ? spec : with_input_shape(spec, {spec.input_shape[0], ps, ps});
    InnTrainResult res;
    res.params = make_interval_params(spec, central, cfg.interval_layers);
    IntervalTrainer trainer(step_spec, cfg.beta, cfg.train.lr);

    auto val_loss = [&]() {
        double total = 0.0;
        for (const auto& s : val) {
            total += inn_loss(inn_forward(spec, res.params, s.input), s.clean, cfg.beta) /
                     static_cast<double>(s.clean.size());
        }
        return total / static_cast<double>(val.size());
    };
    res.log.push_back({0, NAN, val_loss()});
    if (on_epoch) {
        on_epoch(res.log.back());
    }
    for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
        const auto crops = epoch_crops(train, ps, cfg.train.patches_per_image, cfg.train.seed, epoch,
                                       spatial_multiple(spec));
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < crops.size(); b += cfg.train.batch_size) {
            const std::size_t e = std::min(crops.size(), b + cfg.train.batch_size);
            const std::vector<TrainingPair> batch(crops.begin() + static_cast<std::ptrdiff_t>(b),
                                                  crops.begin() + static_cast<std::ptrdiff_t>(e));
            epoch_loss += trainer.step(res.params, batch) * static_cast<double>(e - b);
        }
        const double npx = static_cast<double>(crops.front().target.size());
        res.log.push_back({epoch, epoch_loss / static_cast<double>(crops.size()) / npx, val_loss()});
        if (on_epoch) {
            on_epoch(res.log.back());
        }
    }
    return res;
}

} // namespace instab
