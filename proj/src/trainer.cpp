#include "convformer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "convformer/metrics.hpp"

namespace convformer {

std::vector<NamedTensor> trainable_tensors(SegModel& m) {
    std::vector<NamedTensor> out;
    visit_params(m, std::string{}, [&](const std::string& name, Tensor& t, ParamKind kind) {
        if (kind == ParamKind::trainable) out.push_back({name, &t});
    });
    return out;
}

void adam_step(const std::vector<NamedTensor>& params, const std::vector<NamedTensor>& grads, AdamState& state) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " parameters but " +
                                    std::to_string(grads.size()) + " gradients");
    for (std::size_t k = 0; k < params.size(); ++k) {
        require_same_shape(*params[k].tensor, *grads[k].tensor, "adam_step");
        if (!grads[k].tensor->all_finite())
            throw NumericError("adam_step: non-finite gradient for " + params[k].name);
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(Tensor::zeros_like(*p.tensor));
            state.v.push_back(Tensor::zeros_like(*p.tensor));
        }
    } else if (state.m.size() != params.size()) {
        throw std::invalid_argument("adam_step: optimizer state tracks a different parameter set");
    }

    ++state.t;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k].tensor->values();
        const auto& g = grads[k].tensor->values();
        auto& m = state.m[k].values();
        auto& v = state.v[k].values();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            p[i] -= state.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
        }
    }
}

void TrainConfig::validate() const {
    std::vector<std::string> problems;
    try {
        model.validate();
    } catch (const ConfigError& e) {
        problems = e.problems();
    }
    if (model.in_channels != 1) problems.push_back("in_channels must be 1 for the synthetic task");
    if (data.num_classes != model.num_classes) problems.push_back("data and model disagree on num_classes");
    try {
        convformer::validate(data, model.height, model.width);
    } catch (const std::invalid_argument& e) {
        problems.push_back(e.what());
    }
    if (epochs == 0) problems.push_back("epochs must be positive");
    if (batch_size == 0) problems.push_back("batch_size must be positive");
    if (train_samples == 0) problems.push_back("train_samples must be positive");
    if (heldout_samples == 0) problems.push_back("heldout_samples must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) problems.push_back("learning_rate must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) problems.push_back("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) problems.push_back("beta2 must lie in [0, 1)");
    if (!(adam_eps > 0.0)) problems.push_back("adam_eps must be positive");
    if (!(ranges.rotation_deg >= 0.0)) problems.push_back("rotation_deg must be >= 0");
    if (!(ranges.scale_min > 0.0 && ranges.scale_max >= ranges.scale_min))
        problems.push_back("scale range must satisfy 0 < scale_min <= scale_max");
    if (!(ranges.contrast_min >= 0.0 && ranges.contrast_max >= ranges.contrast_min))
        problems.push_back("contrast range must satisfy 0 <= contrast_min <= contrast_max");
    if (!(ranges.gamma_min > 0.0 && ranges.gamma_max >= ranges.gamma_min))
        problems.push_back("gamma range must satisfy 0 < gamma_min <= gamma_max");
    if (!problems.empty()) throw ConfigError(std::move(problems));
}

Datasets make_datasets(const TrainConfig& config, std::uint64_t seed) {
    const auto h = config.model.height, w = config.model.width;
    return {gen_dataset(config.train_samples, h, w, config.data, derive_seed(seed, 1)),
            gen_dataset(config.heldout_samples, h, w, config.data, derive_seed(seed, 2))};
}

namespace {

struct Batch {
    Tensor x;
    std::vector<int> labels;
};

Batch stack(const std::vector<const SyntheticSample*>& samples) {
    const auto& s0 = samples.front()->image.shape();
    Batch b{Tensor({samples.size(), 1, s0[1], s0[2]}), {}};
    const std::size_t plane = s0[1] * s0[2];
    for (std::size_t n = 0; n < samples.size(); ++n) {
        std::copy(samples[n]->image.values().begin(), samples[n]->image.values().end(),
                  b.x.values().begin() + static_cast<std::ptrdiff_t>(n * plane));
        b.labels.insert(b.labels.end(), samples[n]->mask.begin(), samples[n]->mask.end());
    }
    return b;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_of_defined(const std::vector<double>& v) {
    double s = 0.0;
    std::size_t n = 0;
    for (double x : v)
        if (!std::isnan(x)) {
            s += x;
            ++n;
        }
    return n ? s / static_cast<double>(n) : kNaN;
}

}  // namespace

EvalResult evaluate(SegModel& model, const std::vector<SyntheticSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
    set_training(model, false);
    std::vector<const SyntheticSample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    const Batch batch = stack(ptrs);
    const ModelOutput out = forward(model, batch.x, nullptr, true);
    const std::vector<int> pred = predict(out.logits);

    const std::size_t h = model.config.height, w = model.config.width, plane = h * w;
    const std::size_t classes = model.config.num_classes;
    EvalResult r;
    r.dice.assign(classes - 1, 0.0);
    r.hd.assign(classes - 1, 0.0);
    std::vector<std::size_t> hd_count(classes - 1, 0);
    for (std::size_t n = 0; n < samples.size(); ++n) {
        const std::vector<int> p(pred.begin() + static_cast<std::ptrdiff_t>(n * plane),
                                 pred.begin() + static_cast<std::ptrdiff_t>((n + 1) * plane));
        for (std::size_t k = 1; k < classes; ++k) {
            const auto pm = BinaryMask::from_labels(p, h, w, static_cast<int>(k));
            const auto gm = BinaryMask::from_labels(samples[n].mask, h, w, static_cast<int>(k));
            r.dice[k - 1] += dice(pm, gm);
            if (const auto d = hausdorff(pm, gm)) {
                r.hd[k - 1] += *d;
                ++hd_count[k - 1];
            }
        }
    }
    for (std::size_t k = 0; k + 1 < classes; ++k) {
        r.dice[k] /= static_cast<double>(samples.size());
        r.hd[k] = hd_count[k] ? r.hd[k] / static_cast<double>(hd_count[k]) : kNaN;
    }
    r.mean_dice = std::accumulate(r.dice.begin(), r.dice.end(), 0.0) / static_cast<double>(r.dice.size());
    r.mean_hd = mean_of_defined(r.hd);

    std::vector<AttentionField> first;
    for (const auto& layer : out.attention) first.push_back(layer.front());
    r.collapse_score = collapse_report(first, false).collapse_score;
    return r;
}

TrainResult train(SegModel model, const Datasets& data, const TrainConfig& config, std::uint64_t seed,
                  const CheckpointHook& on_checkpoint) {
    config.validate();
    if (data.train.empty() || data.heldout.empty()) throw std::invalid_argument("train: empty dataset split");
    if (!(model.config == config.model)) throw std::invalid_argument("train: model was built from another config");

    Rng rng(derive_seed(seed, 3));
    AdamState adam{config.learning_rate, config.beta1, config.beta2, config.adam_eps, 0, {}, {}};
    SegModel grad = zeros_like_params(model);
    const auto params = trainable_tensors(model);
    const auto grads = trainable_tensors(grad);

    TrainResult result{model, {}, 0, false, {}};
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        if (config.max_steps && result.steps >= config.max_steps) break;
        for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            if (config.max_steps && result.steps >= config.max_steps) break;
            const std::size_t end = std::min(start + config.batch_size, order.size());
            std::vector<SyntheticSample> augmented;
            std::vector<const SyntheticSample*> ptrs;
            augmented.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const auto& s = data.train[order[i]];
                if (config.augment) {
                    augmented.push_back(augment(s, config.ranges, rng));
                    ptrs.push_back(&augmented.back());
                } else {
                    ptrs.push_back(&s);
                }
            }
            const Batch batch = stack(ptrs);

            set_training(model, true);
            ModelCache cache;
            LossResult l;
            try {
                const ModelOutput out = forward(model, batch.x, &cache, false);
                l = loss(out.logits, batch.labels);
            } catch (const NumericError& e) {
                result.diverged = true;
                result.message = std::string(e.what()) + " at step " + std::to_string(result.steps + 1);
                return result;
            }
            if (!std::isfinite(l.value)) {
                result.diverged = true;
                result.message = "non-finite loss at step " + std::to_string(result.steps + 1);
                return result;
            }
            for (const auto& g : grads) g.tensor->fill(0.0);
            backward(model, cache, l.grad_logits, grad);
            try {
                adam_step(params, grads, adam);
            } catch (const NumericError& e) {
                result.diverged = true;
                result.message = std::string(e.what()) + " at step " + std::to_string(result.steps + 1);
                return result;
            }
            update_running_stats(model, cache);
            loss_sum += l.value;
            ++batches;
            ++result.steps;
        }

        EpochRecord rec{epoch, result.steps, batches ? loss_sum / static_cast<double>(batches) : kNaN,
                        evaluate(model, data.heldout)};
        result.history.push_back(std::move(rec));
        result.model = model;
        if (config.checkpoint_every && epoch % config.checkpoint_every == 0 && on_checkpoint)
            on_checkpoint(epoch, result.model);
    }
    return result;
}

TrainResult run_training(const TrainConfig& config, std::uint64_t seed, const CheckpointHook& on_checkpoint) {
    config.validate();
    return train(build(config.model, derive_seed(seed, 0)), make_datasets(config, seed), config, seed,
                 on_checkpoint);
}

std::vector<AblationRow> ablate_alpha(const TrainConfig& config, const std::vector<double>& alphas,
                                      std::uint64_t seed) {
    if (alphas.empty()) throw std::invalid_argument("ablate_alpha: empty alpha grid");
    std::vector<AblationRow> rows;
    for (double a : alphas) {
        TrainConfig c = config;
        c.model.alpha = a;
        const TrainResult r = run_training(c, seed);
        if (r.history.empty()) throw NumericError("ablate_alpha: alpha " + std::to_string(a) + ": " + r.message);
        const auto& last = r.history.back().eval;
        rows.push_back({a, last.mean_dice, last.mean_hd, r.steps});
    }
    return rows;
}

}  // namespace convformer
