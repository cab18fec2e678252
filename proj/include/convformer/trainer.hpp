#pragma once

// Adam, the training and evaluation loops, and the alpha sweep.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "convformer/data.hpp"
#include "convformer/model.hpp"

namespace convformer {

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::vector<Tensor> m, v;  // lazily shaped like the parameters on the first step
};

struct NamedTensor {
    std::string name;
    Tensor* tensor;
};

// Trainable tensors of a model (or of a gradient struct shaped like one), in
// visit order.
std::vector<NamedTensor> trainable_tensors(SegModel& m);

// One bias-corrected Adam update. Every gradient is checked before any
// parameter moves; a non-finite entry throws NumericError naming the tensor.
void adam_step(const std::vector<NamedTensor>& params, const std::vector<NamedTensor>& grads, AdamState& state);

struct TrainConfig {
    ConvFormerConfig model;
    SyntheticSpec data;
    AugmentRanges ranges;
    bool augment = true;
    std::size_t epochs = 400;
    std::size_t batch_size = 4;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t train_samples = 40;
    std::size_t heldout_samples = 8;
    std::size_t max_steps = 0;         // 0: no cap beyond epochs
    std::size_t checkpoint_every = 0;  // epochs; 0 disables

    // Throws ConfigError listing every violated constraint.
    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct Datasets {
    std::vector<SyntheticSample> train, heldout;
};

// Training and held-out splits are independent streams of one seed.
Datasets make_datasets(const TrainConfig& config, std::uint64_t seed);

struct EvalResult {
    std::vector<double> dice;  // per foreground class, averaged over samples
    std::vector<double> hd;    // per foreground class, over samples where defined; NaN if never
    double mean_dice = 0.0;
    double mean_hd = 0.0;      // NaN if undefined for every class
    double collapse_score = 0.0;
};

// Inference-mode evaluation. Collapse score comes from the first sample.
EvalResult evaluate(SegModel& model, const std::vector<SyntheticSample>& samples);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    std::size_t steps = 0;  // optimizer steps so far
    double loss = 0.0;      // mean training loss over the epoch's batches
    EvalResult eval;
};

struct TrainResult {
    SegModel model;  // last good model (end of the last completed epoch)
    std::vector<EpochRecord> history;
    std::size_t steps = 0;
    bool diverged = false;
    std::string message;
};

// Called with (epoch, model) every checkpoint_every epochs.
using CheckpointHook = std::function<void(std::size_t, const SegModel&)>;

TrainResult train(SegModel model, const Datasets& data, const TrainConfig& config, std::uint64_t seed,
                  const CheckpointHook& on_checkpoint = {});

// build + make_datasets + train, all from one seed: what the train command runs.
TrainResult run_training(const TrainConfig& config, std::uint64_t seed, const CheckpointHook& on_checkpoint = {});

inline const std::vector<double> kDefaultAlphas{0.2, 0.4, 0.6, 0.8, 1.0};

struct AblationRow {
    double alpha = 0.0;
    double dice = 0.0;
    double hd = 0.0;
    std::size_t steps = 0;
};

// One model per alpha, all sharing the seed and the dataset.
std::vector<AblationRow> ablate_alpha(const TrainConfig& config, const std::vector<double>& alphas,
                                      std::uint64_t seed);

}  // namespace convformer
