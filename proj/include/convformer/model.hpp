#pragma once

// Toy segmentation network built around ConvFormer blocks:
//
//   pooling tokenizer -> L x [u += CSA(u); u += CFFN(u)]
//                     -> d x [nearest 2x upsample -> 3x3 conv-BN-ReLU]
//                     -> 1x1 head to class logits
//
// The decoder keeps c_m channels at every scale; a tapering decoder
// mirroring the pooling schedule trains far slower at small learning rates.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "convformer/cffn.hpp"
#include "convformer/csa.hpp"
#include "convformer/pooling.hpp"

namespace convformer {

// Collects every invalid field of a configuration rather than the first one.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

struct ConvFormerConfig {
    std::size_t in_channels = 1;       // c
    std::size_t embed_channels = 16;   // c_m
    std::size_t query_channels = 16;   // c_q
    std::size_t hidden_channels = 64;  // c_h, CFFN expansion
    std::size_t patch_size = 4;        // S
    double alpha = 1.0;
    std::size_t heads = 1;
    std::size_t layers = 4;  // L
    std::size_t num_classes = 2;
    std::size_t height = 64;
    std::size_t width = 64;

    // d = log2(S); throws if S is not a power of two.
    std::size_t depth() const { return patch_depth(patch_size); }
    std::size_t grid_height() const { return height >> depth(); }
    std::size_t grid_width() const { return width >> depth(); }

    // Throws ConfigError listing every violated constraint.
    void validate() const;

    friend bool operator==(const ConvFormerConfig&, const ConvFormerConfig&) = default;
};

struct ConvFormerBlock {
    CsaParams csa;
    CffnParams cffn;
};

struct SegModel {
    ConvFormerConfig config;
    PoolingParams pooling;
    std::vector<ConvFormerBlock> blocks;
    std::vector<CbrParams> decoder;
    ConvParams head;  // 1x1 -> num_classes
};

template <MaybeConst<SegModel> P, class F>
void visit_params(P& m, const std::string& prefix, F&& f) {
    const std::string pre = prefix.empty() ? std::string{} : prefix + ".";
    visit_params(m.pooling, pre + "pooling", f);
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        visit_params(m.blocks[i].csa, pre + "blocks." + std::to_string(i) + ".csa", f);
        visit_params(m.blocks[i].cffn, pre + "blocks." + std::to_string(i) + ".cffn", f);
    }
    for (std::size_t k = 0; k < m.decoder.size(); ++k)
        visit_params(m.decoder[k], pre + "decoder." + std::to_string(k), f);
    visit_params(m.head, pre + "head", f);
}

SegModel build(const ConvFormerConfig& config, std::uint64_t seed);

// Switches every batch norm between batch statistics and running statistics.
void set_training(SegModel& m, bool training);
void set_bn_mode(SegModel& m, BnMode mode);

struct BlockCache {
    CsaCache csa;
    CffnCache cffn;
};

struct ModelCache {
    PoolingCache pooling;
    std::vector<BlockCache> blocks;
    std::vector<CbrCache> decoder;
    Tensor head_input;
};

struct ModelOutput {
    Tensor logits;                                       // [n, num_classes, H, W]
    std::vector<std::vector<AttentionField>> attention;  // [layer][sample]
};

ModelOutput forward(const SegModel& m, const Tensor& x, ModelCache* cache = nullptr,
                    bool record_attention = true);
void update_running_stats(SegModel& m, const ModelCache& cache);
// Accumulates parameter gradients into grad and returns the input gradient.
Tensor backward(const SegModel& m, const ModelCache& cache, const Tensor& grad_logits, SegModel& grad);

struct LossResult {
    double value = 0.0;          // (cross_entropy + dice_loss) / 2
    double cross_entropy = 0.0;  // mean softmax cross-entropy per pixel
    double dice_loss = 0.0;      // 1 - mean soft Dice over classes
    Tensor grad_logits;
};

inline constexpr double kDiceSmooth = 1.0;

// labels holds n * H * W class indices in [n, H, W] row-major order.
LossResult loss(const Tensor& logits, const std::vector<int>& labels);

// Per-pixel argmax over classes, [n, H, W] row-major.
std::vector<int> predict(const Tensor& logits);

}  // namespace convformer
