#pragma once

// Pooling tokenizer: stem conv-BN-ReLU, then `depth` rounds of
// (2x2 max-pool -> 3x3 conv-BN-ReLU). Maps [n, c, H, W] to
// [n, c_m, H / 2^depth, W / 2^depth].

#include <cstddef>
#include <string>
#include <vector>

#include "convformer/ops.hpp"

namespace convformer {

// depth = log2(patch_size); throws std::invalid_argument unless patch_size is a power of two.
std::size_t patch_depth(std::size_t patch_size);

// Channel widths after the stem and after each stage (depth + 1 entries),
// geometric from in_c to out_c with the last entry pinned to out_c.
std::vector<std::size_t> channel_schedule(std::size_t in_c, std::size_t out_c, std::size_t depth);

struct PoolingParams {
    CbrParams stem;
    std::vector<CbrParams> stages;

    std::size_t depth() const { return stages.size(); }
    std::size_t in_channels() const { return stem.conv.in_channels(); }
    std::size_t out_channels() const {
        return stages.empty() ? stem.conv.out_channels() : stages.back().conv.out_channels();
    }
};

PoolingParams make_pooling(std::size_t in_c, std::size_t out_c, std::size_t depth, Rng& rng);

template <MaybeConst<PoolingParams> P, class F>
void visit_params(P& p, const std::string& prefix, F&& f) {
    visit_params(p.stem, prefix + ".stem", f);
    for (std::size_t i = 0; i < p.stages.size(); ++i)
        visit_params(p.stages[i], prefix + ".stage" + std::to_string(i), f);
}

void set_bn_mode(PoolingParams& p, BnMode mode);

struct PoolingCache {
    CbrCache stem;
    std::vector<Shape> pool_input_shapes;
    std::vector<std::vector<std::size_t>> argmax;
    std::vector<CbrCache> stages;
};

Tensor pooling_forward(const Tensor& x, const PoolingParams& p, PoolingCache* cache = nullptr);
void update_running_stats(PoolingParams& p, const PoolingCache& cache);
Tensor pooling_backward(const PoolingParams& p, const PoolingCache& cache, const Tensor& grad_y,
                        PoolingParams& grad);

struct PoolingGrads {
    Tensor x;
    PoolingParams params;
};

PoolingGrads pooling_backward(const Tensor& x, const PoolingParams& p, const Tensor& grad_y);

}  // namespace convformer
