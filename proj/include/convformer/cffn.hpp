#pragma once

// Convolutional feed-forward network: two 1x1 conv-BN-ReLU stages,
// c_m -> c_h -> c_m. Every output pixel depends only on the same input pixel.

#include <string>

#include "convformer/ops.hpp"

namespace convformer {

struct CffnParams {
    CbrParams stage1;  // c_m -> c_h
    CbrParams stage2;  // c_h -> c_m

    std::size_t hidden_channels() const { return stage1.conv.out_channels(); }
};

CffnParams make_cffn(std::size_t c_m, std::size_t c_h, Rng& rng);

template <MaybeConst<CffnParams> P, class F>
void visit_params(P& p, const std::string& prefix, F&& f) {
    visit_params(p.stage1, prefix + ".stage1", f);
    visit_params(p.stage2, prefix + ".stage2", f);
}

void set_bn_mode(CffnParams& p, BnMode mode);

struct CffnCache {
    CbrCache stage1, stage2;
};

Tensor cffn_forward(const Tensor& x, const CffnParams& p, CffnCache* cache = nullptr);
void update_running_stats(CffnParams& p, const CffnCache& cache);
Tensor cffn_backward(const CffnParams& p, const CffnCache& cache, const Tensor& grad_y, CffnParams& grad);

struct CffnGrads {
    Tensor x;
    CffnParams params;
};

CffnGrads cffn_backward(const Tensor& x, const CffnParams& p, const Tensor& grad_y);

}  // namespace convformer
