#include "convformer/cffn.hpp"

namespace convformer {

CffnParams make_cffn(std::size_t c_m, std::size_t c_h, Rng& rng) {
    CffnParams p;
    p.stage1 = make_cbr(c_m, c_h, 1, rng);
    p.stage2 = make_cbr(c_h, c_m, 1, rng);
    return p;
}

void set_bn_mode(CffnParams& p, BnMode mode) {
    set_bn_mode(p.stage1, mode);
    set_bn_mode(p.stage2, mode);
}

Tensor cffn_forward(const Tensor& x, const CffnParams& p, CffnCache* cache) {
    if (p.stage1.conv.kernel() != 1 || p.stage2.conv.kernel() != 1)
        throw ShapeError("cffn_forward: both stages must use 1x1 kernels");
    const Tensor h = cbr_forward(x, p.stage1, cache ? &cache->stage1 : nullptr);
    return cbr_forward(h, p.stage2, cache ? &cache->stage2 : nullptr);
}

void update_running_stats(CffnParams& p, const CffnCache& cache) {
    update_running_stats(p.stage1, cache.stage1);
    update_running_stats(p.stage2, cache.stage2);
}

Tensor cffn_backward(const CffnParams& p, const CffnCache& cache, const Tensor& grad_y, CffnParams& grad) {
    const Tensor gh = cbr_backward(p.stage2, cache.stage2, grad_y, grad.stage2);
    return cbr_backward(p.stage1, cache.stage1, gh, grad.stage1);
}

CffnGrads cffn_backward(const Tensor& x, const CffnParams& p, const Tensor& grad_y) {
    CffnCache cache;
    const Tensor y = cffn_forward(x, p, &cache);
    require_same_shape(y, grad_y, "cffn_backward");
    CffnGrads g{Tensor{}, zeros_like_params(p)};
    g.x = cffn_backward(p, cache, grad_y, g.params);
    return g;
}

}  // namespace convformer
