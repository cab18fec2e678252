#include "convformer/pooling.hpp"

#include <cmath>
#include <stdexcept>

namespace convformer {

std::size_t patch_depth(std::size_t patch_size) {
    if (patch_size == 0 || (patch_size & (patch_size - 1)) != 0)
        throw std::invalid_argument("patch size S must be a power of two, got " + std::to_string(patch_size));
    std::size_t d = 0;
    while ((std::size_t{1} << d) < patch_size) ++d;
    return d;
}

std::vector<std::size_t> channel_schedule(std::size_t in_c, std::size_t out_c, std::size_t depth) {
    std::vector<std::size_t> widths(depth + 1);
    const double ratio = static_cast<double>(out_c) / static_cast<double>(in_c);
    for (std::size_t k = 0; k < depth; ++k) {
        const double t = static_cast<double>(k + 1) / static_cast<double>(depth + 1);
        const auto w = static_cast<std::size_t>(std::llround(static_cast<double>(in_c) * std::pow(ratio, t)));
        widths[k] = w == 0 ? 1 : w;
    }
    widths[depth] = out_c;
    return widths;
}

PoolingParams make_pooling(std::size_t in_c, std::size_t out_c, std::size_t depth, Rng& rng) {
    if (in_c == 0 || out_c == 0) throw std::invalid_argument("pooling: channel widths must be positive");
    const auto widths = channel_schedule(in_c, out_c, depth);
    PoolingParams p;
    p.stem = make_cbr(in_c, widths[0], 3, rng);
    for (std::size_t k = 1; k <= depth; ++k) p.stages.push_back(make_cbr(widths[k - 1], widths[k], 3, rng));
    return p;
}

void set_bn_mode(PoolingParams& p, BnMode mode) {
    set_bn_mode(p.stem, mode);
    for (auto& s : p.stages) set_bn_mode(s, mode);
}

Tensor pooling_forward(const Tensor& x, const PoolingParams& p, PoolingCache* cache) {
    require_rank(x, 4, "pooling_forward input");
    const std::size_t factor = std::size_t{1} << p.depth();
    if (x.dim(2) % factor != 0 || x.dim(3) % factor != 0)
        throw ShapeError("pooling_forward: H and W must be divisible by 2^d = " + std::to_string(factor) +
                         ", got input " + shape_str(x.shape()));
    if (cache) {
        *cache = PoolingCache{};
        cache->stages.resize(p.depth());
    }
    Tensor u = cbr_forward(x, p.stem, cache ? &cache->stem : nullptr);
    for (std::size_t k = 0; k < p.depth(); ++k) {
        auto pooled = maxpool2x2(u);
        if (cache) {
            cache->pool_input_shapes.push_back(u.shape());
            cache->argmax.push_back(std::move(pooled.argmax));
        }
        u = cbr_forward(pooled.y, p.stages[k], cache ? &cache->stages[k] : nullptr);
    }
    return u;
}

void update_running_stats(PoolingParams& p, const PoolingCache& cache) {
    update_running_stats(p.stem, cache.stem);
    for (std::size_t k = 0; k < p.depth(); ++k) update_running_stats(p.stages[k], cache.stages[k]);
}

Tensor pooling_backward(const PoolingParams& p, const PoolingCache& cache, const Tensor& grad_y,
                        PoolingParams& grad) {
    Tensor g = grad_y;
    for (std::size_t k = p.depth(); k-- > 0;) {
        g = cbr_backward(p.stages[k], cache.stages[k], g, grad.stages[k]);
        g = maxpool2x2_backward(cache.pool_input_shapes[k], cache.argmax[k], g);
    }
    return cbr_backward(p.stem, cache.stem, g, grad.stem);
}

PoolingGrads pooling_backward(const Tensor& x, const PoolingParams& p, const Tensor& grad_y) {
    PoolingCache cache;
    const Tensor y = pooling_forward(x, p, &cache);
    require_same_shape(y, grad_y, "pooling_backward");
    PoolingGrads out{Tensor{}, zeros_like_params(p)};
    out.x = pooling_backward(p, cache, grad_y, out.params);
    return out;
}

}  // namespace convformer
