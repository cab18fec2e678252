#include "convformer/ops.hpp"

#include <algorithm>
#include <cmath>

namespace convformer {

namespace {

struct Dims {
    std::size_t n, c, h, w;
};

Dims dims4(const Tensor& t, const char* what) {
    require_rank(t, 4, what);
    return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

void check_conv(const Tensor& x, const ConvParams& p) {
    require_rank(p.weight, 4, "conv2d weight");
    const auto k = p.kernel();
    if (p.weight.dim(3) != k || k % 2 == 0)
        throw ShapeError("conv2d: kernel must be square and odd, got weight " + shape_str(p.weight.shape()));
    if (p.has_bias && (p.bias.rank() != 1 || p.bias.dim(0) != p.out_channels()))
        throw ShapeError("conv2d: bias " + shape_str(p.bias.shape()) + " inconsistent with weight " +
                         shape_str(p.weight.shape()));
    const auto d = dims4(x, "conv2d input");
    if (d.c != p.in_channels())
        throw ShapeError("conv2d: input " + shape_str(x.shape()) + " has " + std::to_string(d.c) +
                         " channels, weight " + shape_str(p.weight.shape()) + " expects " +
                         std::to_string(p.in_channels()));
}

// Valid output range [lo, hi) along one axis for kernel offset `off` (= tap - radius).
inline void tap_range(std::ptrdiff_t off, std::size_t extent, std::size_t& lo, std::size_t& hi) {
    const auto e = static_cast<std::ptrdiff_t>(extent);
    lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -off));
    hi = static_cast<std::size_t>(std::min<std::ptrdiff_t>(e, e - off));
    if (hi < lo) hi = lo;
}

}  // namespace

// ---------------------------------------------------------------------------

ConvParams make_conv(std::size_t in_c, std::size_t out_c, std::size_t k, bool bias, Rng& rng) {
    ConvParams p;
    p.weight = Tensor({out_c, in_c, k, k});
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_c * k * k));
    for (auto& v : p.weight.values()) v = rng.normal(0.0, stddev);
    p.bias = Tensor({out_c});
    p.has_bias = bias;
    return p;
}

Tensor conv2d(const Tensor& x, const ConvParams& p) {
    check_conv(x, p);
    const auto d = dims4(x, "conv2d input");
    const auto oc = p.out_channels();
    const auto k = p.kernel();
    const auto r = static_cast<std::ptrdiff_t>(k / 2);
    Tensor y({d.n, oc, d.h, d.w});
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t o = 0; o < oc; ++o) {
            double* yo = &y.at(n, o, 0, 0);
            if (p.has_bias) std::fill(yo, yo + d.h * d.w, p.bias[o]);
            for (std::size_t c = 0; c < d.c; ++c) {
                const double* xc = &x.at(n, c, 0, 0);
                for (std::size_t l = 0; l < k; ++l) {
                    const auto dl = static_cast<std::ptrdiff_t>(l) - r;
                    std::size_t i0, i1;
                    tap_range(dl, d.h, i0, i1);
                    for (std::size_t g = 0; g < k; ++g) {
                        const auto dg = static_cast<std::ptrdiff_t>(g) - r;
                        std::size_t j0, j1;
                        tap_range(dg, d.w, j0, j1);
                        const double wv = p.weight.at(o, c, l, g);
                        for (std::size_t i = i0; i < i1; ++i) {
                            double* yrow = yo + i * d.w;
                            const double* xrow = xc + (i + dl) * d.w + dg;
                            for (std::size_t j = j0; j < j1; ++j) yrow[j] += wv * xrow[j];
                        }
                    }
                }
            }
        }
    }
    return y;
}

ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_y) {
    check_conv(x, p);
    const auto d = dims4(x, "conv2d input");
    const auto oc = p.out_channels();
    if (grad_y.shape() != Shape{d.n, oc, d.h, d.w})
        throw ShapeError("conv2d_backward: grad_y " + shape_str(grad_y.shape()) + " does not match output " +
                         shape_str({d.n, oc, d.h, d.w}));
    const auto k = p.kernel();
    const auto r = static_cast<std::ptrdiff_t>(k / 2);
    ConvGrads g{Tensor::zeros_like(x), Tensor::zeros_like(p.weight), Tensor({oc})};
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t o = 0; o < oc; ++o) {
            const double* go = &grad_y.at(n, o, 0, 0);
            if (p.has_bias) {
                double s = 0.0;
                for (std::size_t q = 0; q < d.h * d.w; ++q) s += go[q];
                g.bias[o] += s;
            }
            for (std::size_t c = 0; c < d.c; ++c) {
                const double* xc = &x.at(n, c, 0, 0);
                double* gxc = &g.x.at(n, c, 0, 0);
                for (std::size_t l = 0; l < k; ++l) {
                    const auto dl = static_cast<std::ptrdiff_t>(l) - r;
                    std::size_t i0, i1;
                    tap_range(dl, d.h, i0, i1);
                    for (std::size_t gg = 0; gg < k; ++gg) {
                        const auto dg = static_cast<std::ptrdiff_t>(gg) - r;
                        std::size_t j0, j1;
                        tap_range(dg, d.w, j0, j1);
                        const double wv = p.weight.at(o, c, l, gg);
                        double gw = 0.0;
                        for (std::size_t i = i0; i < i1; ++i) {
                            const double* grow = go + i * d.w;
                            const double* xrow = xc + (i + dl) * d.w + dg;
                            double* gxrow = gxc + (i + dl) * d.w + dg;
                            for (std::size_t j = j0; j < j1; ++j) {
                                gw += grow[j] * xrow[j];
                                gxrow[j] += wv * grow[j];
                            }
                        }
                        g.weight.at(o, c, l, gg) += gw;
                    }
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------

MaxPoolResult maxpool2x2(const Tensor& x) {
    const auto d = dims4(x, "maxpool2x2 input");
    if (d.h % 2 != 0 || d.w % 2 != 0)
        throw ShapeError("maxpool2x2: spatial extent must be even, got " + shape_str(x.shape()));
    const auto oh = d.h / 2, ow = d.w / 2;
    MaxPoolResult r{Tensor({d.n, d.c, oh, ow}), {}};
    r.argmax.resize(r.y.size());
    std::size_t out = 0;
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t c = 0; c < d.c; ++c)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j, ++out) {
                    const std::size_t base = ((n * d.c + c) * d.h + 2 * i) * d.w + 2 * j;
                    const std::size_t cand[4] = {base, base + 1, base + d.w, base + d.w + 1};
                    std::size_t best = cand[0];
                    for (int t = 1; t < 4; ++t)
                        if (x[cand[t]] > x[best]) best = cand[t];
                    r.y[out] = x[best];
                    r.argmax[out] = best;
                }
    return r;
}

Tensor maxpool2x2_backward(const Shape& x_shape, const std::vector<std::size_t>& argmax, const Tensor& grad_y) {
    if (argmax.size() != grad_y.size())
        throw ShapeError("maxpool2x2_backward: grad_y " + shape_str(grad_y.shape()) +
                         " does not match the recorded index map");
    Tensor gx(x_shape);
    for (std::size_t q = 0; q < argmax.size(); ++q) gx[argmax[q]] += grad_y[q];
    return gx;
}

// ---------------------------------------------------------------------------

BatchNormState make_batchnorm(std::size_t channels) {
    BatchNormState s;
    s.gamma = Tensor({channels}, 1.0);
    s.beta = Tensor({channels}, 0.0);
    s.running_mean = Tensor({channels}, 0.0);
    s.running_var = Tensor({channels}, 1.0);
    return s;
}

BnResult batchnorm_forward(const Tensor& x, const BatchNormState& s) {
    const auto d = dims4(x, "batchnorm input");
    if (s.channels() != d.c || s.beta.size() != d.c || s.running_mean.size() != d.c ||
        s.running_var.size() != d.c)
        throw ShapeError("batchnorm: input " + shape_str(x.shape()) + " vs state with " +
                         std::to_string(s.channels()) + " channels");
    if (!(s.eps > 0.0)) throw std::invalid_argument("batchnorm: eps must be positive");
    const std::size_t plane = d.h * d.w;
    BnResult r;
    r.cache.mode = s.mode;
    r.cache.count = d.n * plane;
    r.cache.mean.assign(d.c, 0.0);
    r.cache.var.assign(d.c, 0.0);
    r.cache.inv_std.assign(d.c, 1.0);
    r.cache.xhat = Tensor::zeros_like(x);
    r.y = Tensor::zeros_like(x);

    for (std::size_t c = 0; c < d.c; ++c) {
        double mean = 0.0, var = 0.0, inv = 1.0;
        if (s.mode == BnMode::training) {
            for (std::size_t n = 0; n < d.n; ++n) {
                const double* xp = &x.at(n, c, 0, 0);
                for (std::size_t q = 0; q < plane; ++q) mean += xp[q];
            }
            mean /= static_cast<double>(r.cache.count);
            for (std::size_t n = 0; n < d.n; ++n) {
                const double* xp = &x.at(n, c, 0, 0);
                for (std::size_t q = 0; q < plane; ++q) var += (xp[q] - mean) * (xp[q] - mean);
            }
            var /= static_cast<double>(r.cache.count);
            inv = 1.0 / std::sqrt(var + s.eps);
        } else if (s.mode == BnMode::inference) {
            mean = s.running_mean[c];
            var = s.running_var[c];
            inv = 1.0 / std::sqrt(var + s.eps);
        }
        r.cache.mean[c] = mean;
        r.cache.var[c] = var;
        r.cache.inv_std[c] = inv;
        const double gamma = s.gamma[c], beta = s.beta[c];
        for (std::size_t n = 0; n < d.n; ++n) {
            const double* xp = &x.at(n, c, 0, 0);
            double* hp = &r.cache.xhat.at(n, c, 0, 0);
            double* yp = &r.y.at(n, c, 0, 0);
            for (std::size_t q = 0; q < plane; ++q) {
                const double h = s.mode == BnMode::bypass ? xp[q] : (xp[q] - mean) * inv;
                hp[q] = h;
                yp[q] = gamma * h + beta;
            }
        }
    }
    return r;
}

void update_running_stats(BatchNormState& s, const BnCache& cache) {
    if (cache.mode != BnMode::training) return;
    const double m = s.momentum;
    const double n = static_cast<double>(cache.count);
    const double unbias = cache.count > 1 ? n / (n - 1.0) : 1.0;
    for (std::size_t c = 0; c < s.channels(); ++c) {
        s.running_mean[c] = (1.0 - m) * s.running_mean[c] + m * cache.mean[c];
        s.running_var[c] = (1.0 - m) * s.running_var[c] + m * cache.var[c] * unbias;
    }
}

Tensor batchnorm(const Tensor& x, BatchNormState& s) {
    auto r = batchnorm_forward(x, s);
    update_running_stats(s, r.cache);
    return std::move(r.y);
}

BnGrads batchnorm_backward(const BatchNormState& s, const BnCache& cache, const Tensor& grad_y) {
    require_same_shape(grad_y, cache.xhat, "batchnorm_backward");
    const auto d = dims4(grad_y, "batchnorm grad");
    const std::size_t plane = d.h * d.w;
    BnGrads g{Tensor::zeros_like(grad_y), Tensor({d.c}), Tensor({d.c})};
    const double count = static_cast<double>(cache.count);
    for (std::size_t c = 0; c < d.c; ++c) {
        double sum_g = 0.0, sum_gh = 0.0;
        for (std::size_t n = 0; n < d.n; ++n) {
            const double* gp = &grad_y.at(n, c, 0, 0);
            const double* hp = &cache.xhat.at(n, c, 0, 0);
            for (std::size_t q = 0; q < plane; ++q) {
                sum_g += gp[q];
                sum_gh += gp[q] * hp[q];
            }
        }
        g.beta[c] = sum_g;
        g.gamma[c] = sum_gh;
        const double scale = s.gamma[c] * cache.inv_std[c];
        for (std::size_t n = 0; n < d.n; ++n) {
            const double* gp = &grad_y.at(n, c, 0, 0);
            const double* hp = &cache.xhat.at(n, c, 0, 0);
            double* gx = &g.x.at(n, c, 0, 0);
            for (std::size_t q = 0; q < plane; ++q) {
                if (cache.mode == BnMode::training)
                    gx[q] = scale * (gp[q] - sum_g / count - hp[q] * sum_gh / count);
                else
                    gx[q] = scale * gp[q];
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_y) {
    require_same_shape(x, grad_y, "relu_backward");
    Tensor g = grad_y;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!(x[i] > 0.0)) g[i] = 0.0;
    return g;
}

Tensor upsample_nearest2x(const Tensor& x) {
    const auto d = dims4(x, "upsample input");
    Tensor y({d.n, d.c, 2 * d.h, 2 * d.w});
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t c = 0; c < d.c; ++c)
            for (std::size_t i = 0; i < 2 * d.h; ++i)
                for (std::size_t j = 0; j < 2 * d.w; ++j) y.at(n, c, i, j) = x.at(n, c, i / 2, j / 2);
    return y;
}

Tensor upsample_nearest2x_backward(const Tensor& grad_y) {
    const auto d = dims4(grad_y, "upsample grad");
    if (d.h % 2 != 0 || d.w % 2 != 0)
        throw ShapeError("upsample_nearest2x_backward: odd extent in " + shape_str(grad_y.shape()));
    Tensor g({d.n, d.c, d.h / 2, d.w / 2});
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t c = 0; c < d.c; ++c)
            for (std::size_t i = 0; i < d.h; ++i)
                for (std::size_t j = 0; j < d.w; ++j) g.at(n, c, i / 2, j / 2) += grad_y.at(n, c, i, j);
    return g;
}

// ---------------------------------------------------------------------------

CbrParams make_cbr(std::size_t in_c, std::size_t out_c, std::size_t k, Rng& rng) {
    // Bias-free: batch norm absorbs any per-channel offset.
    return CbrParams{make_conv(in_c, out_c, k, false, rng), make_batchnorm(out_c)};
}

Tensor cbr_forward(const Tensor& x, const CbrParams& p, CbrCache* cache) {
    auto bn = batchnorm_forward(conv2d(x, p.conv), p.bn);
    Tensor y = relu(bn.y);
    if (cache) {
        cache->x = x;
        cache->bn = std::move(bn.cache);
        cache->pre_relu = std::move(bn.y);
    }
    return y;
}

void update_running_stats(CbrParams& p, const CbrCache& cache) { update_running_stats(p.bn, cache.bn); }

Tensor cbr_backward(const CbrParams& p, const CbrCache& cache, const Tensor& grad_y, CbrParams& grad) {
    const Tensor g_pre = relu_backward(cache.pre_relu, grad_y);
    auto bn = batchnorm_backward(p.bn, cache.bn, g_pre);
    grad.bn.gamma += bn.gamma;
    grad.bn.beta += bn.beta;
    auto conv = conv2d_backward(cache.x, p.conv, bn.x);
    grad.conv.weight += conv.weight;
    if (p.conv.has_bias) grad.conv.bias += conv.bias;
    return std::move(conv.x);
}

void set_bn_mode(CbrParams& p, BnMode mode) { p.bn.mode = mode; }

}  // namespace convformer
