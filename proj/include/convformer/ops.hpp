#pragma once

// Differentiable primitives: same-padded convolution, 2x2 max-pooling,
// batch normalization, ReLU, nearest upsampling, and the conv-BN-ReLU
// composite that every ConvFormer stage is assembled from.
//
// All activations are [n, c, h, w]. Forward functions are pure; batch norm
// returns its batch statistics in the cache and the caller decides whether
// to fold them into the running statistics.

#include <concepts>
#include <cstddef>
#include <string>
#include <type_traits>
#include <vector>

#include "convformer/random.hpp"
#include "convformer/tensor.hpp"

namespace convformer {

enum class ParamKind { trainable, buffer };

template <class T, class U>
concept MaybeConst = std::same_as<std::remove_const_t<T>, U>;

// ---------------------------------------------------------------------------
// Convolution

struct ConvParams {
    Tensor weight;  // [out_c, in_c, k, k]
    Tensor bias;    // [out_c]; ignored when has_bias is false
    bool has_bias = true;

    std::size_t out_channels() const { return weight.dim(0); }
    std::size_t in_channels() const { return weight.dim(1); }
    std::size_t kernel() const { return weight.dim(2); }
};

// He-normal weights (std = sqrt(2 / fan_in)), zero bias.
ConvParams make_conv(std::size_t in_c, std::size_t out_c, std::size_t k, bool bias, Rng& rng);

template <MaybeConst<ConvParams> P, class F>
void visit_params(P& p, const std::string& prefix, F&& f) {
    f(prefix + ".weight", p.weight, ParamKind::trainable);
    if (p.has_bias) f(prefix + ".bias", p.bias, ParamKind::trainable);
}

Tensor conv2d(const Tensor& x, const ConvParams& p);

struct ConvGrads {
    Tensor x;
    Tensor weight;
    Tensor bias;  // all zeros when the conv has no bias
};

ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_y);

// ---------------------------------------------------------------------------
// 2x2 max-pooling, stride 2. Ties go to the first element in row-major scan.

struct MaxPoolResult {
    Tensor y;
    std::vector<std::size_t> argmax;  // flat index into x for every element of y
};

MaxPoolResult maxpool2x2(const Tensor& x);
Tensor maxpool2x2_backward(const Shape& x_shape, const std::vector<std::size_t>& argmax,
                           const Tensor& grad_y);

// ---------------------------------------------------------------------------
// Batch normalization

enum class BnMode {
    training,   // batch statistics
    inference,  // running statistics
    bypass,     // affine only: gamma * x + beta
};

struct BatchNormState {
    Tensor gamma, beta;
    Tensor running_mean, running_var;
    double eps = 1e-5;
    double momentum = 0.1;
    BnMode mode = BnMode::training;

    std::size_t channels() const { return gamma.size(); }
};

BatchNormState make_batchnorm(std::size_t channels);

template <MaybeConst<BatchNormState> P, class F>
void visit_params(P& p, const std::string& prefix, F&& f) {
    f(prefix + ".gamma", p.gamma, ParamKind::trainable);
    f(prefix + ".beta", p.beta, ParamKind::trainable);
    f(prefix + ".running_mean", p.running_mean, ParamKind::buffer);
    f(prefix + ".running_var", p.running_var, ParamKind::buffer);
}

struct BnCache {
    BnMode mode = BnMode::training;
    Tensor xhat;                  // normalized input (the raw input in bypass mode)
    std::vector<double> mean;     // batch mean (training) or running mean
    std::vector<double> var;      // biased batch variance (training) or running variance
    std::vector<double> inv_std;  // 1 / sqrt(var + eps); 1 in bypass mode
    std::size_t count = 0;        // n * h * w
};

struct BnResult {
    Tensor y;
    BnCache cache;
};

BnResult batchnorm_forward(const Tensor& x, const BatchNormState& s);

// Folds training-mode batch statistics into the running estimates.
void update_running_stats(BatchNormState& s, const BnCache& cache);

// Forward plus running-stat update, for callers that do not need backward.
Tensor batchnorm(const Tensor& x, BatchNormState& s);

struct BnGrads {
    Tensor x;
    Tensor gamma;
    Tensor beta;
};

BnGrads batchnorm_backward(const BatchNormState& s, const BnCache& cache, const Tensor& grad_y);

// ---------------------------------------------------------------------------
// Elementwise and resampling

Tensor relu(const Tensor& x);
// Passes grad where x > 0; the subgradient at 0 is 0.
Tensor relu_backward(const Tensor& x, const Tensor& grad_y);

Tensor upsample_nearest2x(const Tensor& x);
Tensor upsample_nearest2x_backward(const Tensor& grad_y);

// ---------------------------------------------------------------------------
// conv -> batch norm -> ReLU

struct CbrParams {
    ConvParams conv;
    BatchNormState bn;
};

CbrParams make_cbr(std::size_t in_c, std::size_t out_c, std::size_t k, Rng& rng);

template <MaybeConst<CbrParams> P, class F>
void visit_params(P& p, const std::string& prefix, F&& f) {
    visit_params(p.conv, prefix + ".conv", f);
    visit_params(p.bn, prefix + ".bn", f);
}

struct CbrCache {
    Tensor x;
    BnCache bn;
    Tensor pre_relu;
};

Tensor cbr_forward(const Tensor& x, const CbrParams& p, CbrCache* cache = nullptr);
void update_running_stats(CbrParams& p, const CbrCache& cache);
// Accumulates parameter gradients into grad and returns the input gradient.
Tensor cbr_backward(const CbrParams& p, const CbrCache& cache, const Tensor& grad_y, CbrParams& grad);

void set_bn_mode(CbrParams& p, BnMode mode);

// ---------------------------------------------------------------------------
// Generic helpers over any visitable parameter struct.

// Copy of p with every tensor zeroed; used as a gradient accumulator.
template <class P>
P zeros_like_params(const P& p) {
    P out = p;
    visit_params(out, std::string{}, [](const std::string&, Tensor& t, ParamKind) { t.fill(0.0); });
    return out;
}

template <class P>
std::size_t count_trainable(const P& p) {
    std::size_t n = 0;
    visit_params(p, std::string{}, [&](const std::string&, const Tensor& t, ParamKind kind) {
        if (kind == ParamKind::trainable) n += t.size();
    });
    return n;
}

}  // namespace convformer
