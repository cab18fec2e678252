#pragma once

// CNN-style self-attention.
//
// Each pixel (i, j) of the token grid gets its own dense h' x w' kernel
//   A[i,j,m,n] = I[i,j,m,n] * M[i,j,m,n]
// where I is the cosine similarity between the 3x3-projected query at (i, j)
// and key at (m, n), and M is a Gaussian in the normalized grid distance with
// learnable spread theta * alpha. The kernel is applied to V by plain
// summation (no softmax, no flipping), heads are concatenated, and a 1x1
// conv-BN-ReLU integrates the result back to c_m channels.

#include <cstddef>
#include <string>
#include <vector>

#include "convformer/ops.hpp"

namespace convformer {

inline constexpr double kCosineEps = 1e-8;
inline constexpr double kDefaultTheta = 0.1;

double sigmoid(double x);
double logit(double p);

struct CsaParams {
    ConvParams query, key, value;  // bias-free 3x3, c_m -> c_q
    Tensor theta_raw;              // [heads]; theta = sigmoid(theta_raw)
    CbrParams out_proj;            // 1x1, c_q -> c_m
    std::size_t heads = 1;
    double alpha = 1.0;

    std::size_t embed_channels() const { return query.in_channels(); }
    std::size_t query_channels() const { return query.out_channels(); }
    double theta(std::size_t head) const { return sigmoid(theta_raw[head]); }
};

CsaParams make_csa(std::size_t c_m, std::size_t c_q, std::size_t heads, double alpha, Rng& rng);

template <MaybeConst<CsaParams> P, class F>
void visit_params(P& p, const std::string& prefix, F&& f) {
    visit_params(p.query, prefix + ".query", f);
    visit_params(p.key, prefix + ".key", f);
    visit_params(p.value, prefix + ".value", f);
    f(prefix + ".theta_raw", p.theta_raw, ParamKind::trainable);
    visit_params(p.out_proj, prefix + ".out_proj", f);
}

void set_bn_mode(CsaParams& p, BnMode mode);

// Per-sample attention, one [h', w', h', w'] tensor per head for each factor.
struct AttentionField {
    std::size_t height = 0, width = 0;
    std::vector<Tensor> scores;  // I: cosine similarity, in [-1, 1]
    std::vector<Tensor> mask;    // M: Gaussian distance weight, in (0, 1]
    std::vector<Tensor> field;   // A = I * M

    std::size_t heads() const { return field.size(); }
    std::size_t positions() const { return height * width; }
};

struct QkvProjection {
    Tensor q, k, v;  // [n, c_q, h', w']
};

QkvProjection project_qkv(const Tensor& x1, const CsaParams& p);

// I for one head of one sample: q, k are [c, h, w]; returns [h, w, h, w].
Tensor cosine_scores(const Tensor& q, const Tensor& k);

// M for a token grid of grid_h x grid_w cells produced from an H x W input by
// `depth` halvings. Returns [grid_h, grid_w, grid_h, grid_w].
Tensor gaussian_mask(double theta, double alpha, std::size_t grid_h, std::size_t grid_w, std::size_t depth,
                     std::size_t input_h, std::size_t input_w);

struct CsaCache {
    Tensor x;
    QkvProjection qkv;
    std::vector<AttentionField> fields;  // per sample
    CbrCache out_proj;
};

struct CsaOutput {
    Tensor y;                               // [n, c_m, h', w']
    std::vector<AttentionField> attention;  // per sample; empty unless requested
};

CsaOutput csa_forward(const Tensor& x1, const CsaParams& p, CsaCache* cache = nullptr,
                      bool record_attention = true);
void update_running_stats(CsaParams& p, const CsaCache& cache);
Tensor csa_backward(const CsaParams& p, const CsaCache& cache, const Tensor& grad_y, CsaParams& grad);

struct CsaGrads {
    Tensor x;
    CsaParams params;
};

CsaGrads csa_backward(const Tensor& x1, const CsaParams& p, const Tensor& grad_y);

}  // namespace convformer
