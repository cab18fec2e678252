#include "convformer/csa.hpp"

#include <cmath>
#include <stdexcept>

namespace convformer {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

CsaParams make_csa(std::size_t c_m, std::size_t c_q, std::size_t heads, double alpha, Rng& rng) {
    if (heads == 0 || c_q % heads != 0)
        throw std::invalid_argument("csa: c_q = " + std::to_string(c_q) + " is not divisible by heads = " +
                                    std::to_string(heads));
    if (!(alpha > 0.0)) throw std::invalid_argument("csa: alpha must be positive");
    CsaParams p;
    p.query = make_conv(c_m, c_q, 3, false, rng);
    p.key = make_conv(c_m, c_q, 3, false, rng);
    p.value = make_conv(c_m, c_q, 3, false, rng);
    p.theta_raw = Tensor({heads}, logit(kDefaultTheta));
    p.out_proj = make_cbr(c_q, c_m, 1, rng);
    p.heads = heads;
    p.alpha = alpha;
    return p;
}

void set_bn_mode(CsaParams& p, BnMode mode) { set_bn_mode(p.out_proj, mode); }

QkvProjection project_qkv(const Tensor& x1, const CsaParams& p) {
    require_rank(x1, 4, "project_qkv input");
    if (x1.dim(1) != p.embed_channels())
        throw ShapeError("project_qkv: input " + shape_str(x1.shape()) + " has " + std::to_string(x1.dim(1)) +
                         " channels, projections expect c_m = " + std::to_string(p.embed_channels()));
    return {conv2d(x1, p.query), conv2d(x1, p.key), conv2d(x1, p.value)};
}

namespace {

// Squared normalized distance between grid cells p = (i, j) and r = (m, n).
inline double grid_distance2(std::size_t i, std::size_t j, std::size_t m, std::size_t n, double scale_h,
                             double scale_w) {
    const double di = static_cast<double>(i) - static_cast<double>(m);
    const double dj = static_cast<double>(j) - static_cast<double>(n);
    return di * di * (scale_h * scale_h) + dj * dj * (scale_w * scale_w);
}

Tensor mask_from_scales(double theta, double alpha, std::size_t gh, std::size_t gw, double scale_h,
                        double scale_w) {
    const double spread = theta * alpha;
    const double denom = 2.0 * (spread * spread);
    Tensor m({gh, gw, gh, gw});
    std::size_t idx = 0;
    for (std::size_t i = 0; i < gh; ++i)
        for (std::size_t j = 0; j < gw; ++j)
            for (std::size_t a = 0; a < gh; ++a)
                for (std::size_t b = 0; b < gw; ++b) m[idx++] = std::exp(-grid_distance2(i, j, a, b, scale_h, scale_w) / denom);
    return m;
}

// Channel-major [c, P] slice to position-major [P, c] for cache-friendly dots.
std::vector<double> to_position_major(const double* src, std::size_t c, std::size_t positions) {
    std::vector<double> out(c * positions);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t q = 0; q < positions; ++q) out[q * c + ch] = src[ch * positions + q];
    return out;
}

std::vector<double> row_norms(const std::vector<double>& pm, std::size_t c, std::size_t positions) {
    std::vector<double> n(positions);
    for (std::size_t q = 0; q < positions; ++q) {
        double s = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) s += pm[q * c + ch] * pm[q * c + ch];
        n[q] = std::sqrt(s);
    }
    return n;
}

void fill_scores(const double* q, const double* k, std::size_t c, std::size_t positions, double* out) {
    const auto qp = to_position_major(q, c, positions);
    const auto kp = to_position_major(k, c, positions);
    const auto qn = row_norms(qp, c, positions);
    const auto kn = row_norms(kp, c, positions);
    for (std::size_t a = 0; a < positions; ++a) {
        const double* qa = &qp[a * c];
        for (std::size_t b = 0; b < positions; ++b) {
            const double* kb = &kp[b * c];
            double dot = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) dot += qa[ch] * kb[ch];
            out[a * positions + b] = dot / (qn[a] * kn[b] + kCosineEps);
        }
    }
}

void require_finite(const Tensor& t, const char* stage) {
    if (!t.all_finite()) throw NumericError(std::string("csa_forward: non-finite values in ") + stage);
}

}  // namespace

Tensor cosine_scores(const Tensor& q, const Tensor& k) {
    require_rank(q, 3, "cosine_scores Q");
    require_same_shape(q, k, "cosine_scores");
    const std::size_t c = q.dim(0), h = q.dim(1), w = q.dim(2);
    Tensor out({h, w, h, w});
    fill_scores(q.data().data(), k.data().data(), c, h * w, out.data().data());
    return out;
}

Tensor gaussian_mask(double theta, double alpha, std::size_t grid_h, std::size_t grid_w, std::size_t depth,
                     std::size_t input_h, std::size_t input_w) {
    if (!(theta > 0.0 && theta < 1.0)) throw std::invalid_argument("gaussian_mask: theta must lie in (0, 1)");
    if (!(alpha > 0.0)) throw std::invalid_argument("gaussian_mask: alpha must be positive");
    const double cell = std::ldexp(1.0, static_cast<int>(depth));
    return mask_from_scales(theta, alpha, grid_h, grid_w, cell / static_cast<double>(input_h),
                            cell / static_cast<double>(input_w));
}

CsaOutput csa_forward(const Tensor& x1, const CsaParams& p, CsaCache* cache, bool record_attention) {
    if (p.heads == 0 || p.query_channels() % p.heads != 0)
        throw std::invalid_argument("csa_forward: c_q not divisible by head count");
    if (p.theta_raw.size() != p.heads)
        throw ShapeError("csa_forward: theta_raw " + shape_str(p.theta_raw.shape()) + " but heads = " +
                         std::to_string(p.heads));
    QkvProjection qkv = project_qkv(x1, p);
    require_finite(qkv.q, "Q projection");
    require_finite(qkv.k, "K projection");
    require_finite(qkv.v, "V projection");

    const std::size_t n_batch = x1.dim(0), cq = p.query_channels(), gh = x1.dim(2), gw = x1.dim(3);
    const std::size_t positions = gh * gw, ch = cq / p.heads;
    // 2^d / H == 1 / h' exactly, since H = h' * 2^d.
    const double scale_h = 1.0 / static_cast<double>(gh), scale_w = 1.0 / static_cast<double>(gw);

    std::vector<Tensor> masks;
    for (std::size_t g = 0; g < p.heads; ++g)
        masks.push_back(mask_from_scales(p.theta(g), p.alpha, gh, gw, scale_h, scale_w));

    Tensor z({n_batch, cq, gh, gw});
    std::vector<AttentionField> fields(n_batch);
    for (std::size_t n = 0; n < n_batch; ++n) {
        AttentionField& af = fields[n];
        af.height = gh;
        af.width = gw;
        for (std::size_t g = 0; g < p.heads; ++g) {
            Tensor scores({gh, gw, gh, gw});
            fill_scores(&qkv.q.at(n, g * ch, 0, 0), &qkv.k.at(n, g * ch, 0, 0), ch, positions,
                        scores.data().data());
            require_finite(scores, "cosine scores");
            Tensor field = scores;
            for (std::size_t t = 0; t < field.size(); ++t) field[t] = scores[t] * masks[g][t];

            const double* v = &qkv.v.at(n, g * ch, 0, 0);
            double* zo = &z.at(n, g * ch, 0, 0);
            for (std::size_t a = 0; a < positions; ++a) {
                const double* arow = &field[a * positions];
                for (std::size_t c = 0; c < ch; ++c) {
                    const double* vc = v + c * positions;
                    double s = 0.0;
                    for (std::size_t b = 0; b < positions; ++b) s += arow[b] * vc[b];
                    zo[c * positions + a] = s;
                }
            }
            af.scores.push_back(std::move(scores));
            af.mask.push_back(masks[g]);
            af.field.push_back(std::move(field));
        }
    }
    require_finite(z, "value aggregation");

    CsaOutput out;
    out.y = cbr_forward(z, p.out_proj, cache ? &cache->out_proj : nullptr);
    require_finite(out.y, "output projection");
    if (cache) {
        cache->x = x1;
        cache->qkv = std::move(qkv);
        if (record_attention) out.attention = fields;
        cache->fields = std::move(fields);
    } else if (record_attention) {
        out.attention = std::move(fields);
    }
    return out;
}

void update_running_stats(CsaParams& p, const CsaCache& cache) { update_running_stats(p.out_proj, cache.out_proj); }

Tensor csa_backward(const CsaParams& p, const CsaCache& cache, const Tensor& grad_y, CsaParams& grad) {
    const Tensor gz = cbr_backward(p.out_proj, cache.out_proj, grad_y, grad.out_proj);
    const auto& qkv = cache.qkv;
    const std::size_t n_batch = cache.x.dim(0), cq = p.query_channels(), gh = cache.x.dim(2),
                      gw = cache.x.dim(3);
    const std::size_t positions = gh * gw, ch = cq / p.heads;
    const double scale_h = 1.0 / static_cast<double>(gh), scale_w = 1.0 / static_cast<double>(gw);

    Tensor gq = Tensor::zeros_like(qkv.q), gk = Tensor::zeros_like(qkv.k), gv = Tensor::zeros_like(qkv.v);
    std::vector<double> g_spread(p.heads, 0.0);
    std::vector<double> g_field(positions * positions);

    for (std::size_t n = 0; n < n_batch; ++n) {
        const AttentionField& af = cache.fields[n];
        for (std::size_t g = 0; g < p.heads; ++g) {
            const Tensor& scores = af.scores[g];
            const Tensor& mask = af.mask[g];
            const Tensor& field = af.field[g];
            const double* v = &qkv.v.at(n, g * ch, 0, 0);
            const double* gzo = &gz.at(n, g * ch, 0, 0);
            double* gvo = &gv.at(n, g * ch, 0, 0);

            // Z[c,a] = sum_b A[a,b] V[c,b]
            for (std::size_t a = 0; a < positions; ++a) {
                const double* arow = &field[a * positions];
                double* garow = &g_field[a * positions];
                for (std::size_t b = 0; b < positions; ++b) garow[b] = 0.0;
                for (std::size_t c = 0; c < ch; ++c) {
                    const double gza = gzo[c * positions + a];
                    const double* vc = v + c * positions;
                    double* gvc = gvo + c * positions;
                    for (std::size_t b = 0; b < positions; ++b) {
                        garow[b] += gza * vc[b];
                        gvc[b] += arow[b] * gza;
                    }
                }
            }

            // A = I * M; M depends on theta through spread s = theta * alpha:
            // dM/ds = M * D / s^3.
            const double theta = p.theta(g);
            const double spread = theta * p.alpha;
            double acc_spread = 0.0;
            for (std::size_t a = 0; a < positions; ++a) {
                const std::size_t i = a / gw, j = a % gw;
                for (std::size_t b = 0; b < positions; ++b) {
                    const double dist = grid_distance2(i, j, b / gw, b % gw, scale_h, scale_w);
                    const double gm = g_field[a * positions + b] * scores[a * positions + b];
                    acc_spread += gm * mask[a * positions + b] * dist;
                }
            }
            g_spread[g] += acc_spread / (spread * spread * spread);

            // I = <q_a, k_b> / (|q_a| |k_b| + eps)
            for (std::size_t t = 0; t < g_field.size(); ++t) g_field[t] *= mask[t];
            const auto qp = to_position_major(&qkv.q.at(n, g * ch, 0, 0), ch, positions);
            const auto kp = to_position_major(&qkv.k.at(n, g * ch, 0, 0), ch, positions);
            const auto qn = row_norms(qp, ch, positions);
            const auto kn = row_norms(kp, ch, positions);
            std::vector<double> gqp(ch * positions, 0.0), gkp(ch * positions, 0.0);
            std::vector<double> q_radial(positions, 0.0), k_radial(positions, 0.0);
            for (std::size_t a = 0; a < positions; ++a) {
                const double* qa = &qp[a * ch];
                double* gqa = &gqp[a * ch];
                for (std::size_t b = 0; b < positions; ++b) {
                    const double gi = g_field[a * positions + b];
                    if (gi == 0.0) continue;
                    const double* kb = &kp[b * ch];
                    double* gkb = &gkp[b * ch];
                    double dot = 0.0;
                    for (std::size_t c = 0; c < ch; ++c) dot += qa[c] * kb[c];
                    const double den = qn[a] * kn[b] + kCosineEps;
                    const double lin = gi / den;
                    for (std::size_t c = 0; c < ch; ++c) {
                        gqa[c] += lin * kb[c];
                        gkb[c] += lin * qa[c];
                    }
                    const double rad = gi * dot / (den * den);
                    q_radial[a] += rad * kn[b];
                    k_radial[b] += rad * qn[a];
                }
            }
            double* gqo = &gq.at(n, g * ch, 0, 0);
            double* gko = &gk.at(n, g * ch, 0, 0);
            for (std::size_t a = 0; a < positions; ++a) {
                for (std::size_t c = 0; c < ch; ++c) {
                    double gqa = gqp[a * ch + c];
                    double gka = gkp[a * ch + c];
                    if (qn[a] > 0.0) gqa -= q_radial[a] * qp[a * ch + c] / qn[a];
                    if (kn[a] > 0.0) gka -= k_radial[a] * kp[a * ch + c] / kn[a];
                    gqo[c * positions + a] += gqa;
                    gko[c * positions + a] += gka;
                }
            }
        }
    }

    for (std::size_t g = 0; g < p.heads; ++g) {
        const double theta = p.theta(g);
        grad.theta_raw[g] += g_spread[g] * p.alpha * theta * (1.0 - theta);
    }

    auto bq = conv2d_backward(cache.x, p.query, gq);
    auto bk = conv2d_backward(cache.x, p.key, gk);
    auto bv = conv2d_backward(cache.x, p.value, gv);
    grad.query.weight += bq.weight;
    grad.key.weight += bk.weight;
    grad.value.weight += bv.weight;
    Tensor gx = std::move(bq.x);
    gx += bk.x;
    gx += bv.x;
    return gx;
}

CsaGrads csa_backward(const Tensor& x1, const CsaParams& p, const Tensor& grad_y) {
    CsaCache cache;
    const auto out = csa_forward(x1, p, &cache, false);
    require_same_shape(out.y, grad_y, "csa_backward");
    CsaGrads g{Tensor{}, zeros_like_params(p)};
    g.x = csa_backward(p, cache, grad_y, g.params);
    return g;
}

}  // namespace convformer
