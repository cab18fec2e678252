#pragma once

// Brute-force CSA written straight from the definitions with plain loops.
// Reads only raw parameter tensors; shares no code with csa.cpp.

#include <cmath>
#include <vector>

#include "convformer/csa.hpp"

namespace oracle {

using convformer::Tensor;

struct Result {
    Tensor y;
    // [sample][head] -> I, M, A as flat h*w*h*w vectors
    std::vector<std::vector<std::vector<double>>> I, M, A;
};

inline double conv3x3_at(const Tensor& w, const Tensor& x, std::size_t s, std::size_t o, long i, long j) {
    const long h = static_cast<long>(x.dim(2)), wd = static_cast<long>(x.dim(3));
    double acc = 0.0;
    for (std::size_t c = 0; c < w.dim(1); ++c)
        for (long l = 0; l < 3; ++l)
            for (long g = 0; g < 3; ++g) {
                const long ii = i + l - 1, jj = j + g - 1;
                if (ii < 0 || ii >= h || jj < 0 || jj >= wd) continue;
                acc += w.at(o, c, static_cast<std::size_t>(l), static_cast<std::size_t>(g)) *
                       x.at(s, c, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
            }
    return acc;
}

// depth d and input extents H, W describe how the token grid was produced.
inline Result csa(const Tensor& x, const convformer::CsaParams& p, std::size_t d, std::size_t H, std::size_t W) {
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t cq = p.query.weight.dim(0), heads = p.heads, ch = cq / heads;
    const std::size_t P = h * w;

    Result r;
    Tensor z({n, cq, h, w});
    r.I.resize(n);
    r.M.resize(n);
    r.A.resize(n);
    for (std::size_t s = 0; s < n; ++s) {
        std::vector<std::vector<double>> q(cq, std::vector<double>(P)), k = q, v = q;
        for (std::size_t o = 0; o < cq; ++o)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    q[o][i * w + j] = conv3x3_at(p.query.weight, x, s, o, static_cast<long>(i), static_cast<long>(j));
                    k[o][i * w + j] = conv3x3_at(p.key.weight, x, s, o, static_cast<long>(i), static_cast<long>(j));
                    v[o][i * w + j] = conv3x3_at(p.value.weight, x, s, o, static_cast<long>(i), static_cast<long>(j));
                }
        for (std::size_t g = 0; g < heads; ++g) {
            const double theta = 1.0 / (1.0 + std::exp(-p.theta_raw[g]));
            const double sy = std::pow(2.0, static_cast<double>(d)) / static_cast<double>(H);
            const double sx = std::pow(2.0, static_cast<double>(d)) / static_cast<double>(W);
            std::vector<double> I(P * P), M(P * P), A(P * P);
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    for (std::size_t m = 0; m < h; ++m)
                        for (std::size_t nn = 0; nn < w; ++nn) {
                            double dot = 0.0, qq = 0.0, kk = 0.0;
                            for (std::size_t c = g * ch; c < (g + 1) * ch; ++c) {
                                dot += q[c][i * w + j] * k[c][m * w + nn];
                                qq += q[c][i * w + j] * q[c][i * w + j];
                                kk += k[c][m * w + nn] * k[c][m * w + nn];
                            }
                            const std::size_t idx = (i * w + j) * P + m * w + nn;
                            I[idx] = dot / (std::sqrt(qq) * std::sqrt(kk) + 1e-8);
                            const double di = static_cast<double>(i) - static_cast<double>(m);
                            const double dj = static_cast<double>(j) - static_cast<double>(nn);
                            const double spread = theta * p.alpha;
                            M[idx] = std::exp(-(di * di * sy * sy + dj * dj * sx * sx) / (2.0 * spread * spread));
                            A[idx] = I[idx] * M[idx];
                        }
            for (std::size_t c = g * ch; c < (g + 1) * ch; ++c)
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < w; ++j) {
                        double acc = 0.0;
                        for (std::size_t m = 0; m < h; ++m)
                            for (std::size_t nn = 0; nn < w; ++nn)
                                acc += A[(i * w + j) * P + m * w + nn] * v[c][m * w + nn];
                        z.at(s, c, i, j) = acc;
                    }
            r.I[s].push_back(std::move(I));
            r.M[s].push_back(std::move(M));
            r.A[s].push_back(std::move(A));
        }
    }

    // 1x1 conv -> batch norm -> ReLU
    const auto& cw = p.out_proj.conv;
    const auto& bn = p.out_proj.bn;
    const std::size_t cm = cw.weight.dim(0);
    Tensor pre({n, cm, h, w});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t o = 0; o < cm; ++o)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    double acc = cw.has_bias ? cw.bias[o] : 0.0;
                    for (std::size_t c = 0; c < cq; ++c) acc += cw.weight.at(o, c, 0, 0) * z.at(s, c, i, j);
                    pre.at(s, o, i, j) = acc;
                }
    r.y = Tensor({n, cm, h, w});
    const double count = static_cast<double>(n * h * w);
    for (std::size_t o = 0; o < cm; ++o) {
        double mean = 0.0, var = 0.0;
        if (bn.mode == convformer::BnMode::training) {
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < w; ++j) mean += pre.at(s, o, i, j);
            mean /= count;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < w; ++j) var += (pre.at(s, o, i, j) - mean) * (pre.at(s, o, i, j) - mean);
            var /= count;
        } else {
            mean = bn.running_mean[o];
            var = bn.running_var[o];
        }
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    const double t = bn.mode == convformer::BnMode::bypass
                                         ? bn.gamma[o] * pre.at(s, o, i, j) + bn.beta[o]
                                         : bn.gamma[o] * (pre.at(s, o, i, j) - mean) / std::sqrt(var + bn.eps) + bn.beta[o];
                    r.y.at(s, o, i, j) = t > 0.0 ? t : 0.0;
                }
    }
    return r;
}

}  // namespace oracle
