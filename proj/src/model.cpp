#include "convformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace convformer {

namespace {

std::string join(const std::vector<std::string>& parts) {
    std::string out = "invalid config:";
    for (const auto& p : parts) out += " " + p + ";";
    return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::invalid_argument(join(problems)), problems_(std::move(problems)) {}

void ConvFormerConfig::validate() const {
    std::vector<std::string> bad;
    auto positive = [&](std::size_t v, const char* name) {
        if (v == 0) bad.push_back(std::string(name) + " must be positive");
    };
    positive(in_channels, "in_channels");
    positive(embed_channels, "embed_channels");
    positive(query_channels, "query_channels");
    positive(hidden_channels, "hidden_channels");
    positive(heads, "heads");
    positive(num_classes, "num_classes");
    positive(height, "height");
    positive(width, "width");
    if (num_classes < 2) bad.push_back("num_classes must be at least 2");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) bad.push_back("alpha must be a positive finite number");
    if (heads > 0 && query_channels % heads != 0) bad.push_back("query_channels must be divisible by heads");
    if (patch_size == 0 || (patch_size & (patch_size - 1)) != 0) {
        bad.push_back("patch_size must be a power of two");
    } else {
        const std::size_t f = patch_size;
        if (height % f != 0 || width % f != 0)
            bad.push_back("height and width must be divisible by patch_size = " + std::to_string(f));
    }
    if (!bad.empty()) throw ConfigError(std::move(bad));
}

SegModel build(const ConvFormerConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    SegModel m;
    m.config = config;
    const std::size_t d = config.depth();
    m.pooling = make_pooling(config.in_channels, config.embed_channels, d, rng);
    for (std::size_t l = 0; l < config.layers; ++l) {
        ConvFormerBlock b;
        b.csa = make_csa(config.embed_channels, config.query_channels, config.heads, config.alpha, rng);
        b.cffn = make_cffn(config.embed_channels, config.hidden_channels, rng);
        m.blocks.push_back(std::move(b));
    }
    const std::size_t c_m = config.embed_channels;
    for (std::size_t k = 0; k < d; ++k) m.decoder.push_back(make_cbr(c_m, c_m, 3, rng));
    m.head = make_conv(c_m, config.num_classes, 1, true, rng);
    return m;
}

void set_bn_mode(SegModel& m, BnMode mode) {
    set_bn_mode(m.pooling, mode);
    for (auto& b : m.blocks) {
        set_bn_mode(b.csa, mode);
        set_bn_mode(b.cffn, mode);
    }
    for (auto& s : m.decoder) set_bn_mode(s, mode);
}

void set_training(SegModel& m, bool training) { set_bn_mode(m, training ? BnMode::training : BnMode::inference); }

ModelOutput forward(const SegModel& m, const Tensor& x, ModelCache* cache, bool record_attention) {
    const auto& cfg = m.config;
    require_rank(x, 4, "forward input");
    if (x.dim(1) != cfg.in_channels || x.dim(2) != cfg.height || x.dim(3) != cfg.width)
        throw ShapeError("forward: input " + shape_str(x.shape()) + " does not match configured [n x " +
                         std::to_string(cfg.in_channels) + "x" + std::to_string(cfg.height) + "x" +
                         std::to_string(cfg.width) + "]");
    if (cache) {
        *cache = ModelCache{};
        cache->blocks.resize(m.blocks.size());
        cache->decoder.resize(m.decoder.size());
    }
    ModelOutput out;
    Tensor u = pooling_forward(x, m.pooling, cache ? &cache->pooling : nullptr);
    if (!u.all_finite()) throw NumericError("forward: non-finite activations after pooling");
    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
        const auto& block = m.blocks[l];
        CsaOutput attn;
        try {
            attn = csa_forward(u, block.csa, cache ? &cache->blocks[l].csa : nullptr, record_attention);
        } catch (const NumericError& e) {
            throw NumericError("forward: layer " + std::to_string(l) + ": " + e.what());
        }
        u += attn.y;
        u += cffn_forward(u, block.cffn, cache ? &cache->blocks[l].cffn : nullptr);
        if (!u.all_finite())
            throw NumericError("forward: non-finite activations after layer " + std::to_string(l));
        if (record_attention) out.attention.push_back(std::move(attn.attention));
    }
    for (std::size_t k = 0; k < m.decoder.size(); ++k)
        u = cbr_forward(upsample_nearest2x(u), m.decoder[k], cache ? &cache->decoder[k] : nullptr);
    if (cache) cache->head_input = u;
    out.logits = conv2d(u, m.head);
    if (!out.logits.all_finite()) throw NumericError("forward: non-finite logits");
    return out;
}

void update_running_stats(SegModel& m, const ModelCache& cache) {
    update_running_stats(m.pooling, cache.pooling);
    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
        update_running_stats(m.blocks[l].csa, cache.blocks[l].csa);
        update_running_stats(m.blocks[l].cffn, cache.blocks[l].cffn);
    }
    for (std::size_t k = 0; k < m.decoder.size(); ++k) update_running_stats(m.decoder[k], cache.decoder[k]);
}

Tensor backward(const SegModel& m, const ModelCache& cache, const Tensor& grad_logits, SegModel& grad) {
    auto head = conv2d_backward(cache.head_input, m.head, grad_logits);
    grad.head.weight += head.weight;
    grad.head.bias += head.bias;
    Tensor g = std::move(head.x);
    for (std::size_t k = m.decoder.size(); k-- > 0;) {
        g = cbr_backward(m.decoder[k], cache.decoder[k], g, grad.decoder[k]);
        g = upsample_nearest2x_backward(g);
    }
    for (std::size_t l = m.blocks.size(); l-- > 0;) {
        // u2 = u1 + cffn(u1); u1 = u0 + csa(u0)
        g += cffn_backward(m.blocks[l].cffn, cache.blocks[l].cffn, g, grad.blocks[l].cffn);
        g += csa_backward(m.blocks[l].csa, cache.blocks[l].csa, g, grad.blocks[l].csa);
    }
    return pooling_backward(m.pooling, cache.pooling, g, grad.pooling);
}

LossResult loss(const Tensor& logits, const std::vector<int>& labels) {
    require_rank(logits, 4, "loss logits");
    const std::size_t n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    const std::size_t plane = h * w, pixels = n * plane;
    if (labels.size() != pixels)
        throw ShapeError("loss: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(logits.shape()));
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw std::out_of_range("loss: target class " + std::to_string(y) + " outside [0, " +
                                    std::to_string(k - 1) + "]");

    Tensor prob = Tensor::zeros_like(logits);
    double ce = 0.0;
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t q = 0; q < plane; ++q) {
            double mx = logits.at(b, 0, 0, q);
            for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, logits.at(b, c, 0, q));
            double z = 0.0;
            for (std::size_t c = 0; c < k; ++c) z += std::exp(logits.at(b, c, 0, q) - mx);
            const double log_z = std::log(z);
            for (std::size_t c = 0; c < k; ++c) prob.at(b, c, 0, q) = std::exp(logits.at(b, c, 0, q) - mx - log_z);
            const auto y = static_cast<std::size_t>(labels[b * plane + q]);
            ce -= logits.at(b, y, 0, q) - mx - log_z;
        }
    ce /= static_cast<double>(pixels);

    std::vector<double> inter(k, 0.0), total(k, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t q = 0; q < plane; ++q) {
            const auto y = static_cast<std::size_t>(labels[b * plane + q]);
            for (std::size_t c = 0; c < k; ++c) total[c] += prob.at(b, c, 0, q);
            inter[y] += prob.at(b, y, 0, q);
            total[y] += 1.0;
        }
    double dice_sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) dice_sum += (2.0 * inter[c] + kDiceSmooth) / (total[c] + kDiceSmooth);
    const double kd = static_cast<double>(k);
    const double dice_loss = 1.0 - dice_sum / kd;

    LossResult r;
    r.cross_entropy = ce;
    r.dice_loss = dice_loss;
    r.value = 0.5 * (ce + dice_loss);
    r.grad_logits = Tensor::zeros_like(logits);
    std::vector<double> g_prob(k);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t q = 0; q < plane; ++q) {
            const auto y = static_cast<std::size_t>(labels[b * plane + q]);
            double dot = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                const double denom = total[c] + kDiceSmooth;
                const double onehot = c == y ? 1.0 : 0.0;
                const double d_dice = (2.0 * onehot * denom - (2.0 * inter[c] + kDiceSmooth)) / (denom * denom);
                g_prob[c] = -0.5 * d_dice / kd;
                dot += g_prob[c] * prob.at(b, c, 0, q);
            }
            for (std::size_t c = 0; c < k; ++c) {
                const double p = prob.at(b, c, 0, q);
                const double onehot = c == y ? 1.0 : 0.0;
                r.grad_logits.at(b, c, 0, q) = 0.5 * (p - onehot) / static_cast<double>(pixels) + p * (g_prob[c] - dot);
            }
        }
    return r;
}

std::vector<int> predict(const Tensor& logits) {
    require_rank(logits, 4, "predict logits");
    const std::size_t n = logits.dim(0), k = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
    std::vector<int> out(n * plane);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t q = 0; q < plane; ++q) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c)
                if (logits.at(b, c, 0, q) > logits.at(b, best, 0, q)) best = c;
            out[b * plane + q] = static_cast<int>(best);
        }
    return out;
}

}  // namespace convformer
