#include <cmath>

#include "convformer/gradcheck.hpp"
#include "convformer/model.hpp"

namespace convformer {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = rng.normal(0.0, scale);
    return t;
}

// Extended accumulation keeps the objective's own rounding below the
// finite-difference resolution.
double weighted_sum(const Tensor& y, const Tensor& w) {
    long double s = 0.0L;
    for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<long double>(y[i]) * w[i];
    return static_cast<double>(s);
}

// FNV-1a over the branch decisions of a forward pass.
class Fingerprint {
public:
    void add(std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            hash_ ^= (v >> (8 * b)) & 0xFF;
            hash_ *= 0x100000001B3ULL;
        }
    }
    void signs(const Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i) add(t[i] > 0.0 ? 1 : 0);
    }
    void winners(const std::vector<std::size_t>& idx) {
        for (auto i : idx) add(i);
    }
    void add(const CbrCache& c) { signs(c.pre_relu); }
    void add(const PoolingCache& c) {
        add(c.stem);
        for (const auto& a : c.argmax) winners(a);
        for (const auto& s : c.stages) add(s);
    }
    void add(const CffnCache& c) {
        add(c.stage1);
        add(c.stage2);
    }
    void add(const ModelCache& c) {
        add(c.pooling);
        for (const auto& b : c.blocks) {
            add(b.csa.out_proj);
            add(b.cffn);
        }
        for (const auto& d : c.decoder) add(d);
    }
    std::uint64_t value() const { return hash_; }

private:
    std::uint64_t hash_ = 0xCBF29CE484222325ULL;
};

// Moves batch-norm affine parameters off their (1, 0) initialization so no
// gradient is structurally zero through ReLU homogeneity.
template <class P>
void randomize_affine(P& params, Rng& rng) {
    visit_params(params, std::string{}, [&](const std::string& name, Tensor& t, ParamKind) {
        if (name.ends_with(".gamma"))
            for (auto& v : t.values()) v = 1.0 + 0.3 * rng.normal();
        else if (name.ends_with(".beta"))
            for (auto& v : t.values()) v = 0.2 * rng.normal();
    });
}

template <class P>
void add_trainable(GradProblem& prob, P& params, const std::string& prefix) {
    visit_params(params, prefix, [&](const std::string& name, Tensor& t, ParamKind kind) {
        if (kind == ParamKind::trainable) prob.wrt.emplace_back(name, &t);
    });
}

template <class P>
void append_trainable(std::vector<Tensor>& out, const P& grads) {
    visit_params(grads, std::string{}, [&](const std::string&, const Tensor& t, ParamKind kind) {
        if (kind == ParamKind::trainable) out.push_back(t);
    });
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

GradReport check_conv(Rng& rng, std::size_t k) {
    const std::size_t ci = pick(rng, 1, 4), co = pick(rng, 1, 4), h = pick(rng, 4, 8), w = pick(rng, 4, 8);
    Tensor x = random_tensor({2, ci, h, w}, rng);
    ConvParams p = make_conv(ci, co, k, true, rng);
    for (auto& v : p.bias.values()) v = rng.normal();
    const Tensor cot = random_tensor({2, co, h, w}, rng);
    GradProblem prob;
    prob.wrt = {{"x", &x}, {"weight", &p.weight}, {"bias", &p.bias}};
    prob.objective = [&] { return weighted_sum(conv2d(x, p), cot); };
    prob.analytic = [&] {
        auto g = conv2d_backward(x, p, cot);
        return std::vector<Tensor>{g.x, g.weight, g.bias};
    };
    return check(k == 3 ? "conv2d_3x3" : "conv2d_1x1", prob, 1e-5);
}

GradReport check_maxpool(Rng& rng) {
    const std::size_t c = pick(rng, 1, 4), h = 2 * pick(rng, 2, 4), w = 2 * pick(rng, 2, 4);
    Tensor x = random_tensor({2, c, h, w}, rng);
    const Tensor cot = random_tensor({2, c, h / 2, w / 2}, rng);
    GradProblem prob;
    prob.wrt = {{"x", &x}};
    prob.objective = [&] { return weighted_sum(maxpool2x2(x).y, cot); };
    prob.analytic = [&] {
        auto r = maxpool2x2(x);
        return std::vector<Tensor>{maxpool2x2_backward(x.shape(), r.argmax, cot)};
    };
    prob.pattern = [&] {
        Fingerprint fp;
        fp.winners(maxpool2x2(x).argmax);
        return fp.value();
    };
    return check("maxpool2x2", prob, 1e-5);
}

GradReport check_batchnorm(Rng& rng) {
    const std::size_t c = pick(rng, 1, 4), h = pick(rng, 4, 8), w = pick(rng, 4, 8);
    Tensor x = random_tensor({2, c, h, w}, rng, 2.0);
    BatchNormState s = make_batchnorm(c);
    for (auto& v : s.gamma.values()) v = 1.0 + 0.5 * rng.normal();
    for (auto& v : s.beta.values()) v = rng.normal();
    const Tensor cot = random_tensor(x.shape(), rng);
    GradProblem prob;
    prob.wrt = {{"x", &x}, {"gamma", &s.gamma}, {"beta", &s.beta}};
    prob.objective = [&] { return weighted_sum(batchnorm_forward(x, s).y, cot); };
    prob.analytic = [&] {
        auto r = batchnorm_forward(x, s);
        auto g = batchnorm_backward(s, r.cache, cot);
        return std::vector<Tensor>{g.x, g.gamma, g.beta};
    };
    return check("batchnorm", prob, 1e-5);
}

GradReport check_relu(Rng& rng) {
    const std::size_t c = pick(rng, 1, 4), h = pick(rng, 4, 8), w = pick(rng, 4, 8);
    Tensor x = random_tensor({2, c, h, w}, rng);
    const Tensor cot = random_tensor(x.shape(), rng);
    GradProblem prob;
    prob.wrt = {{"x", &x}};
    prob.objective = [&] { return weighted_sum(relu(x), cot); };
    prob.analytic = [&] { return std::vector<Tensor>{relu_backward(x, cot)}; };
    prob.pattern = [&] {
        Fingerprint fp;
        fp.signs(x);
        return fp.value();
    };
    return check("relu", prob, 1e-5);
}

GradReport check_pooling(Rng& rng) {
    const std::size_t c = pick(rng, 1, 3), cm = pick(rng, 2, 4);
    Tensor x = random_tensor({2, c, 8, 8}, rng);
    PoolingParams p = make_pooling(c, cm, 2, rng);
    randomize_affine(p, rng);
    const Tensor cot = random_tensor({2, cm, 2, 2}, rng);
    GradProblem prob;
    prob.wrt = {{"x", &x}};
    add_trainable(prob, p, "pooling");
    prob.objective = [&] { return weighted_sum(pooling_forward(x, p), cot); };
    prob.analytic = [&] {
        auto g = pooling_backward(x, p, cot);
        std::vector<Tensor> out{g.x};
        append_trainable(out, g.params);
        return out;
    };
    prob.pattern = [&] {
        PoolingCache cache;
        pooling_forward(x, p, &cache);
        Fingerprint fp;
        fp.add(cache);
        return fp.value();
    };
    return check("pooling_forward", prob, 1e-5);
}

GradReport check_csa(Rng& rng) {
    const std::size_t cm = 4, cq = 4, heads = 2;
    const std::size_t h = pick(rng, 4, 6), w = pick(rng, 4, 6);
    Tensor x = random_tensor({2, cm, h, w}, rng);
    CsaParams p = make_csa(cm, cq, heads, 0.6, rng);
    for (auto& v : p.theta_raw.values()) v = logit(rng.uniform(0.1, 0.5));
    randomize_affine(p, rng);
    const Tensor cot = random_tensor({2, cm, h, w}, rng);
    GradProblem prob;
    prob.wrt = {{"x", &x}};
    add_trainable(prob, p, "csa");
    prob.objective = [&] { return weighted_sum(csa_forward(x, p, nullptr, false).y, cot); };
    prob.analytic = [&] {
        auto g = csa_backward(x, p, cot);
        std::vector<Tensor> out{g.x};
        append_trainable(out, g.params);
        return out;
    };
    prob.pattern = [&] {
        CsaCache cache;
        csa_forward(x, p, &cache, false);
        Fingerprint fp;
        fp.add(cache.out_proj);
        return fp.value();
    };
    return check("csa_forward", prob, 1e-5);
}

GradReport check_cffn(Rng& rng) {
    const std::size_t cm = pick(rng, 2, 4), ch = 4 * cm, h = pick(rng, 4, 8), w = pick(rng, 4, 8);
    Tensor x = random_tensor({2, cm, h, w}, rng);
    CffnParams p = make_cffn(cm, ch, rng);
    randomize_affine(p, rng);
    const Tensor cot = random_tensor(x.shape(), rng);
    GradProblem prob;
    prob.wrt = {{"x", &x}};
    add_trainable(prob, p, "cffn");
    prob.objective = [&] { return weighted_sum(cffn_forward(x, p), cot); };
    prob.analytic = [&] {
        auto g = cffn_backward(x, p, cot);
        std::vector<Tensor> out{g.x};
        append_trainable(out, g.params);
        return out;
    };
    prob.pattern = [&] {
        CffnCache cache;
        cffn_forward(x, p, &cache);
        Fingerprint fp;
        fp.add(cache);
        return fp.value();
    };
    return check("cffn_forward", prob, 1e-5);
}

GradReport check_model(Rng& rng) {
    ConvFormerConfig cfg;
    cfg.in_channels = 1;
    cfg.embed_channels = 4;
    cfg.query_channels = 4;
    cfg.hidden_channels = 8;
    cfg.patch_size = 2;
    cfg.layers = 2;
    cfg.height = 8;
    cfg.width = 8;
    cfg.alpha = 0.8;
    SegModel m = build(cfg, rng.next_u64());
    randomize_affine(m, rng);
    for (auto& b : m.blocks)
        for (auto& v : b.csa.theta_raw.values()) v = logit(rng.uniform(0.15, 0.5));
    Tensor x = random_tensor({2, 1, 8, 8}, rng);
    std::vector<int> labels(2 * 64);
    for (auto& y : labels) y = static_cast<int>(rng.below(2));
    GradProblem prob;
    prob.wrt = {{"x", &x}};
    add_trainable(prob, m, "model");
    prob.objective = [&] { return loss(forward(m, x, nullptr, false).logits, labels).value; };
    prob.analytic = [&] {
        ModelCache cache;
        auto out = forward(m, x, &cache, false);
        auto l = loss(out.logits, labels);
        SegModel grad = zeros_like_params(m);
        std::vector<Tensor> g{backward(m, cache, l.grad_logits, grad)};
        append_trainable(g, grad);
        return g;
    };
    prob.pattern = [&] {
        ModelCache cache;
        forward(m, x, &cache, false);
        Fingerprint fp;
        fp.add(cache);
        return fp.value();
    };
    return check("model_forward_loss", prob, 1e-4);
}

}  // namespace

std::vector<GradReport> run_gradcheck_suite(std::uint64_t seed) {
    Rng root(seed);
    std::vector<GradReport> reports;
    {
        Rng r = root.fork();
        reports.push_back(check_conv(r, 3));
    }
    {
        Rng r = root.fork();
        reports.push_back(check_conv(r, 1));
    }
    {
        Rng r = root.fork();
        reports.push_back(check_maxpool(r));
    }
    {
        Rng r = root.fork();
        reports.push_back(check_batchnorm(r));
    }
    {
        Rng r = root.fork();
        reports.push_back(check_relu(r));
    }
    {
        Rng r = root.fork();
        reports.push_back(check_pooling(r));
    }
    {
        Rng r = root.fork();
        reports.push_back(check_csa(r));
    }
    {
        Rng r = root.fork();
        reports.push_back(check_cffn(r));
    }
    {
        Rng r = root.fork();
        reports.push_back(check_model(r));
    }
    return reports;
}

}  // namespace convformer
