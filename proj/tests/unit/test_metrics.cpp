#include <doctest.h>

#include <cmath>

#include "convformer/metrics.hpp"
#include "convformer/random.hpp"

using namespace convformer;

namespace {

BinaryMask points(std::size_t h, std::size_t w, std::initializer_list<std::pair<std::size_t, std::size_t>> pts) {
    BinaryMask m(h, w);
    for (auto [i, j] : pts) m.set(i, j);
    return m;
}

BinaryMask random_mask(std::size_t h, std::size_t w, double p, Rng& rng) {
    BinaryMask m(h, w);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
            if (rng.uniform() < p) m.set(i, j);
    if (m.empty()) m.set(0, 0);
    return m;
}

double naive_hausdorff(const BinaryMask& a, const BinaryMask& b) {
    auto directed = [](const BinaryMask& x, const BinaryMask& y) {
        double worst = 0.0;
        for (std::size_t i = 0; i < x.height(); ++i)
            for (std::size_t j = 0; j < x.width(); ++j) {
                if (!x(i, j)) continue;
                double best = INFINITY;
                for (std::size_t m = 0; m < y.height(); ++m)
                    for (std::size_t n = 0; n < y.width(); ++n)
                        if (y(m, n)) best = std::min(best, std::hypot(double(i) - double(m), double(j) - double(n)));
                worst = std::max(worst, best);
            }
        return worst;
    };
    return std::max(directed(a, b), directed(b, a));
}

AttentionField field_of(std::size_t h, std::size_t w, std::vector<double> values) {
    AttentionField f;
    f.height = h;
    f.width = w;
    Tensor t({h, w, h, w}, std::move(values));
    f.scores = {t};
    f.mask = {Tensor({h, w, h, w}, 1.0)};
    f.field = {t};
    return f;
}

AttentionField one_hot(std::size_t h, std::size_t w, std::size_t offset) {
    const std::size_t n = h * w;
    std::vector<double> v(n * n, 0.0);
    for (std::size_t p = 0; p < n; ++p) v[p * n + (p + offset) % n] = 1.0;
    return field_of(h, w, v);
}

}  // namespace

TEST_CASE("dice examples") {
    const auto a = points(4, 4, {{0, 0}, {1, 1}, {2, 2}});
    CHECK(dice(a, a) == 1.0);
    CHECK(dice(a, points(4, 4, {{3, 3}, {0, 1}})) == 0.0);
    const auto p = points(4, 4, {{0, 0}, {0, 1}, {0, 2}, {0, 3}});
    const auto g = points(4, 4, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
    CHECK(dice(p, g) == 0.5);
    CHECK(dice(g, p) == 0.5);
    CHECK(dice(BinaryMask(3, 3), BinaryMask(3, 3)) == 1.0);
    CHECK_THROWS_AS(dice(BinaryMask(3, 3), BinaryMask(3, 4)), ShapeError);
    CHECK_THROWS_AS(BinaryMask(0, 3), ShapeError);
}

TEST_CASE("dice grows with overlap at fixed sizes") {
    const auto g = points(1, 8, {{0, 0}, {0, 1}, {0, 2}, {0, 3}});
    double prev = -1.0;
    for (std::size_t shift = 4; shift-- > 0;) {
        BinaryMask p(1, 8);
        for (std::size_t j = shift; j < shift + 4; ++j) p.set(0, j);
        const double d = dice(p, g);
        CHECK(d > prev);
        prev = d;
    }
}

TEST_CASE("hausdorff examples") {
    const auto a = points(6, 6, {{1, 1}, {2, 4}});
    CHECK(hausdorff(a, a) == 0.0);
    CHECK(hausdorff(points(6, 6, {{0, 0}}), points(6, 6, {{3, 4}})) == 5.0);
    CHECK(hausdorff(points(2, 2, {{0, 0}, {0, 1}}), points(2, 2, {{0, 0}})) == 1.0);
    CHECK_FALSE(hausdorff(BinaryMask(3, 3), a.height() == 3 ? a : BinaryMask(3, 3)).has_value());
    CHECK_FALSE(hausdorff(points(3, 3, {{1, 1}}), BinaryMask(3, 3)).has_value());
    CHECK_FALSE(hausdorff(BinaryMask(3, 3), BinaryMask(3, 3)).has_value());
}

TEST_CASE("hausdorff equals the brute-force definition, is symmetric and obeys the triangle inequality") {
    Rng rng(11);
    for (int t = 0; t < 40; ++t) {
        const std::size_t h = 3 + rng.below(10), w = 3 + rng.below(10);
        const double pa = rng.uniform(0.02, 0.6), pb = rng.uniform(0.02, 0.6), pc = rng.uniform(0.02, 0.6);
        const auto a = random_mask(h, w, pa, rng), b = random_mask(h, w, pb, rng), c = random_mask(h, w, pc, rng);
        const double ab = *hausdorff(a, b), bc = *hausdorff(b, c), ac = *hausdorff(a, c);
        CHECK(ab == naive_hausdorff(a, b));
        CHECK(ab == *hausdorff(b, a));
        CHECK(ac <= ab + bc + 1e-12);
    }
}

TEST_CASE("attention similarity") {
    Rng rng(12);
    std::vector<double> va(36 * 36), vb(36 * 36);
    for (auto& v : va) v = rng.normal();
    for (auto& v : vb) v = rng.normal();
    const auto a = field_of(6, 6, va), b = field_of(6, 6, vb);
    CHECK(attention_similarity(a, a) == 1.0);
    CHECK(attention_similarity(one_hot(3, 4, 0), one_hot(3, 4, 5)) == 0.0);

    double total = 0.0;
    for (std::size_t p = 0; p < 36; ++p) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t k = 0; k < 36; ++k) {
            dot += va[p * 36 + k] * vb[p * 36 + k];
            na += va[p * 36 + k] * va[p * 36 + k];
            nb += vb[p * 36 + k] * vb[p * 36 + k];
        }
        total += dot / std::sqrt(na) / std::sqrt(nb);
    }
    CHECK(std::abs(attention_similarity(a, b) - total / 36.0) <= 1e-12);
    CHECK(attention_similarity(a, b) == attention_similarity(b, a));
    CHECK_THROWS_AS(attention_similarity(a, one_hot(3, 4, 0)), ShapeError);
}

TEST_CASE("receptive field examples") {
    CHECK(receptive_field_size(gaussian_mask(0.999, 1.0, 4, 4, 2, 16, 16), 0.5).mean == 16.0);
    const auto narrow = receptive_field_size(gaussian_mask(1e-4, 1.0, 8, 8, 3, 64, 64), 1e-6);
    for (auto c : narrow.per_pixel) CHECK(c == 1);
    const auto all = receptive_field_size(gaussian_mask(0.1, 1.0, 8, 8, 3, 64, 64), 1e-300);
    for (auto c : all.per_pixel) CHECK(c == 64);
    CHECK_THROWS_AS(receptive_field_size(Tensor({4, 4, 4, 3}), 0.5), ShapeError);
}

TEST_CASE("receptive field is non-decreasing in theta and alpha") {
    const double grid[] = {0.01, 0.05, 0.1, 0.2, 0.5, 0.9};
    for (double tau : {0.01, 0.1, 0.5, 0.9}) {
        double prev = 0.0;
        for (double theta : grid) {
            const double m = receptive_field_size(gaussian_mask(theta, 0.6, 16, 16, 2, 64, 64), tau).mean;
            CHECK(m >= prev);
            prev = m;
        }
        prev = 0.0;
        for (double alpha : {0.2, 0.4, 0.6, 0.8, 1.0}) {
            const double m = receptive_field_size(gaussian_mask(0.2, alpha, 16, 16, 2, 64, 64), tau).mean;
            CHECK(m >= prev);
            prev = m;
        }
    }
}

TEST_CASE("collapse report") {
    const std::size_t n = 12;
    const auto constant = field_of(3, 4, std::vector<double>(n * n, 0.37));
    const auto same = collapse_report({constant, constant, constant});
    CHECK(same.collapse_score == 1.0);
    CHECK(same.layer_pair_similarity == std::vector<double>{1.0, 1.0});
    CHECK(same.layer_diversity == std::vector<double>{0.0, 0.0, 0.0});

    const auto apart = collapse_report({one_hot(3, 4, 0), one_hot(3, 4, 1), one_hot(3, 4, 2)});
    CHECK(apart.collapse_score == 0.0);
    CHECK(apart.layer_diversity[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

    CHECK(collapse_report({constant}).collapse_score == 0.0);
    CHECK(collapse_report({constant, constant}, false).layer_diversity.empty());
}
