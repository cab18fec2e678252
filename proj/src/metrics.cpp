#include "convformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace convformer {

BinaryMask::BinaryMask(std::size_t height, std::size_t width)
    : height_(height), width_(width), bits_(height * width, 0) {
    if (height == 0 || width == 0) throw ShapeError("BinaryMask: extents must be positive");
}

BinaryMask BinaryMask::from_labels(const std::vector<int>& labels, std::size_t height, std::size_t width, int cls) {
    if (labels.size() != height * width)
        throw ShapeError("BinaryMask::from_labels: expected " + std::to_string(height * width) + " labels, got " +
                         std::to_string(labels.size()));
    BinaryMask m(height, width);
    for (std::size_t k = 0; k < labels.size(); ++k) m.bits_[k] = labels[k] == cls ? 1 : 0;
    return m;
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

namespace {

void require_same_extent(const BinaryMask& a, const BinaryMask& b, const char* what) {
    if (a.height() != b.height() || a.width() != b.width())
        throw ShapeError(std::string(what) + ": mask extents differ (" + std::to_string(a.height()) + "x" +
                         std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                         std::to_string(b.width()) + ")");
}

struct Pixel {
    long i, j;
};

// Pixels of `m` with a 4-neighbour inside the image that is not in `m`.
// The nearest member of `m` to any outside pixel is always one of these:
// stepping from a member towards the outside pixel strictly shortens the
// distance, so a nearest member cannot have all such neighbours inside.
std::vector<Pixel> inner_boundary(const BinaryMask& m) {
    std::vector<Pixel> out;
    const long h = static_cast<long>(m.height()), w = static_cast<long>(m.width());
    auto outside = [&](long i, long j) { return i >= 0 && i < h && j >= 0 && j < w && !m(i, j); };
    for (long i = 0; i < h; ++i)
        for (long j = 0; j < w; ++j)
            if (m(i, j) && (outside(i - 1, j) || outside(i + 1, j) || outside(i, j - 1) || outside(i, j + 1)))
                out.push_back({i, j});
    return out;
}

// max over p in a of dist(p, b), b non-empty.
double directed_hausdorff(const BinaryMask& a, const BinaryMask& b) {
    const auto edge = inner_boundary(b);
    long worst = 0;
    for (std::size_t i = 0; i < a.height(); ++i)
        for (std::size_t j = 0; j < a.width(); ++j) {
            if (!a(i, j) || b(i, j)) continue;
            long best = std::numeric_limits<long>::max();
            for (const auto& e : edge) {
                const long di = static_cast<long>(i) - e.i, dj = static_cast<long>(j) - e.j;
                best = std::min(best, di * di + dj * dj);
                if (best <= worst) break;
            }
            worst = std::max(worst, best);
        }
    return std::sqrt(static_cast<double>(worst));
}

}  // namespace

double dice(const BinaryMask& pred, const BinaryMask& gt) {
    require_same_extent(pred, gt, "dice");
    std::size_t inter = 0, np = 0, ng = 0;
    for (std::size_t i = 0; i < pred.height(); ++i)
        for (std::size_t j = 0; j < pred.width(); ++j) {
            const bool p = pred(i, j), g = gt(i, j);
            inter += p && g;
            np += p;
            ng += g;
        }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

std::optional<double> hausdorff(const BinaryMask& pred, const BinaryMask& gt) {
    require_same_extent(pred, gt, "hausdorff");
    if (pred.empty() || gt.empty()) return std::nullopt;
    return std::max(directed_hausdorff(pred, gt), directed_hausdorff(gt, pred));
}

namespace {

// Clamped cosine of two vectors; two zero vectors count as identical.
double cosine(const double* a, const double* b, std::size_t n) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    if (na == 0.0 || nb == 0.0) return na == nb ? 1.0 : 0.0;
    return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

}  // namespace

double attention_similarity(const AttentionField& a, const AttentionField& b) {
    if (a.heads() != b.heads() || a.height != b.height || a.width != b.width)
        throw ShapeError("attention_similarity: fields differ (" + std::to_string(a.heads()) + " heads " +
                         std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                         std::to_string(b.heads()) + " heads " + std::to_string(b.height) + "x" +
                         std::to_string(b.width) + ")");
    if (a.heads() == 0) throw ShapeError("attention_similarity: no heads");
    const std::size_t n = a.positions();
    double total = 0.0;
    for (std::size_t g = 0; g < a.heads(); ++g) {
        const double* pa = a.field[g].data().data();
        const double* pb = b.field[g].data().data();
        for (std::size_t p = 0; p < n; ++p) total += cosine(pa + p * n, pb + p * n, n);
    }
    return total / static_cast<double>(a.heads() * n);
}

ReceptiveField receptive_field_size(const Tensor& mask, double tau) {
    require_rank(mask, 4, "receptive_field_size");
    const auto& s = mask.shape();
    if (s[0] != s[2] || s[1] != s[3])
        throw ShapeError("receptive_field_size: expected [h, w, h, w], got " + shape_str(s));
    const std::size_t n = s[0] * s[1];
    ReceptiveField rf;
    rf.per_pixel.resize(n);
    const double* m = mask.data().data();
    for (std::size_t p = 0; p < n; ++p)
        rf.per_pixel[p] = static_cast<std::size_t>(std::count_if(m + p * n, m + (p + 1) * n, [&](double v) { return v >= tau; }));
    rf.mean = static_cast<double>(std::accumulate(rf.per_pixel.begin(), rf.per_pixel.end(), std::size_t{0})) /
              static_cast<double>(n);
    return rf;
}

CollapseReport collapse_report(const std::vector<AttentionField>& layers, bool with_diversity) {
    CollapseReport r;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l)
        r.layer_pair_similarity.push_back(attention_similarity(layers[l], layers[l + 1]));
    if (!r.layer_pair_similarity.empty()) {
        double s = 0.0;
        for (double v : r.layer_pair_similarity) s += std::max(0.0, v);
        r.collapse_score = s / static_cast<double>(r.layer_pair_similarity.size());
    }
    if (!with_diversity) return r;
    for (const auto& f : layers) {
        const std::size_t n = f.positions();
        double total = 0.0;
        std::size_t pairs = 0;
        for (std::size_t g = 0; g < f.heads(); ++g) {
            const double* a = f.field[g].data().data();
            for (std::size_t p = 0; p < n; ++p)
                for (std::size_t q = p + 1; q < n; ++q) {
                    double d2 = 0.0;
                    for (std::size_t k = 0; k < n; ++k) {
                        const double d = a[p * n + k] - a[q * n + k];
                        d2 += d * d;
                    }
                    total += std::sqrt(d2);
                    ++pairs;
                }
        }
        r.layer_diversity.push_back(pairs ? total / static_cast<double>(pairs) : 0.0);
    }
    return r;
}

}  // namespace convformer
