#include "convformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace convformer {

double expected_foreground_area(const SyntheticSpec& spec) {
    const double mean_radius = 0.5 * (spec.min_radius + spec.max_radius);
    const double shape_factor = spec.ellipse_fraction * std::numbers::pi + (1.0 - spec.ellipse_fraction) * 4.0;
    return spec.fg_probability * shape_factor * mean_radius * mean_radius;
}

void validate(const SyntheticSpec& spec, std::size_t height, std::size_t width) {
    auto fail = [](const std::string& what) { throw std::invalid_argument("synthetic spec: " + what); };
    if (height == 0 || width == 0) fail("image extents must be positive");
    if (spec.num_classes < 2) fail("num_classes must be at least 2");
    if (!(spec.fg_probability >= 0.0 && spec.fg_probability <= 1.0)) fail("fg_probability must lie in [0, 1]");
    if (!(spec.ellipse_fraction >= 0.0 && spec.ellipse_fraction <= 1.0))
        fail("ellipse_fraction must lie in [0, 1]");
    if (!(spec.min_radius > 0.0)) fail("min_radius must be positive (zero-area shapes)");
    if (!(spec.max_radius >= spec.min_radius)) fail("max_radius must be >= min_radius");
    if (2.0 * spec.max_radius > static_cast<double>(std::min(height, width)))
        fail("shapes of radius " + std::to_string(spec.max_radius) + " do not fit a " + std::to_string(height) +
             "x" + std::to_string(width) + " image");
    if (!(spec.noise_std >= 0.0)) fail("noise_std must be non-negative");
}

SyntheticSample make_sample(std::size_t height, std::size_t width, const SyntheticSpec& spec, std::uint64_t seed) {
    validate(spec, height, width);
    Rng rng(seed);
    SyntheticSample s{Tensor({1, height, width}), std::vector<int>(height * width, 0), seed};

    if (rng.uniform() < spec.fg_probability) {
        const bool ellipse = rng.uniform() < spec.ellipse_fraction;
        const double a = rng.uniform(spec.min_radius, spec.max_radius);  // along x
        const double b = rng.uniform(spec.min_radius, spec.max_radius);  // along y
        const double cx = rng.uniform(a, static_cast<double>(width) - a);
        const double cy = rng.uniform(b, static_cast<double>(height) - b);
        const int cls = 1 + static_cast<int>(rng.below(spec.num_classes - 1));
        for (std::size_t i = 0; i < height; ++i)
            for (std::size_t j = 0; j < width; ++j) {
                const double dx = (static_cast<double>(j) + 0.5 - cx) / a;
                const double dy = (static_cast<double>(i) + 0.5 - cy) / b;
                const bool inside = ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
                if (inside) s.mask[i * width + j] = cls;
            }
    }

    // Box-blurred white noise, rescaled so the interior keeps noise_std.
    std::vector<double> white(height * width);
    for (auto& v : white) v = rng.normal(0.0, 3.0 * spec.noise_std);
    const double step = spec.foreground_offset / static_cast<double>(spec.num_classes - 1);
    for (std::size_t i = 0; i < height; ++i)
        for (std::size_t j = 0; j < width; ++j) {
            double sum = 0.0;
            for (std::size_t ii = i ? i - 1 : 0; ii <= std::min(i + 1, height - 1); ++ii)
                for (std::size_t jj = j ? j - 1 : 0; jj <= std::min(j + 1, width - 1); ++jj) sum += white[ii * width + jj];
            const double v = spec.background + sum / 9.0 + step * s.mask[i * width + j];
            s.image[i * width + j] = std::clamp(v, 0.0, 1.0);
        }
    return s;
}

std::vector<SyntheticSample> gen_dataset(std::size_t n, std::size_t height, std::size_t width,
                                         const SyntheticSpec& spec, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("gen_dataset: n must be positive");
    validate(spec, height, width);
    Rng rng(seed);
    std::vector<SyntheticSample> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) out.push_back(make_sample(height, width, spec, rng.next_u64()));
    return out;
}

AugmentDraw draw_augmentation(const AugmentRanges& r, Rng& rng) {
    AugmentDraw d;
    d.rotation_deg = rng.uniform(-r.rotation_deg, r.rotation_deg);
    d.scale = rng.uniform(r.scale_min, r.scale_max);
    d.contrast = rng.uniform(r.contrast_min, r.contrast_max);
    d.gamma = rng.uniform(r.gamma_min, r.gamma_max);
    return d;
}

SyntheticSample apply_augmentation(const SyntheticSample& sample, const AugmentDraw& draw) {
    const auto& shape = sample.image.shape();
    if (shape.size() != 3 || shape[0] != 1 || sample.mask.size() != shape[1] * shape[2])
        throw ShapeError("apply_augmentation: expected a [1, H, W] image with H * W mask entries, got " +
                         shape_str(shape));
    const std::size_t h = shape[1], w = shape[2];
    SyntheticSample out = sample;

    if (draw.rotation_deg != 0.0 || draw.scale != 1.0) {
        const double rad = draw.rotation_deg * std::numbers::pi / 180.0;
        const double c = std::cos(rad) / draw.scale, s = std::sin(rad) / draw.scale;
        const double cy = 0.5 * static_cast<double>(h), cx = 0.5 * static_cast<double>(w);
        const long hi = static_cast<long>(h) - 1, wi = static_cast<long>(w) - 1;
        auto pixel = [&](long i, long j) { return sample.image[std::clamp(i, 0L, hi) * w + std::clamp(j, 0L, wi)]; };
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const double dy = static_cast<double>(i) + 0.5 - cy, dx = static_cast<double>(j) + 0.5 - cx;
                // Source position in index coordinates (pixel centres at integers).
                const double fj = c * dx + s * dy + cx - 0.5;
                const double fi = -s * dx + c * dy + cy - 0.5;

                const long ni = std::lround(fi), nj = std::lround(fj);
                out.mask[i * w + j] = ni >= 0 && ni <= hi && nj >= 0 && nj <= wi ? sample.mask[ni * w + nj] : 0;

                const long i0 = static_cast<long>(std::floor(fi)), j0 = static_cast<long>(std::floor(fj));
                const double ti = fi - static_cast<double>(i0), tj = fj - static_cast<double>(j0);
                out.image[i * w + j] = (1.0 - ti) * ((1.0 - tj) * pixel(i0, j0) + tj * pixel(i0, j0 + 1)) +
                                       ti * ((1.0 - tj) * pixel(i0 + 1, j0) + tj * pixel(i0 + 1, j0 + 1));
            }
    }

    auto& img = out.image.values();
    if (draw.contrast != 1.0) {
        double mean = 0.0;
        for (double v : img) mean += v;
        mean /= static_cast<double>(img.size());
        for (auto& v : img) v = draw.contrast * (v - mean) + mean;
    }
    for (auto& v : img) {
        v = std::clamp(v, 0.0, 1.0);
        if (draw.gamma != 1.0) v = std::pow(v, draw.gamma);
    }
    return out;
}

SyntheticSample augment(const SyntheticSample& sample, const AugmentRanges& ranges, Rng& rng) {
    return apply_augmentation(sample, draw_augmentation(ranges, rng));
}

}  // namespace convformer
