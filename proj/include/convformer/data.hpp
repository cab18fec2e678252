#pragma once

// Synthetic blob segmentation data and the four training augmentations.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "convformer/random.hpp"
#include "convformer/tensor.hpp"

namespace convformer {

// One axis-aligned ellipse or rectangle per foreground sample, placed fully
// inside the image, brightened by a class-dependent offset over smoothed
// Gaussian noise. Radii are half-axes in pixels.
struct SyntheticSpec {
    std::size_t num_classes = 2;
    double fg_probability = 1.0;
    double ellipse_fraction = 0.5;
    double min_radius = 10.0;
    double max_radius = 20.0;
    double background = 0.25;
    double foreground_offset = 0.45;  // class k adds offset * k / (num_classes - 1)
    double noise_std = 0.08;

    friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

struct SyntheticSample {
    Tensor image;            // [1, H, W], values in [0, 1]
    std::vector<int> mask;   // H * W row-major class indices
    std::uint64_t seed = 0;  // regenerates this sample alone via make_sample
};

// E[foreground pixels per sample] for a spec, from the closed-form shape areas.
double expected_foreground_area(const SyntheticSpec& spec);

// Throws std::invalid_argument for specs that cannot place a positive-area
// shape inside an H x W image.
void validate(const SyntheticSpec& spec, std::size_t height, std::size_t width);

SyntheticSample make_sample(std::size_t height, std::size_t width, const SyntheticSpec& spec, std::uint64_t seed);
std::vector<SyntheticSample> gen_dataset(std::size_t n, std::size_t height, std::size_t width,
                                         const SyntheticSpec& spec, std::uint64_t seed);

struct AugmentRanges {
    double rotation_deg = 25.0;  // uniform in [-r, r]
    double scale_min = 0.9, scale_max = 1.1;
    double contrast_min = 0.7, contrast_max = 1.3;
    double gamma_min = 0.7, gamma_max = 1.5;

    friend bool operator==(const AugmentRanges&, const AugmentRanges&) = default;
};

struct AugmentDraw {
    double rotation_deg = 0.0;
    double scale = 1.0;
    double contrast = 1.0;
    double gamma = 1.0;
};

AugmentDraw draw_augmentation(const AugmentRanges& ranges, Rng& rng);

// Rotation and isotropic scaling about the image centre (bilinear image,
// nearest-neighbour mask, out-of-frame pixels become edge-clamped image and
// background mask), then contrast about the image mean, then gamma.
SyntheticSample apply_augmentation(const SyntheticSample& sample, const AugmentDraw& draw);

SyntheticSample augment(const SyntheticSample& sample, const AugmentRanges& ranges, Rng& rng);

}  // namespace convformer
