#pragma once

// Segmentation metrics (Dice, Hausdorff) and attention-collapse diagnostics.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "convformer/csa.hpp"

namespace convformer {

class BinaryMask {
public:
    BinaryMask(std::size_t height, std::size_t width);
    // Pixels of `labels` (row-major height x width) equal to `cls`.
    static BinaryMask from_labels(const std::vector<int>& labels, std::size_t height, std::size_t width, int cls);

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    bool operator()(std::size_t i, std::size_t j) const { return bits_[i * width_ + j] != 0; }
    void set(std::size_t i, std::size_t j, bool v = true) { bits_[i * width_ + j] = v ? 1 : 0; }
    std::size_t count() const;
    bool empty() const { return count() == 0; }

private:
    std::size_t height_, width_;
    std::vector<std::uint8_t> bits_;
};

// 2|P & G| / (|P| + |G|); 1 when both masks are empty.
double dice(const BinaryMask& pred, const BinaryMask& gt);

// Symmetric Hausdorff distance in pixels between the two point sets.
// std::nullopt when either mask is empty (the distance is undefined there).
std::optional<double> hausdorff(const BinaryMask& pred, const BinaryMask& gt);

// Mean over heads and query pixels of the cosine similarity between the
// flattened per-pixel attention maps A[i,j,:,:] of a and b.
double attention_similarity(const AttentionField& a, const AttentionField& b);

struct ReceptiveField {
    std::vector<std::size_t> per_pixel;  // row-major over query pixels
    double mean = 0.0;
};

// Number of key positions with M[i,j,m,n] >= tau, for each query pixel.
ReceptiveField receptive_field_size(const Tensor& mask, double tau);

struct CollapseReport {
    std::vector<double> layer_pair_similarity;  // attention_similarity(layer l, layer l+1)
    double collapse_score = 0.0;                // mean of max(0, pair similarity); 0 with < 2 layers
    std::vector<double> layer_diversity;        // mean pairwise L2 distance between per-pixel maps
};

// `layers` holds one sample's attention fields in layer order. Diversity is
// O(positions^3) per head; pass with_diversity = false on large grids.
CollapseReport collapse_report(const std::vector<AttentionField>& layers, bool with_diversity = true);

}  // namespace convformer
