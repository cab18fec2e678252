#pragma once

#include "convformer/random.hpp"
#include "convformer/tensor.hpp"

namespace testing {

inline convformer::Tensor random_tensor(convformer::Shape shape, convformer::Rng& rng, double scale = 1.0) {
    convformer::Tensor t(std::move(shape));
    for (auto& v : t.values()) v = rng.normal(0.0, scale);
    return t;
}

}  // namespace testing
