#pragma once

#include <cstdint>
#include <vector>

#include "fsm/error.hpp"

namespace fsm {

/// Batch/channel/height/width extents of a feature map.
struct Shape4 {
    int64_t n = 0, c = 0, h = 0, w = 0;

    int64_t count() const { return n * c * h * w; }
    bool operator==(const Shape4&) const = default;
};

/// Dense row-major f32 value array. Extents are always >= 1 and
/// product(shape) == data.size(). Treated as immutable once built;
/// transforms produce fresh tensors.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int64_t> shape_, float fill);

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }

    Shape4 shape4() const;

    float& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    float at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    float& at2(int64_t i, int64_t j) { return data[i * shape[1] + j]; }
    float at2(int64_t i, int64_t j) const { return data[i * shape[1] + j]; }
};

Tensor tensor_new(const std::vector<int64_t>& shape, float fill);

/// Copy of the k-th channel of an (N,C,H,W) tensor as (N,1,H,W).
Tensor channel_slice(const Tensor& t, int64_t k);

/// Per-channel moments of an (N,C,H,W) tensor, pooled over batch and
/// spatial positions. Accumulated in f64; variance is population variance.
struct MeanVar {
    std::vector<double> mean;
    std::vector<double> var;
};
MeanVar reduce_mean_var(const Tensor& t);

}  // namespace fsm
