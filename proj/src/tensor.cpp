#include "fsm/tensor.hpp"

#include <string>

namespace fsm {

namespace {

int64_t checked_count(const std::vector<int64_t>& shape) {
    if (shape.empty()) {
        throw ShapeError("tensor shape must have at least one extent");
    }
    int64_t n = 1;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] < 1) {
            throw ShapeError("tensor extent " + std::to_string(i) + " is " +
                             std::to_string(shape[i]) + ", must be >= 1");
        }
        n *= shape[i];
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> shape_, float fill)
    : shape(std::move(shape_)), data(static_cast<size_t>(checked_count(shape)), fill) {}

Shape4 Tensor::shape4() const {
    if (shape.size() != 4) {
        throw ShapeError("expected a 4-d tensor, got " + std::to_string(shape.size()) + "-d");
    }
    return Shape4{shape[0], shape[1], shape[2], shape[3]};
}

Tensor tensor_new(const std::vector<int64_t>& shape, float fill) {
    return Tensor(shape, fill);
}

Tensor channel_slice(const Tensor& t, int64_t k) {
    Shape4 s = t.shape4();
    if (k < 0 || k >= s.c) {
        throw IndexError("channel index " + std::to_string(k) + " out of range [0," +
                         std::to_string(s.c) + ")");
    }
    Tensor out({s.n, 1, s.h, s.w}, 0.0f);
    const int64_t plane = s.h * s.w;
    for (int64_t n = 0; n < s.n; ++n) {
        const float* src = t.data.data() + (n * s.c + k) * plane;
        float* dst = out.data.data() + n * plane;
        std::copy(src, src + plane, dst);
    }
    return out;
}

MeanVar reduce_mean_var(const Tensor& t) {
    Shape4 s = t.shape4();
    MeanVar mv;
    mv.mean.resize(s.c);
    mv.var.resize(s.c);
    const int64_t plane = s.h * s.w;
    const double count = static_cast<double>(s.n * plane);
    for (int64_t c = 0; c < s.c; ++c) {
        double sum = 0.0;
        for (int64_t n = 0; n < s.n; ++n) {
            const float* p = t.data.data() + (n * s.c + c) * plane;
            for (int64_t i = 0; i < plane; ++i) sum += p[i];
        }
        const double mean = sum / count;
        double sq = 0.0;
        for (int64_t n = 0; n < s.n; ++n) {
            const float* p = t.data.data() + (n * s.c + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                const double d = p[i] - mean;
                sq += d * d;
            }
        }
        mv.mean[c] = mean;
        mv.var[c] = sq / count;
    }
    return mv;
}

}  // namespace fsm
