#pragma once

#include <cstdint>

#include "fsm/graph.hpp"
#include "fsm/tensor.hpp"

// Internal compute primitives shared by the inference and training paths.
// Convolutions run as im2col + single-threaded sgemm so repeated runs are
// byte-identical.

namespace fsm::detail {

void use_single_blas_thread();

// cols buffer has shape (C*kh*kw, OH*OW), row-major.
void im2col(const float* x, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw, int stride,
            int pad, int64_t oh, int64_t ow, float* cols);

// Scatter-add transpose of im2col; dx must be zeroed by the caller.
void col2im(const float* cols, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw, int stride,
            int pad, int64_t oh, int64_t ow, float* dx);

Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad);

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor* bias);

// argmax, when given, receives the flat input index of each window maximum.
Tensor maxpool_forward(const Tensor& x, int k, int s, std::vector<int64_t>* argmax = nullptr);

Tensor avgpool_forward(const Tensor& x, int k, int s);

void bn_inference_inplace(Tensor& x, const Layer& bn);

void relu_inplace(Tensor& x);

// C = A(m,k) x B(k,n), row-major, optional transposes; beta scales existing C.
void sgemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
           int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc);

}  // namespace fsm::detail
