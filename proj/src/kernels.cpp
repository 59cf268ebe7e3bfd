#include "kernels.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "fsm/error.hpp"

extern "C" void openblas_set_num_threads(int);

namespace fsm::detail {

void use_single_blas_thread() {
    static const bool once = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)once;
}

void sgemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
           int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc) {
    use_single_blas_thread();
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

void im2col(const float* x, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw, int stride,
            int pad, int64_t oh, int64_t ow, float* cols) {
    const int64_t plane = h * w;
    int64_t row = 0;
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx, ++row) {
                float* out = cols + row * (oh * ow);
                for (int64_t oy = 0; oy < oh; ++oy) {
                    int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        std::memset(out + oy * ow, 0, static_cast<size_t>(ow) * 4);
                        continue;
                    }
                    const float* src = x + ch * plane + iy * w;
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        int64_t ix = ox * stride - pad + kx;
                        out[oy * ow + ox] = (ix < 0 || ix >= w) ? 0.0f : src[ix];
                    }
                }
            }
        }
    }
}

void col2im(const float* cols, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw, int stride,
            int pad, int64_t oh, int64_t ow, float* dx) {
    const int64_t plane = h * w;
    int64_t row = 0;
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx, ++row) {
                const float* src = cols + row * (oh * ow);
                for (int64_t oy = 0; oy < oh; ++oy) {
                    int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    float* dst = dx + ch * plane + iy * w;
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        int64_t ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad) {
    const Shape4 xs = x.shape4();
    const int64_t out_c = w.shape[0], in_c = w.shape[1], kh = w.shape[2], kw = w.shape[3];
    if (xs.c != in_c) throw ShapeError("conv input channel mismatch");
    const int64_t oh = (xs.h + 2 * pad - kh) / stride + 1;
    const int64_t ow = (xs.w + 2 * pad - kw) / stride + 1;
    if (oh < 1 || ow < 1) throw ShapeError("conv kernel exceeds input");

    Tensor y({xs.n, out_c, oh, ow}, 0.0f);
    const int64_t K = in_c * kh * kw;
    const int64_t N = oh * ow;
    std::vector<float> cols(static_cast<size_t>(K * N));
    for (int64_t n = 0; n < xs.n; ++n) {
        im2col(x.data.data() + n * xs.c * xs.h * xs.w, xs.c, xs.h, xs.w, kh, kw, stride, pad, oh,
               ow, cols.data());
        sgemm(false, false, out_c, N, K, 1.0f, w.data.data(), K, cols.data(), N, 0.0f,
              y.data.data() + n * out_c * N, N);
        if (bias) {
            float* yn = y.data.data() + n * out_c * N;
            for (int64_t j = 0; j < out_c; ++j) {
                const float b = bias->data[static_cast<size_t>(j)];
                for (int64_t t = 0; t < N; ++t) yn[j * N + t] += b;
            }
        }
    }
    return y;
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor* bias) {
    const int64_t n = x.shape[0], in_f = x.shape[1];
    const int64_t out_f = w.shape[0];
    if (w.shape[1] != in_f) throw ShapeError("linear input feature mismatch");
    Tensor y({n, out_f}, 0.0f);
    sgemm(false, true, n, out_f, in_f, 1.0f, x.data.data(), in_f, w.data.data(), in_f, 0.0f,
          y.data.data(), out_f);
    if (bias) {
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < out_f; ++j)
                y.data[static_cast<size_t>(i * out_f + j)] += bias->data[static_cast<size_t>(j)];
    }
    return y;
}

Tensor maxpool_forward(const Tensor& x, int k, int s, std::vector<int64_t>* argmax) {
    const Shape4 xs = x.shape4();
    const int64_t oh = (xs.h - k) / s + 1;
    const int64_t ow = (xs.w - k) / s + 1;
    if (oh < 1 || ow < 1) throw ShapeError("pool window exceeds input");
    Tensor y({xs.n, xs.c, oh, ow}, 0.0f);
    if (argmax) argmax->assign(static_cast<size_t>(y.size()), 0);
    int64_t oi = 0;
    for (int64_t n = 0; n < xs.n; ++n)
        for (int64_t c = 0; c < xs.c; ++c) {
            const float* plane = x.data.data() + (n * xs.c + c) * xs.h * xs.w;
            const int64_t base = (n * xs.c + c) * xs.h * xs.w;
            for (int64_t oy = 0; oy < oh; ++oy)
                for (int64_t ox = 0; ox < ow; ++ox, ++oi) {
                    float best = plane[(oy * s) * xs.w + ox * s];
                    int64_t best_idx = (oy * s) * xs.w + ox * s;
                    for (int64_t ky = 0; ky < k; ++ky)
                        for (int64_t kx = 0; kx < k; ++kx) {
                            int64_t idx = (oy * s + ky) * xs.w + ox * s + kx;
                            if (plane[idx] > best) {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    y.data[static_cast<size_t>(oi)] = best;
                    if (argmax) (*argmax)[static_cast<size_t>(oi)] = base + best_idx;
                }
        }
    return y;
}

Tensor avgpool_forward(const Tensor& x, int k, int s) {
    const Shape4 xs = x.shape4();
    const int64_t oh = (xs.h - k) / s + 1;
    const int64_t ow = (xs.w - k) / s + 1;
    if (oh < 1 || ow < 1) throw ShapeError("pool window exceeds input");
    Tensor y({xs.n, xs.c, oh, ow}, 0.0f);
    const float inv = 1.0f / static_cast<float>(k * k);
    int64_t oi = 0;
    for (int64_t n = 0; n < xs.n; ++n)
        for (int64_t c = 0; c < xs.c; ++c) {
            const float* plane = x.data.data() + (n * xs.c + c) * xs.h * xs.w;
            for (int64_t oy = 0; oy < oh; ++oy)
                for (int64_t ox = 0; ox < ow; ++ox, ++oi) {
                    float acc = 0.0f;
                    for (int64_t ky = 0; ky < k; ++ky)
                        for (int64_t kx = 0; kx < k; ++kx)
                            acc += plane[(oy * s + ky) * xs.w + ox * s + kx];
                    y.data[static_cast<size_t>(oi)] = acc * inv;
                }
        }
    return y;
}

void bn_inference_inplace(Tensor& x, const Layer& bn) {
    const Shape4 xs = x.shape4();
    std::vector<float> scale(static_cast<size_t>(xs.c)), shift(static_cast<size_t>(xs.c));
    for (int64_t c = 0; c < xs.c; ++c) {
        const size_t ci = static_cast<size_t>(c);
        const float sd = std::sqrt(bn.running_var.data[ci] + bn.epsilon);
        scale[ci] = bn.gamma.data[ci] / sd;
        shift[ci] = bn.beta.data[ci] - bn.running_mean.data[ci] * scale[ci];
    }
    const int64_t plane = xs.h * xs.w;
    for (int64_t n = 0; n < xs.n; ++n)
        for (int64_t c = 0; c < xs.c; ++c) {
            float* p = x.data.data() + (n * xs.c + c) * plane;
            const float sc = scale[static_cast<size_t>(c)], sh = shift[static_cast<size_t>(c)];
            for (int64_t t = 0; t < plane; ++t) p[t] = p[t] * sc + sh;
        }
}

void relu_inplace(Tensor& x) {
    for (float& v : x.data) v = v > 0.0f ? v : 0.0f;
}

}  // namespace fsm::detail
