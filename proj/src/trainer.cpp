#include "fsm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "fsm/error.hpp"
#include "fsm/rng.hpp"
#include "kernels.hpp"

namespace fsm {

namespace {

template <typename Graph, typename TensorPtr>
std::vector<TensorPtr> collect_params(Graph& g) {
    std::vector<TensorPtr> out;
    for (auto& l : g.layers) {
        switch (l.kind) {
            case LayerKind::Conv2d:
            case LayerKind::Linear:
                out.push_back(&l.weight);
                if (l.bias) out.push_back(&*l.bias);
                break;
            case LayerKind::BatchNorm:
                out.push_back(&l.gamma);
                out.push_back(&l.beta);
                break;
            default:
                break;
        }
    }
    return out;
}

struct BnCache {
    std::vector<double> mean;     // batch mean per channel
    std::vector<double> inv_std;  // 1/sqrt(var + eps)
};

// Everything the backward pass needs from one training-mode forward.
struct TrainTrace {
    std::vector<Tensor> flow;  // post-residual output of each layer
    std::vector<Tensor> acts;  // raw output where it differs (residual targets)
    std::map<int, BnCache> bn;
    std::map<int, std::vector<int64_t>> pool_argmax;
    // residual wiring in relu-layer indices
    std::map<int, std::vector<int>> add_into;
};

const Tensor& raw_out(const TrainTrace& tr, int i) {
    return tr.acts[static_cast<size_t>(i)].size() ? tr.acts[static_cast<size_t>(i)]
                                                  : tr.flow[static_cast<size_t>(i)];
}

Tensor bn_train_forward(const Tensor& x, Layer& l, BnCache& cache, bool update_running) {
    const Shape4 xs = x.shape4();
    const int64_t plane = xs.h * xs.w;
    const int64_t count = xs.n * plane;
    const size_t c = static_cast<size_t>(xs.c);
    cache.mean.assign(c, 0.0);
    cache.inv_std.assign(c, 0.0);
    std::vector<double> var(c, 0.0);
    for (int64_t n = 0; n < xs.n; ++n)
        for (int64_t ch = 0; ch < xs.c; ++ch) {
            const float* p = x.data.data() + (n * xs.c + ch) * plane;
            double s = 0.0, ss = 0.0;
            for (int64_t i = 0; i < plane; ++i) {
                s += p[i];
                ss += static_cast<double>(p[i]) * p[i];
            }
            cache.mean[static_cast<size_t>(ch)] += s;
            var[static_cast<size_t>(ch)] += ss;
        }
    for (size_t ch = 0; ch < c; ++ch) {
        cache.mean[ch] /= static_cast<double>(count);
        var[ch] = var[ch] / static_cast<double>(count) - cache.mean[ch] * cache.mean[ch];
        if (var[ch] < 0.0) var[ch] = 0.0;  // fp cancellation guard
        cache.inv_std[ch] = 1.0 / std::sqrt(var[ch] + static_cast<double>(l.epsilon));
    }
    if (update_running) {
        for (size_t ch = 0; ch < c; ++ch) {
            float& rm = l.running_mean.data[ch];
            float& rv = l.running_var.data[ch];
            rm = static_cast<float>(0.9 * rm + 0.1 * cache.mean[ch]);
            rv = static_cast<float>(0.9 * rv + 0.1 * var[ch]);
        }
    }
    Tensor y(x.shape, 0.0f);
    for (int64_t n = 0; n < xs.n; ++n)
        for (int64_t ch = 0; ch < xs.c; ++ch) {
            const float* p = x.data.data() + (n * xs.c + ch) * plane;
            float* q = y.data.data() + (n * xs.c + ch) * plane;
            const size_t sc = static_cast<size_t>(ch);
            const float scale = static_cast<float>(l.gamma.data[sc] * cache.inv_std[sc]);
            const float shift =
                static_cast<float>(l.beta.data[sc] - cache.mean[sc] * scale);
            for (int64_t i = 0; i < plane; ++i) q[i] = p[i] * scale + shift;
        }
    return y;
}

void bn_backward(const Tensor& x, const Tensor& dy, const Layer& l, const BnCache& cache,
                 Tensor& dgamma, Tensor& dbeta, Tensor& dx) {
    const Shape4 xs = x.shape4();
    const int64_t plane = xs.h * xs.w;
    const double count = static_cast<double>(xs.n * plane);
    for (int64_t ch = 0; ch < xs.c; ++ch) {
        const size_t sc = static_cast<size_t>(ch);
        const double mean = cache.mean[sc], istd = cache.inv_std[sc];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int64_t n = 0; n < xs.n; ++n) {
            const float* px = x.data.data() + (n * xs.c + ch) * plane;
            const float* pd = dy.data.data() + (n * xs.c + ch) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                const double xhat = (px[i] - mean) * istd;
                sum_dy += pd[i];
                sum_dy_xhat += pd[i] * xhat;
            }
        }
        dgamma.data[sc] += static_cast<float>(sum_dy_xhat);
        dbeta.data[sc] += static_cast<float>(sum_dy);
        const double gamma_istd = l.gamma.data[sc] * istd;
        for (int64_t n = 0; n < xs.n; ++n) {
            const float* px = x.data.data() + (n * xs.c + ch) * plane;
            const float* pd = dy.data.data() + (n * xs.c + ch) * plane;
            float* pq = dx.data.data() + (n * xs.c + ch) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                const double xhat = (px[i] - mean) * istd;
                pq[i] = static_cast<float>(
                    gamma_istd * (pd[i] - sum_dy / count - xhat * sum_dy_xhat / count));
            }
        }
    }
}

void conv_backward(const Tensor& x, const Tensor& dy, const Layer& l, Tensor& dw, Tensor* db,
                   Tensor& dx) {
    const Shape4 xs = x.shape4();
    const Shape4 ys = dy.shape4();
    const int64_t kh = l.weight.shape[2], kw = l.weight.shape[3];
    const int64_t kdim = xs.c * kh * kw;
    const int64_t ohow = ys.h * ys.w;
    std::vector<float> cols(static_cast<size_t>(kdim * ohow));
    std::vector<float> dcols(static_cast<size_t>(kdim * ohow));
    for (int64_t n = 0; n < xs.n; ++n) {
        const float* xi = x.data.data() + n * xs.c * xs.h * xs.w;
        const float* dyi = dy.data.data() + n * ys.c * ohow;
        detail::im2col(xi, xs.c, xs.h, xs.w, kh, kw, l.stride, l.padding, ys.h, ys.w,
                       cols.data());
        // dW += dY (oc, ohow) x cols^T (ohow, kdim)
        detail::sgemm(false, true, ys.c, kdim, ohow, 1.0f, dyi, ohow, cols.data(), ohow, 1.0f,
                      dw.data.data(), kdim);
        // dcols = W^T (kdim, oc) x dY (oc, ohow)
        detail::sgemm(true, false, kdim, ohow, ys.c, 1.0f, l.weight.data.data(), kdim, dyi, ohow,
                      0.0f, dcols.data(), ohow);
        float* dxi = dx.data.data() + n * xs.c * xs.h * xs.w;
        detail::col2im(dcols.data(), xs.c, xs.h, xs.w, kh, kw, l.stride, l.padding, ys.h, ys.w,
                       dxi);
    }
    if (db) {
        for (int64_t n = 0; n < ys.n; ++n)
            for (int64_t c = 0; c < ys.c; ++c) {
                const float* p = dy.data.data() + (n * ys.c + c) * ohow;
                double acc = 0.0;
                for (int64_t i = 0; i < ohow; ++i) acc += p[i];
                db->data[static_cast<size_t>(c)] += static_cast<float>(acc);
            }
    }
}

void linear_backward(const Tensor& x, const Tensor& dy, const Layer& l, Tensor& dw, Tensor* db,
                     Tensor& dx) {
    const int64_t n = x.shape[0], in = x.shape[1], out = dy.shape[1];
    detail::sgemm(true, false, out, in, n, 1.0f, dy.data.data(), out, x.data.data(), in, 1.0f,
                  dw.data.data(), in);
    detail::sgemm(false, false, n, in, out, 1.0f, dy.data.data(), out, l.weight.data.data(), in,
                  0.0f, dx.data.data(), in);
    if (db) {
        for (int64_t r = 0; r < n; ++r)
            for (int64_t c = 0; c < out; ++c)
                db->data[static_cast<size_t>(c)] += dy.data[static_cast<size_t>(r * out + c)];
    }
}

// Training-mode pass. `update_running` distinguishes an optimization step
// from a pure gradient query.
Tensor train_forward(ModelGraph& g, const GraphInfo& info, const Tensor& batch, TrainTrace& tr,
                     bool update_running) {
    detail::use_single_blas_thread();
    tr.flow.assign(g.layers.size(), Tensor{});
    tr.acts.assign(g.layers.size(), Tensor{});
    for (const ResidualLink& rl : g.residual_links) {
        const int dst = info.units[static_cast<size_t>(rl.to_unit)].relu;
        const int src = info.units[static_cast<size_t>(rl.from_unit)].relu;
        tr.add_into[dst].push_back(src);
    }
    Tensor cur = batch;
    for (size_t i = 0; i < g.layers.size(); ++i) {
        Layer& l = g.layers[i];
        switch (l.kind) {
            case LayerKind::Conv2d:
                cur = detail::conv_forward(cur, l.weight, l.bias ? &*l.bias : nullptr, l.stride,
                                           l.padding);
                break;
            case LayerKind::BatchNorm:
                cur = bn_train_forward(cur, l, tr.bn[static_cast<int>(i)], update_running);
                break;
            case LayerKind::ReLU:
                detail::relu_inplace(cur);
                break;
            case LayerKind::MaxPool:
                cur = detail::maxpool_forward(cur, l.pool_k, l.pool_s,
                                              &tr.pool_argmax[static_cast<int>(i)]);
                break;
            case LayerKind::AvgPool:
                cur = detail::avgpool_forward(cur, l.pool_k, l.pool_s);
                break;
            case LayerKind::Flatten:
                cur.shape = {cur.shape4().n, cur.shape4().c * cur.shape4().h * cur.shape4().w};
                break;
            case LayerKind::Linear:
                cur = detail::linear_forward(cur, l.weight, l.bias ? &*l.bias : nullptr);
                break;
        }
        if (auto it = tr.add_into.find(static_cast<int>(i)); it != tr.add_into.end()) {
            tr.acts[i] = cur;  // keep the pre-addition output for the relu mask
            for (int src : it->second) {
                const Tensor& add = tr.flow[static_cast<size_t>(src)];
                for (int64_t t = 0; t < cur.size(); ++t)
                    cur.data[static_cast<size_t>(t)] += add.data[static_cast<size_t>(t)];
            }
        }
        tr.flow[i] = cur;
    }
    return cur;
}

double softmax_ce(const Tensor& logits, const std::vector<int>& labels, Tensor& dlogits) {
    const int64_t n = logits.shape[0], k = logits.shape[1];
    dlogits = Tensor(logits.shape, 0.0f);
    double loss = 0.0;
    for (int64_t r = 0; r < n; ++r) {
        const float* p = logits.data.data() + r * k;
        float* d = dlogits.data.data() + r * k;
        double mx = p[0];
        for (int64_t c = 1; c < k; ++c) mx = std::max<double>(mx, p[c]);
        double z = 0.0;
        for (int64_t c = 0; c < k; ++c) z += std::exp(p[c] - mx);
        const int y = labels[static_cast<size_t>(r)];
        if (y < 0 || y >= k)
            throw IndexError("label " + std::to_string(y) + " outside " + std::to_string(k) +
                             " classes");
        loss += std::log(z) + mx - p[y];
        for (int64_t c = 0; c < k; ++c)
            d[c] = static_cast<float>(std::exp(p[c] - mx) / z / static_cast<double>(n));
        d[y] -= 1.0f / static_cast<float>(n);
    }
    return loss / static_cast<double>(n);
}

// Maps each layer to the index of its first gradient slot.
std::vector<int> grad_slots(const ModelGraph& g) {
    std::vector<int> slots(g.layers.size(), -1);
    int next = 0;
    for (size_t i = 0; i < g.layers.size(); ++i) {
        const Layer& l = g.layers[i];
        if (l.kind == LayerKind::Conv2d || l.kind == LayerKind::Linear) {
            slots[i] = next;
            next += l.bias ? 2 : 1;
        } else if (l.kind == LayerKind::BatchNorm) {
            slots[i] = next;
            next += 2;
        }
    }
    return slots;
}

double run_backward(ModelGraph& g, const GraphInfo& info, const Tensor& batch,
                    const std::vector<int>& labels, std::vector<Tensor>& grads,
                    bool update_running) {
    TrainTrace tr;
    Tensor logits = train_forward(g, info, batch, tr, update_running);
    if (logits.shape.size() != 2)
        throw GraphError("training requires a flat classifier output");
    Tensor cur;
    const double loss = softmax_ce(logits, labels, cur);

    auto params = collect_params<const ModelGraph, const Tensor*>(g);
    grads.clear();
    for (const Tensor* p : params) grads.emplace_back(p->shape, 0.0f);
    std::vector<int> slots = grad_slots(g);

    std::map<int, Tensor> stash;  // residual source relu -> pending gradient
    for (int i = static_cast<int>(g.layers.size()) - 1; i >= 0; --i) {
        if (auto it = stash.find(i); it != stash.end()) {
            for (int64_t t = 0; t < cur.size(); ++t)
                cur.data[static_cast<size_t>(t)] += it->second.data[static_cast<size_t>(t)];
        }
        if (auto it = tr.add_into.find(i); it != tr.add_into.end()) {
            for (int src : it->second) {
                auto pos = stash.emplace(src, Tensor(cur.shape, 0.0f)).first;
                for (int64_t t = 0; t < cur.size(); ++t)
                    pos->second.data[static_cast<size_t>(t)] +=
                        cur.data[static_cast<size_t>(t)];
            }
        }
        const Tensor& x = i == 0 ? batch : tr.flow[static_cast<size_t>(i - 1)];
        Layer& l = g.layers[static_cast<size_t>(i)];
        Tensor dx;
        switch (l.kind) {
            case LayerKind::Conv2d: {
                dx = Tensor(x.shape, 0.0f);
                const int s = slots[static_cast<size_t>(i)];
                conv_backward(x, cur, l, grads[static_cast<size_t>(s)],
                              l.bias ? &grads[static_cast<size_t>(s + 1)] : nullptr, dx);
                break;
            }
            case LayerKind::BatchNorm: {
                dx = Tensor(x.shape, 0.0f);
                const int s = slots[static_cast<size_t>(i)];
                bn_backward(x, cur, l, tr.bn.at(i), grads[static_cast<size_t>(s)],
                            grads[static_cast<size_t>(s + 1)], dx);
                break;
            }
            case LayerKind::ReLU: {
                const Tensor& y = raw_out(tr, i);
                dx = Tensor(x.shape, 0.0f);
                for (int64_t t = 0; t < x.size(); ++t)
                    if (y.data[static_cast<size_t>(t)] > 0.0f)
                        dx.data[static_cast<size_t>(t)] = cur.data[static_cast<size_t>(t)];
                break;
            }
            case LayerKind::MaxPool: {
                dx = Tensor(x.shape, 0.0f);
                const std::vector<int64_t>& am = tr.pool_argmax.at(i);
                for (size_t t = 0; t < am.size(); ++t)
                    dx.data[static_cast<size_t>(am[t])] += cur.data[t];
                break;
            }
            case LayerKind::AvgPool: {
                dx = Tensor(x.shape, 0.0f);
                const Shape4 xs = x.shape4();
                const Shape4 ys = cur.shape4();
                const float inv = 1.0f / static_cast<float>(l.pool_k * l.pool_k);
                int64_t oi = 0;
                for (int64_t n = 0; n < xs.n; ++n)
                    for (int64_t c = 0; c < xs.c; ++c) {
                        float* plane = dx.data.data() + (n * xs.c + c) * xs.h * xs.w;
                        for (int64_t oy = 0; oy < ys.h; ++oy)
                            for (int64_t ox = 0; ox < ys.w; ++ox, ++oi) {
                                const float v = cur.data[static_cast<size_t>(oi)] * inv;
                                for (int ky = 0; ky < l.pool_k; ++ky)
                                    for (int kx = 0; kx < l.pool_k; ++kx)
                                        plane[(oy * l.pool_s + ky) * xs.w + ox * l.pool_s + kx] +=
                                            v;
                            }
                    }
                break;
            }
            case LayerKind::Flatten: {
                dx = cur;
                dx.shape = x.shape;
                break;
            }
            case LayerKind::Linear: {
                dx = Tensor(x.shape, 0.0f);
                const int s = slots[static_cast<size_t>(i)];
                linear_backward(x, cur, l, grads[static_cast<size_t>(s)],
                                l.bias ? &grads[static_cast<size_t>(s + 1)] : nullptr, dx);
                break;
            }
        }
        cur = std::move(dx);
    }
    return loss;
}

void check_config(const TrainConfig& cfg) {
    if (cfg.lr < 0.0) throw ConfigError("learning rate must be non-negative");
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0))
        throw ConfigError("momentum must lie in [0,1)");
    if (cfg.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    if (cfg.batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (cfg.epochs < 0) throw ConfigError("epochs must be non-negative");
}

Tensor gather_batch(const Tensor& images, const std::vector<int64_t>& order, int64_t first,
                    int64_t count, std::vector<int>* labels_out, const std::vector<int>& labels) {
    const int64_t sample = images.size() / images.shape[0];
    std::vector<int64_t> shape = images.shape;
    shape[0] = count;
    Tensor batch(std::move(shape), 0.0f);
    for (int64_t i = 0; i < count; ++i) {
        const int64_t src = order[static_cast<size_t>(first + i)];
        std::copy(images.data.data() + src * sample, images.data.data() + (src + 1) * sample,
                  batch.data.data() + i * sample);
        labels_out->push_back(labels[static_cast<size_t>(src)]);
    }
    return batch;
}

}  // namespace

std::vector<Tensor*> trainable_params(ModelGraph& g) {
    return collect_params<ModelGraph, Tensor*>(g);
}

std::vector<const Tensor*> trainable_params(const ModelGraph& g) {
    return collect_params<const ModelGraph, const Tensor*>(g);
}

double loss_and_gradients(const ModelGraph& g, const Tensor& images,
                          const std::vector<int>& labels, std::vector<Tensor>& grads) {
    if (images.shape[0] != static_cast<int64_t>(labels.size()))
        throw ShapeError("label count does not match the batch");
    GraphInfo info = validate(g);
    ModelGraph& mutable_g = const_cast<ModelGraph&>(g);  // running stats are not touched
    return run_backward(mutable_g, info, images, labels, grads, false);
}

TrainResult train(const ModelGraph& g, const Dataset& ds, const TrainConfig& cfg) {
    check_config(cfg);
    GraphInfo info = validate(g);
    if (ds.size() == 0) throw TrainError("empty training set");
    if (ds.images.shape[0] != static_cast<int64_t>(ds.labels.size()))
        throw ShapeError("label count does not match the dataset");

    TrainResult res;
    res.graph = g;
    std::vector<Tensor*> params = trainable_params(res.graph);
    std::vector<Tensor> velocity;
    for (Tensor* p : params) velocity.emplace_back(p->shape, 0.0f);

    Rng rng(cfg.seed);
    std::vector<int64_t> order(static_cast<size_t>(ds.size()));
    std::iota(order.begin(), order.end(), 0);

    int64_t step = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = cfg.lr;
        for (int64_t boundary : cfg.lr_steps)
            if (epoch >= boundary) lr *= 0.1;
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(
                                        static_cast<int64_t>(i)))]);
        for (int64_t first = 0; first < ds.size(); first += cfg.batch_size) {
            const int64_t count = std::min(cfg.batch_size, ds.size() - first);
            std::vector<int> labels;
            Tensor batch = gather_batch(ds.images, order, first, count, &labels, ds.labels);
            std::vector<Tensor> grads;
            const double loss = run_backward(res.graph, info, batch, labels, grads, true);
            if (!std::isfinite(loss))
                throw TrainError("loss diverged at step " + std::to_string(step));
            for (size_t p = 0; p < params.size(); ++p) {
                float* w = params[p]->data.data();
                float* v = velocity[p].data.data();
                const float* dw = grads[p].data.data();
                const int64_t sz = params[p]->size();
                for (int64_t t = 0; t < sz; ++t) {
                    v[t] = static_cast<float>(cfg.momentum * v[t] + dw[t] +
                                              cfg.weight_decay * w[t]);
                    w[t] = static_cast<float>(w[t] - lr * v[t]);
                }
            }
            res.curve.push_back({step, loss, lr});
            ++step;
        }
    }
    return res;
}

ModelGraph finetune_layer(const ModelGraph& g, const Dataset& ds, int64_t epochs,
                          const TrainConfig& cfg) {
    if (epochs == 0) return g;
    TrainConfig budget = cfg;
    budget.epochs = epochs;
    return train(g, ds, budget).graph;
}

void save_loss_csv(const std::vector<LossPoint>& curve, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot write " + path);
    std::fputs("step,loss,lr\n", f);
    for (const LossPoint& p : curve)
        std::fprintf(f, "%lld,%.8f,%.8g\n", static_cast<long long>(p.step), p.loss, p.lr);
    std::fclose(f);
}

}  // namespace fsm
