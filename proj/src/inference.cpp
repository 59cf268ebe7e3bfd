#include "fsm/inference.hpp"

#include <algorithm>
#include <cstring>
#include <functional>

#include "fsm/error.hpp"
#include "kernels.hpp"

namespace fsm {

namespace {

using TapFn = std::function<void(int layer, const Tensor& out)>;

void check_batch(const ModelGraph& g, const Tensor& batch) {
    if (batch.ndim() != 4) throw ShapeError("batch must be 4-d (n,c,h,w)");
    const Shape4 bs = batch.shape4();
    if (bs.c != g.input_shape.c || bs.h != g.input_shape.h || bs.w != g.input_shape.w)
        throw ShapeError("batch shape (" + std::to_string(bs.c) + "," + std::to_string(bs.h) +
                         "," + std::to_string(bs.w) + ") does not match graph input (" +
                         std::to_string(g.input_shape.c) + "," + std::to_string(g.input_shape.h) +
                         "," + std::to_string(g.input_shape.w) + ")");
}

Tensor run_graph(const ModelGraph& g, const GraphInfo& info, const Tensor& batch, int stop_layer,
                 const TapFn& tap) {
    check_batch(g, batch);

    // relu layer -> list of source relu layers whose outputs add in
    std::map<int, std::vector<int>> add_into;
    std::map<int, Tensor> saved;
    for (const ResidualLink& rl : g.residual_links) {
        int dst = info.units[static_cast<size_t>(rl.to_unit)].relu;
        int src = info.units[static_cast<size_t>(rl.from_unit)].relu;
        add_into[dst].push_back(src);
        saved.emplace(src, Tensor{});
    }

    Tensor cur = batch;
    const int last = stop_layer < 0 ? static_cast<int>(g.layers.size()) - 1 : stop_layer;
    for (int i = 0; i <= last; ++i) {
        const Layer& l = g.layers[i];
        switch (l.kind) {
            case LayerKind::Conv2d:
                cur = detail::conv_forward(cur, l.weight, l.bias ? &*l.bias : nullptr, l.stride,
                                           l.padding);
                break;
            case LayerKind::BatchNorm:
                detail::bn_inference_inplace(cur, l);
                break;
            case LayerKind::ReLU:
                detail::relu_inplace(cur);
                break;
            case LayerKind::MaxPool:
                cur = detail::maxpool_forward(cur, l.pool_k, l.pool_s);
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
        if (auto it = add_into.find(i); it != add_into.end()) {
            for (int src : it->second) {
                const Tensor& add = saved.at(src);
                if (add.shape != cur.shape) throw ShapeError("residual branch shape mismatch");
                for (int64_t t = 0; t < cur.size(); ++t)
                    cur.data[static_cast<size_t>(t)] += add.data[static_cast<size_t>(t)];
            }
        }
        if (auto it = saved.find(i); it != saved.end()) it->second = cur;
        if (tap) tap(i, cur);
    }
    return cur;
}

struct BatchMoments {
    std::vector<double> sum, sumsq;
    int64_t per_channel = 0;
};

// Per-channel sum / sum of squares of one tensor: channels are dim 1 for 4-d,
// features for 2-d.
BatchMoments channel_sums(const Tensor& t) {
    BatchMoments bm;
    if (t.ndim() == 4) {
        const Shape4 s = t.shape4();
        bm.sum.assign(static_cast<size_t>(s.c), 0.0);
        bm.sumsq.assign(static_cast<size_t>(s.c), 0.0);
        bm.per_channel = s.n * s.h * s.w;
        const int64_t plane = s.h * s.w;
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t c = 0; c < s.c; ++c) {
                const float* p = t.data.data() + (n * s.c + c) * plane;
                double sv = 0.0, sq = 0.0;
                for (int64_t i = 0; i < plane; ++i) {
                    const double v = p[i];
                    sv += v;
                    sq += v * v;
                }
                bm.sum[static_cast<size_t>(c)] += sv;
                bm.sumsq[static_cast<size_t>(c)] += sq;
            }
    } else {
        const int64_t n = t.shape[0], f = t.shape[1];
        bm.sum.assign(static_cast<size_t>(f), 0.0);
        bm.sumsq.assign(static_cast<size_t>(f), 0.0);
        bm.per_channel = n;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < f; ++j) {
                const double v = t.at2(i, j);
                bm.sum[static_cast<size_t>(j)] += v;
                bm.sumsq[static_cast<size_t>(j)] += v * v;
            }
    }
    return bm;
}

}  // namespace

Tensor forward(const ModelGraph& g, const Tensor& batch) {
    GraphInfo info = validate(g);
    return run_graph(g, info, batch, -1, nullptr);
}

Tensor forward_prefix(const ModelGraph& g, const Tensor& batch, int last_layer) {
    GraphInfo info = validate(g);
    if (last_layer < 0 || last_layer >= static_cast<int>(g.layers.size()))
        throw IndexError("layer index " + std::to_string(last_layer) + " out of range");
    return run_graph(g, info, batch, last_layer, nullptr);
}

std::vector<double> ChannelMoments::variance() const {
    std::vector<double> v(mean.size(), 0.0);
    if (count > 0)
        for (size_t i = 0; i < v.size(); ++i) v[i] = m2[i] / static_cast<double>(count);
    return v;
}

void ChannelMoments::merge(int64_t n2, const std::vector<double>& mean2,
                           const std::vector<double>& m2_2) {
    if (n2 == 0) return;
    if (count == 0) {
        count = n2;
        mean = mean2;
        m2 = m2_2;
        return;
    }
    const double na = static_cast<double>(count), nb = static_cast<double>(n2);
    for (size_t i = 0; i < mean.size(); ++i) {
        const double d = mean2[i] - mean[i];
        mean[i] += d * nb / (na + nb);
        m2[i] += m2_2[i] + d * d * na * nb / (na + nb);
    }
    count += n2;
}

const ChannelMoments& EmpiricalStats::at(int layer) const {
    auto it = by_layer.find(layer);
    if (it == by_layer.end())
        throw StatsError("no statistics collected for layer " + std::to_string(layer));
    return it->second;
}

Tensor batch_slice(const Tensor& images, int64_t first, int64_t count) {
    const Shape4 s = images.shape4();
    if (first < 0 || count < 1 || first + count > s.n)
        throw IndexError("batch slice [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") out of range");
    Tensor out({count, s.c, s.h, s.w}, 0.0f);
    const int64_t stride = s.c * s.h * s.w;
    std::memcpy(out.data.data(), images.data.data() + first * stride,
                static_cast<size_t>(count * stride) * 4);
    return out;
}

EmpiricalStats collect_stats(const ModelGraph& g, const Dataset& ds, int64_t batch_size,
                             int64_t max_batches) {
    if (ds.size() == 0) throw StatsError("cannot collect statistics from an empty dataset");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    GraphInfo info = validate(g);

    EmpiricalStats stats;
    auto tap = [&stats, &g](int layer, const Tensor& out) {
        const LayerKind k = g.layers[static_cast<size_t>(layer)].kind;
        if (k != LayerKind::Conv2d && k != LayerKind::Linear && k != LayerKind::ReLU) return;
        BatchMoments bm = channel_sums(out);
        ChannelMoments& cm = stats.by_layer[layer];
        if (cm.count == 0) {
            cm.mean.assign(bm.sum.size(), 0.0);
            cm.m2.assign(bm.sum.size(), 0.0);
        }
        std::vector<double> mean(bm.sum.size()), m2(bm.sum.size());
        const double n = static_cast<double>(bm.per_channel);
        for (size_t i = 0; i < bm.sum.size(); ++i) {
            mean[i] = bm.sum[i] / n;
            m2[i] = bm.sumsq[i] - bm.sum[i] * bm.sum[i] / n;
        }
        cm.merge(bm.per_channel, mean, m2);
    };

    int64_t done = 0, batches = 0;
    while (done < ds.size()) {
        if (max_batches >= 0 && batches >= max_batches) break;
        const int64_t take = std::min(batch_size, ds.size() - done);
        Tensor batch = batch_slice(ds.images, done, take);
        run_graph(g, info, batch, -1, tap);
        done += take;
        ++batches;
    }
    if (stats.by_layer.empty()) throw StatsError("no batches processed");
    return stats;
}

double evaluate(const ModelGraph& g, const Dataset& ds, int64_t batch_size, int64_t max_batches) {
    if (ds.size() == 0) return 0.0;
    GraphInfo info = validate(g);

    int64_t done = 0, batches = 0, hits = 0, seen = 0;
    while (done < ds.size()) {
        if (max_batches >= 0 && batches >= max_batches) break;
        const int64_t take = std::min(batch_size, ds.size() - done);
        Tensor batch = batch_slice(ds.images, done, take);
        Tensor logits = run_graph(g, info, batch, -1, nullptr);
        if (logits.ndim() != 2)
            throw ShapeError("model output is not (batch, classes); cannot evaluate");
        const int64_t classes = logits.shape[1];
        for (int64_t i = 0; i < take; ++i) {
            int64_t best = 0;
            float bv = logits.at2(i, 0);
            for (int64_t c = 1; c < classes; ++c)
                if (logits.at2(i, c) > bv) {
                    bv = logits.at2(i, c);
                    best = c;
                }
            if (best == ds.labels[static_cast<size_t>(done + i)]) ++hits;
            ++seen;
        }
        done += take;
        ++batches;
    }
    return seen == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(seen);
}

void recalibrate_bn(ModelGraph& g, const Dataset& ds, int64_t batch_size, int64_t max_batches) {
    if (ds.size() == 0) throw StatsError("cannot recalibrate on an empty dataset");
    GraphInfo info = validate(g);
    for (const Unit& u : info.units) {
        // measure only the prefix ending at this unit's conv; deeper layers
        // cannot influence it
        ChannelMoments cm;
        int64_t done = 0, batches = 0;
        while (done < ds.size()) {
            if (max_batches >= 0 && batches >= max_batches) break;
            const int64_t take = std::min(batch_size, ds.size() - done);
            Tensor batch = batch_slice(ds.images, done, take);
            Tensor out = run_graph(g, info, batch, u.conv, nullptr);
            BatchMoments bm = channel_sums(out);
            if (cm.count == 0) {
                cm.mean.assign(bm.sum.size(), 0.0);
                cm.m2.assign(bm.sum.size(), 0.0);
            }
            std::vector<double> mean(bm.sum.size()), m2(bm.sum.size());
            const double n = static_cast<double>(bm.per_channel);
            for (size_t i = 0; i < bm.sum.size(); ++i) {
                mean[i] = bm.sum[i] / n;
                m2[i] = bm.sumsq[i] - bm.sum[i] * bm.sum[i] / n;
            }
            cm.merge(bm.per_channel, mean, m2);
            done += take;
            ++batches;
        }
        Layer& bn = g.layers[static_cast<size_t>(u.bn)];
        const auto var = cm.variance();
        for (size_t c = 0; c < cm.mean.size(); ++c) {
            bn.running_mean.data[c] = static_cast<float>(cm.mean[c]);
            bn.running_var.data[c] = static_cast<float>(std::max(var[c], 1e-8));
        }
    }
}

}  // namespace fsm
