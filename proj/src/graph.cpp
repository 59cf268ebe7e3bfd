#include "fsm/graph.hpp"

#include <utility>

#include "fsm/error.hpp"

namespace fsm {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::ReLU: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::AvgPool: return "avgpool";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Linear: return "linear";
    }
    return "?";
}

Layer conv2d(Tensor weight, std::optional<Tensor> bias, int stride, int padding) {
    Layer l;
    l.kind = LayerKind::Conv2d;
    l.weight = std::move(weight);
    l.bias = std::move(bias);
    l.stride = stride;
    l.padding = padding;
    return l;
}

Layer batchnorm(Tensor gamma, Tensor beta, Tensor running_mean, Tensor running_var,
                float epsilon) {
    Layer l;
    l.kind = LayerKind::BatchNorm;
    l.gamma = std::move(gamma);
    l.beta = std::move(beta);
    l.running_mean = std::move(running_mean);
    l.running_var = std::move(running_var);
    l.epsilon = epsilon;
    return l;
}

Layer relu() {
    Layer l;
    l.kind = LayerKind::ReLU;
    return l;
}

Layer maxpool(int k, int s) {
    Layer l;
    l.kind = LayerKind::MaxPool;
    l.pool_k = k;
    l.pool_s = s;
    return l;
}

Layer avgpool(int k, int s) {
    Layer l;
    l.kind = LayerKind::AvgPool;
    l.pool_k = k;
    l.pool_s = s;
    return l;
}

Layer flatten() {
    Layer l;
    l.kind = LayerKind::Flatten;
    return l;
}

Layer linear(Tensor weight, std::optional<Tensor> bias) {
    Layer l;
    l.kind = LayerKind::Linear;
    l.weight = std::move(weight);
    l.bias = std::move(bias);
    return l;
}

const Unit& GraphInfo::unit(int idx) const {
    if (idx < 0 || idx >= static_cast<int>(units.size()))
        throw IndexError("unit index " + std::to_string(idx) + " out of range (have " +
                         std::to_string(units.size()) + ")");
    return units[static_cast<size_t>(idx)];
}

int GraphInfo::unit_of_bn(int layer) const {
    for (size_t u = 0; u < units.size(); ++u)
        if (units[u].bn == layer) return static_cast<int>(u);
    return -1;
}

namespace {

std::string at_layer(int i, LayerKind k) {
    return "layer " + std::to_string(i) + " (" + layer_kind_name(k) + "): ";
}

// Core walk shared by check_graph and validate. Appends issues; fills info
// as far as shape tracking stays coherent. Returns false if the walk had to
// stop early (shapes unusable past that point).
bool analyze(const ModelGraph& g, GraphInfo& info, std::vector<GraphIssue>& issues) {
    auto fail = [&issues](int layer, std::string msg) {
        issues.push_back({layer, std::move(msg)});
    };

    if (g.input_shape.c < 1 || g.input_shape.h < 1 || g.input_shape.w < 1) {
        fail(-1, "input shape must have positive c/h/w");
        return false;
    }
    if (g.layers.empty()) {
        fail(-1, "graph has no layers");
        return false;
    }

    LayerShape cur{Shape4{1, g.input_shape.c, g.input_shape.h, g.input_shape.w}, false};
    info.out_shape.clear();
    info.units.clear();
    info.last_weighted = -1;

    const int n = static_cast<int>(g.layers.size());
    for (int i = 0; i < n; ++i) {
        const Layer& l = g.layers[i];
        const std::string where = at_layer(i, l.kind);
        switch (l.kind) {
            case LayerKind::Conv2d: {
                if (cur.flat) {
                    fail(i, where + "input is flattened");
                    return false;
                }
                if (l.weight.ndim() != 4) {
                    fail(i, where + "weight must be 4-d (out,in,kh,kw)");
                    return false;
                }
                const auto& ws = l.weight.shape;
                int64_t out_c = ws[0], in_c = ws[1], kh = ws[2], kw = ws[3];
                if (in_c != cur.s.c) {
                    fail(i, where + "expects " + std::to_string(in_c) + " input channels, got " +
                                std::to_string(cur.s.c));
                    return false;
                }
                if (l.bias && (l.bias->ndim() != 1 || l.bias->shape[0] != out_c)) {
                    fail(i, where + "bias length must equal output channels");
                    return false;
                }
                if (l.stride < 1) {
                    fail(i, where + "stride must be >= 1");
                    return false;
                }
                if (l.padding < 0) {
                    fail(i, where + "padding must be >= 0");
                    return false;
                }
                int64_t oh = (cur.s.h + 2 * l.padding - kh) / l.stride + 1;
                int64_t ow = (cur.s.w + 2 * l.padding - kw) / l.stride + 1;
                if (cur.s.h + 2 * l.padding < kh || cur.s.w + 2 * l.padding < kw) {
                    fail(i, where + "kernel exceeds padded input");
                    return false;
                }
                cur.s = Shape4{1, out_c, oh, ow};
                info.last_weighted = i;
                break;
            }
            case LayerKind::BatchNorm: {
                if (cur.flat) {
                    fail(i, where + "input is flattened");
                    return false;
                }
                if (i == 0 || g.layers[i - 1].kind != LayerKind::Conv2d)
                    fail(i, where + "not directly preceded by conv2d");
                int64_t c = cur.s.c;
                auto bad_vec = [c](const Tensor& t) {
                    return t.ndim() != 1 || t.shape[0] != c;
                };
                if (bad_vec(l.gamma) || bad_vec(l.beta) || bad_vec(l.running_mean) ||
                    bad_vec(l.running_var)) {
                    fail(i, where + "parameter vectors must all have length " + std::to_string(c));
                    return false;
                }
                for (float v : l.running_var.data)
                    if (!(v > 0.0f)) {
                        fail(i, where + "running variance must be positive");
                        break;
                    }
                if (l.epsilon <= 0.0f) fail(i, where + "epsilon must be positive");
                break;
            }
            case LayerKind::ReLU:
                break;
            case LayerKind::MaxPool:
            case LayerKind::AvgPool: {
                if (cur.flat) {
                    fail(i, where + "input is flattened");
                    return false;
                }
                if (l.pool_k < 1 || l.pool_s < 1) {
                    fail(i, where + "kernel and stride must be >= 1");
                    return false;
                }
                if (cur.s.h < l.pool_k || cur.s.w < l.pool_k) {
                    fail(i, where + "window exceeds input");
                    return false;
                }
                cur.s.h = (cur.s.h - l.pool_k) / l.pool_s + 1;
                cur.s.w = (cur.s.w - l.pool_k) / l.pool_s + 1;
                break;
            }
            case LayerKind::Flatten: {
                if (cur.flat) {
                    fail(i, where + "input is already flat");
                    return false;
                }
                cur.s = Shape4{1, cur.s.c * cur.s.h * cur.s.w, 1, 1};
                cur.flat = true;
                break;
            }
            case LayerKind::Linear: {
                if (!cur.flat) {
                    fail(i, where + "requires flattened input");
                    return false;
                }
                if (l.weight.ndim() != 2) {
                    fail(i, where + "weight must be 2-d (out,in)");
                    return false;
                }
                int64_t out_f = l.weight.shape[0], in_f = l.weight.shape[1];
                if (in_f != cur.s.c) {
                    fail(i, where + "expects " + std::to_string(in_f) + " input features, got " +
                                std::to_string(cur.s.c));
                    return false;
                }
                if (l.bias && (l.bias->ndim() != 1 || l.bias->shape[0] != out_f)) {
                    fail(i, where + "bias length must equal output features");
                    return false;
                }
                cur.s.c = out_f;
                info.last_weighted = i;
                break;
            }
        }
        info.out_shape.push_back(cur);
    }

    // Unit discovery: every conv must head a conv -> bn -> relu triple.
    for (int i = 0; i < n; ++i) {
        if (g.layers[i].kind != LayerKind::Conv2d) continue;
        if (i + 1 >= n || g.layers[i + 1].kind != LayerKind::BatchNorm) {
            fail(i, at_layer(i, LayerKind::Conv2d) + "not followed by batchnorm");
            continue;
        }
        if (i + 2 >= n || g.layers[i + 2].kind != LayerKind::ReLU) {
            fail(i, at_layer(i, LayerKind::Conv2d) + "conv+batchnorm not followed by relu");
            continue;
        }
        Unit u;
        u.conv = i;
        u.bn = i + 1;
        u.relu = i + 2;
        u.channels = static_cast<int>(g.layers[i].weight.shape[0]);
        for (int j = i + 3; j < n; ++j) {
            LayerKind k = g.layers[j].kind;
            if (k == LayerKind::Conv2d || k == LayerKind::Linear) {
                u.consumer = j;
                break;
            }
            // pooling / flatten / extra relu pass channels through untouched
        }
        u.prunable = u.consumer != -1;
        info.units.push_back(u);
    }
    // A unit feeding the network's final weighted layer stays intact: dropping
    // its channels would remove direct inputs of the output logits.
    for (Unit& u : info.units)
        if (u.consumer == info.last_weighted) u.prunable = false;

    // Residual links: both ends keep their channels, so neither is prunable.
    const int nu = static_cast<int>(info.units.size());
    for (const ResidualLink& rl : g.residual_links) {
        if (rl.from_unit < 0 || rl.from_unit >= nu || rl.to_unit < 0 || rl.to_unit >= nu) {
            fail(-1, "residual link (" + std::to_string(rl.from_unit) + " -> " +
                         std::to_string(rl.to_unit) + ") references missing unit");
            continue;
        }
        if (rl.from_unit >= rl.to_unit) {
            fail(-1, "residual link must run forward, got " + std::to_string(rl.from_unit) +
                         " -> " + std::to_string(rl.to_unit));
            continue;
        }
        Unit& a = info.units[static_cast<size_t>(rl.from_unit)];
        Unit& b = info.units[static_cast<size_t>(rl.to_unit)];
        const LayerShape& sa = info.out_shape[static_cast<size_t>(a.relu)];
        const LayerShape& sb = info.out_shape[static_cast<size_t>(b.relu)];
        if (sa.s.c != sb.s.c)
            fail(-1, "residual link (" + std::to_string(rl.from_unit) + " -> " +
                         std::to_string(rl.to_unit) + ") joins widths " + std::to_string(sa.s.c) +
                         " and " + std::to_string(sb.s.c));
        else if (sa.s.h != sb.s.h || sa.s.w != sb.s.w)
            fail(-1, "residual link (" + std::to_string(rl.from_unit) + " -> " +
                         std::to_string(rl.to_unit) + ") joins different spatial sizes");
        a.on_skip = b.on_skip = true;
        a.prunable = b.prunable = false;
    }
    return true;
}

}  // namespace

std::vector<GraphIssue> check_graph(const ModelGraph& g) {
    GraphInfo info;
    std::vector<GraphIssue> issues;
    analyze(g, info, issues);
    return issues;
}

GraphInfo validate(const ModelGraph& g) {
    GraphInfo info;
    std::vector<GraphIssue> issues;
    analyze(g, info, issues);
    if (!issues.empty()) {
        const GraphIssue& first = issues.front();
        std::string msg = first.message;
        if (issues.size() > 1)
            msg += " (+" + std::to_string(issues.size() - 1) + " more issues)";
        throw GraphError(msg);
    }
    return info;
}

CostReport count_cost(const ModelGraph& g, const Shape4& input) {
    ModelGraph probe = g;
    probe.input_shape = input;
    GraphInfo info = validate(probe);

    CostReport r;
    LayerShape cur{Shape4{1, input.c, input.h, input.w}, false};
    for (int i = 0; i < static_cast<int>(g.layers.size()); ++i) {
        const Layer& l = g.layers[i];
        LayerCost lc;
        lc.layer = i;
        const LayerShape& out = info.out_shape[static_cast<size_t>(i)];
        switch (l.kind) {
            case LayerKind::Conv2d: {
                const auto& ws = l.weight.shape;
                uint64_t out_c = static_cast<uint64_t>(ws[0]);
                uint64_t in_c = static_cast<uint64_t>(ws[1]);
                uint64_t kk = static_cast<uint64_t>(ws[2] * ws[3]);
                lc.flops = out_c * in_c * kk * static_cast<uint64_t>(out.s.h * out.s.w);
                lc.params = static_cast<uint64_t>(l.weight.size()) +
                            (l.bias ? static_cast<uint64_t>(l.bias->size()) : 0);
                break;
            }
            case LayerKind::Linear: {
                lc.flops = static_cast<uint64_t>(l.weight.size());
                lc.params = static_cast<uint64_t>(l.weight.size()) +
                            (l.bias ? static_cast<uint64_t>(l.bias->size()) : 0);
                break;
            }
            case LayerKind::BatchNorm:
                // scale and shift are the learned tensors; running stats are buffers
                lc.params = static_cast<uint64_t>(l.gamma.size() + l.beta.size());
                break;
            default:
                break;
        }
        r.flops += lc.flops;
        r.params += lc.params;
        r.per_layer.push_back(lc);
        cur = out;
    }
    return r;
}

CostReport count_cost(const ModelGraph& g) { return count_cost(g, g.input_shape); }

Mat downstream_weights(const ModelGraph& g, const GraphInfo& info, int unit) {
    const Unit& u = info.unit(unit);
    if (u.consumer < 0)
        throw StructureError("unit " + std::to_string(unit) +
                             " has no consumer layer to aggregate");
    const Layer& c = g.layers[static_cast<size_t>(u.consumer)];
    const int64_t ch = u.channels;

    if (c.kind == LayerKind::Conv2d) {
        const auto& ws = c.weight.shape;
        int64_t out_c = ws[0], in_c = ws[1], kh = ws[2], kw = ws[3];
        if (in_c != ch)
            throw StructureError("consumer of unit " + std::to_string(unit) + " takes " +
                                 std::to_string(in_c) + " channels, unit has " +
                                 std::to_string(ch));
        Mat m(out_c, ch);
        for (int64_t j = 0; j < out_c; ++j)
            for (int64_t k = 0; k < ch; ++k) {
                double s = 0.0;
                const float* w = c.weight.data.data() + ((j * in_c + k) * kh * kw);
                for (int64_t t = 0; t < kh * kw; ++t) s += static_cast<double>(w[t]);
                m.at(j, k) = s;
            }
        return m;
    }

    // Linear consumer: each unit channel occupies a contiguous run of
    // flattened inputs (channel-major flatten), one column per spatial cell.
    int64_t out_f = c.weight.shape[0], in_f = c.weight.shape[1];
    if (in_f % ch != 0)
        throw StructureError("consumer of unit " + std::to_string(unit) + " takes " +
                             std::to_string(in_f) + " features, not a multiple of " +
                             std::to_string(ch) + " channels");
    int64_t hw = in_f / ch;
    Mat m(out_f, ch);
    for (int64_t j = 0; j < out_f; ++j)
        for (int64_t k = 0; k < ch; ++k) {
            double s = 0.0;
            for (int64_t t = k * hw; t < (k + 1) * hw; ++t)
                s += static_cast<double>(c.weight.at2(j, t));
            m.at(j, k) = s;
        }
    return m;
}

Mat downstream_weights(const ModelGraph& g, int unit) {
    GraphInfo info = validate(g);
    return downstream_weights(g, info, unit);
}

}  // namespace fsm
