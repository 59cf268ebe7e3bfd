#include "fsm/models.hpp"

#include <cmath>

#include "fsm/rng.hpp"

namespace fsm {

namespace {

Tensor he_conv(Rng& rng, int64_t out_c, int64_t in_c, int64_t k) {
    Tensor w({out_c, in_c, k, k}, 0.0f);
    double sd = std::sqrt(2.0 / static_cast<double>(in_c * k * k));
    for (float& v : w.data) v = static_cast<float>(rng.gaussian() * sd);
    return w;
}

Tensor he_linear(Rng& rng, int64_t out_f, int64_t in_f) {
    Tensor w({out_f, in_f}, 0.0f);
    double sd = std::sqrt(2.0 / static_cast<double>(in_f));
    for (float& v : w.data) v = static_cast<float>(rng.gaussian() * sd);
    return w;
}

void push_unit(ModelGraph& g, Rng& rng, int64_t in_c, int64_t out_c) {
    g.layers.push_back(conv2d(he_conv(rng, out_c, in_c, 3), Tensor({out_c}, 0.0f), 1, 1));
    g.layers.push_back(batchnorm(Tensor({out_c}, 1.0f), Tensor({out_c}, 0.0f),
                                 Tensor({out_c}, 0.0f), Tensor({out_c}, 1.0f)));
    g.layers.push_back(relu());
}

}  // namespace

ModelGraph vgg8(uint64_t seed, int num_classes) {
    Rng rng(seed);
    ModelGraph g;
    g.input_shape = Shape4{1, 3, 32, 32};
    push_unit(g, rng, 3, 16);
    push_unit(g, rng, 16, 16);
    g.layers.push_back(maxpool(2, 2));
    push_unit(g, rng, 16, 32);
    push_unit(g, rng, 32, 32);
    g.layers.push_back(maxpool(2, 2));
    push_unit(g, rng, 32, 64);
    push_unit(g, rng, 64, 64);
    g.layers.push_back(maxpool(2, 2));
    g.layers.push_back(flatten());
    g.layers.push_back(linear(he_linear(rng, 128, 64 * 4 * 4), Tensor({128}, 0.0f)));
    g.layers.push_back(relu());
    g.layers.push_back(linear(he_linear(rng, num_classes, 128), Tensor({num_classes}, 0.0f)));
    return g;
}

ModelGraph tinynet(uint64_t seed, int num_classes) {
    Rng rng(seed);
    ModelGraph g;
    g.input_shape = Shape4{1, 3, 32, 32};
    push_unit(g, rng, 3, 8);
    g.layers.push_back(maxpool(2, 2));
    push_unit(g, rng, 8, 16);
    g.layers.push_back(maxpool(2, 2));
    push_unit(g, rng, 16, 16);
    g.layers.push_back(maxpool(2, 2));
    g.layers.push_back(flatten());
    g.layers.push_back(linear(he_linear(rng, num_classes, 16 * 4 * 4), Tensor({num_classes}, 0.0f)));
    return g;
}

void reinit(ModelGraph& g, uint64_t seed) {
    Rng rng(seed);
    for (Layer& l : g.layers) {
        switch (l.kind) {
            case LayerKind::Conv2d: {
                const auto& ws = l.weight.shape;
                double sd = std::sqrt(2.0 / static_cast<double>(ws[1] * ws[2] * ws[3]));
                for (float& v : l.weight.data) v = static_cast<float>(rng.gaussian() * sd);
                if (l.bias)
                    for (float& v : l.bias->data) v = 0.0f;
                break;
            }
            case LayerKind::Linear: {
                double sd = std::sqrt(2.0 / static_cast<double>(l.weight.shape[1]));
                for (float& v : l.weight.data) v = static_cast<float>(rng.gaussian() * sd);
                if (l.bias)
                    for (float& v : l.bias->data) v = 0.0f;
                break;
            }
            case LayerKind::BatchNorm:
                for (float& v : l.gamma.data) v = 1.0f;
                for (float& v : l.beta.data) v = 0.0f;
                for (float& v : l.running_mean.data) v = 0.0f;
                for (float& v : l.running_var.data) v = 1.0f;
                break;
            default:
                break;
        }
    }
}

}  // namespace fsm
