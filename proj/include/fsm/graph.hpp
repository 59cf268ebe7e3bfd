#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fsm/tensor.hpp"

namespace fsm {

enum class LayerKind { Conv2d, BatchNorm, ReLU, MaxPool, AvgPool, Flatten, Linear };

const char* layer_kind_name(LayerKind k);

/// One layer of the network. Which fields are meaningful depends on kind:
///   Conv2d    weight (out,in,kh,kw), optional bias (out), stride, padding
///   BatchNorm gamma/beta/running_mean/running_var (channels), epsilon
///   Linear    weight (out,in), optional bias (out)
///   Max/AvgPool  pool_k, pool_s
struct Layer {
    LayerKind kind = LayerKind::ReLU;

    Tensor weight;
    std::optional<Tensor> bias;
    int stride = 1;
    int padding = 0;

    Tensor gamma, beta, running_mean, running_var;
    float epsilon = 1e-5f;

    int pool_k = 2;
    int pool_s = 2;
};

Layer conv2d(Tensor weight, std::optional<Tensor> bias, int stride = 1, int padding = 0);
Layer batchnorm(Tensor gamma, Tensor beta, Tensor running_mean, Tensor running_var,
                float epsilon = 1e-5f);
Layer relu();
Layer maxpool(int k, int s);
Layer avgpool(int k, int s);
Layer flatten();
Layer linear(Tensor weight, std::optional<Tensor> bias);

/// Identity skip: output of unit `from_unit` is added to the output of
/// unit `to_unit`. Both units must have equal channel counts and equal
/// spatial extents.
struct ResidualLink {
    int from_unit = -1;
    int to_unit = -1;
};

struct ModelGraph {
    std::vector<Layer> layers;
    std::vector<ResidualLink> residual_links;
    Shape4 input_shape;  // n is ignored; c/h/w describe one sample
};

/// A Conv2d -> BatchNorm -> ReLU triple, the unit of pruning.
struct Unit {
    int conv = -1;
    int bn = -1;
    int relu = -1;
    int consumer = -1;  // next weighted layer fed by this unit's output, -1 if none
    int channels = 0;
    bool prunable = false;
    bool on_skip = false;
};

struct LayerShape {
    Shape4 s;
    bool flat = false;  // true after Flatten; s.c holds the feature count
};

struct GraphInfo {
    std::vector<Unit> units;
    std::vector<LayerShape> out_shape;  // per layer
    int last_weighted = -1;

    const Unit& unit(int idx) const;
    int unit_of_bn(int layer) const;  // unit whose bn is `layer`, -1 if none
};

struct GraphIssue {
    int layer = -1;
    std::string message;
};

/// All structural problems found; empty means the graph is valid.
std::vector<GraphIssue> check_graph(const ModelGraph& g);

/// Shape inference + unit discovery. Throws GraphError on the first issue.
GraphInfo validate(const ModelGraph& g);

struct LayerCost {
    int layer = -1;
    uint64_t flops = 0;   // multiply-accumulates per sample
    uint64_t params = 0;
};

struct CostReport {
    uint64_t flops = 0;
    uint64_t params = 0;
    std::vector<LayerCost> per_layer;
};

CostReport count_cost(const ModelGraph& g, const Shape4& input);
CostReport count_cost(const ModelGraph& g);

/// Dense row-major f64 matrix for aggregation math.
struct Mat {
    int64_t rows = 0, cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), 0.0) {}
    double& at(int64_t r, int64_t c) { return v[r * cols + c]; }
    double at(int64_t r, int64_t c) const { return v[r * cols + c]; }
};

/// Aggregated consumer weights W(j,k): the summed kernel weight through
/// which channel k of `unit` feeds channel j of the consumer layer.
/// Spatial kernel elements are summed; for a linear consumer the columns
/// covering channel k's spatial positions are summed. Pooling layers in
/// between do not alter the aggregation.
Mat downstream_weights(const ModelGraph& g, int unit);
Mat downstream_weights(const ModelGraph& g, const GraphInfo& info, int unit);

}  // namespace fsm
