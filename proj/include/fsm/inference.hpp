#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "fsm/graph.hpp"
#include "fsm/io.hpp"
#include "fsm/tensor.hpp"

namespace fsm {

/// Full inference pass. Batch normalization runs in inference mode on the
/// stored running statistics. Deterministic: identical inputs give
/// bit-identical outputs.
Tensor forward(const ModelGraph& g, const Tensor& batch);

/// Runs the graph only through `last_layer` (inclusive) and returns that
/// layer's output, residual additions applied.
Tensor forward_prefix(const ModelGraph& g, const Tensor& batch, int last_layer);

/// Streaming per-channel moments: count is total averaged elements
/// (samples x spatial positions); variance is the population form m2/count.
struct ChannelMoments {
    int64_t count = 0;
    std::vector<double> mean;
    std::vector<double> m2;

    std::vector<double> variance() const;
    void merge(int64_t n2, const std::vector<double>& mean2, const std::vector<double>& m2_2);
};

/// Per-channel activation statistics keyed by layer index. Every conv,
/// linear, and relu output is tapped; a unit's conv tap is its pre-BN input
/// and its relu tap is its post-ReLU output (after residual additions).
struct EmpiricalStats {
    std::map<int, ChannelMoments> by_layer;

    bool has(int layer) const { return by_layer.count(layer) != 0; }
    const ChannelMoments& at(int layer) const;
};

EmpiricalStats collect_stats(const ModelGraph& g, const Dataset& ds, int64_t batch_size = 64,
                             int64_t max_batches = -1);

/// Top-1 accuracy; argmax ties resolve to the lowest class index.
double evaluate(const ModelGraph& g, const Dataset& ds, int64_t batch_size = 128,
                int64_t max_batches = -1);

/// Sets every unit's BN running statistics to the measured statistics of its
/// conv output, unit by unit in topological order (each rewrite changes what
/// deeper units see, so each unit gets a fresh measurement pass).
void recalibrate_bn(ModelGraph& g, const Dataset& ds, int64_t batch_size = 128,
                    int64_t max_batches = -1);

/// Contiguous sample range [first, first+count) as its own tensor.
Tensor batch_slice(const Tensor& images, int64_t first, int64_t count);

}  // namespace fsm
