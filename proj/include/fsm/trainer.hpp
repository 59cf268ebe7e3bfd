#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsm/graph.hpp"
#include "fsm/io.hpp"
#include "fsm/tensor.hpp"

namespace fsm {

/// SGD settings. lr_steps lists the epochs at which the learning rate is
/// multiplied by 0.1 (each listed epoch and everything after it runs at the
/// decayed rate). A zero learning rate is accepted and makes every step a
/// no-op, which the tests rely on.
struct TrainConfig {
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    int64_t batch_size = 64;
    int64_t epochs = 1;
    std::vector<int64_t> lr_steps;
    uint64_t seed = 0;
};

struct LossPoint {
    int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    ModelGraph graph;
    std::vector<LossPoint> curve;  // one entry per optimization step
};

/// Pointers to every learnable tensor in canonical layer order: conv weight
/// then bias, bn scale then shift, linear weight then bias. Running
/// statistics are not learnable.
std::vector<Tensor*> trainable_params(ModelGraph& g);
std::vector<const Tensor*> trainable_params(const ModelGraph& g);

/// Training-mode forward (batch statistics in BN) plus full backward.
/// Returns the mean softmax cross-entropy over the batch; fills `grads`
/// aligned with trainable_params. Running statistics are left untouched.
double loss_and_gradients(const ModelGraph& g, const Tensor& images,
                          const std::vector<int>& labels, std::vector<Tensor>& grads);

/// SGD with momentum over shuffled mini-batches. BN layers normalize with
/// batch statistics and update their running statistics with momentum 0.1
/// (population variance). Deterministic for a fixed seed. Throws TrainError
/// with the step index if the loss turns non-finite.
TrainResult train(const ModelGraph& g, const Dataset& ds, const TrainConfig& cfg);

/// train() with the epoch budget overridden; epochs = 0 returns the graph
/// unchanged. All parameters stay trainable.
ModelGraph finetune_layer(const ModelGraph& g, const Dataset& ds, int64_t epochs,
                          const TrainConfig& cfg);

/// Loss curve as "step,loss,lr" rows.
void save_loss_csv(const std::vector<LossPoint>& curve, const std::string& path);

}  // namespace fsm
