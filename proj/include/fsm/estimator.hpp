#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fsm/graph.hpp"
#include "fsm/inference.hpp"

namespace fsm {

/// E[max(0, Y)] for Y ~ N(beta, gamma^2), in closed form:
/// beta*Phi(beta/gamma) + gamma*phi(beta/gamma). Result is >= 0 and >= beta.
/// gamma <= 0 raises DomainError.
double relu_gauss_mean(double beta, double gamma);

/// Analytic post-ReLU mean of one unit channel from its BN parameters,
/// modeling the post-BN activation as N(beta, gamma^2). Degenerate spread
/// (|gamma| < 1e-12) collapses to max(beta, 0).
double post_relu_channel_mean(const Layer& bn, int64_t channel);

struct ChannelEstimate {
    int unit = -1;
    std::vector<double> post_relu_mean;   // per unit channel
    std::vector<double> next_input_mean;  // per consumer output channel
};

/// Propagates analytic post-ReLU means of the kept channels through the
/// aggregated consumer weights (plus consumer bias): the estimated mean input
/// of each consumer channel under the mask. Mask must keep at least one
/// channel.
ChannelEstimate estimate_layer_means(const ModelGraph& g, int unit,
                                     const std::vector<uint8_t>& keep_mask);
ChannelEstimate estimate_layer_means(const ModelGraph& g, const GraphInfo& info, int unit,
                                     const std::vector<uint8_t>& keep_mask);

/// Correction ratios lambda = analytic full-mask estimate / measured mean,
/// per (unit, consumer channel). Channels whose measured mean is within
/// 1e-6 of zero, or whose ratio falls outside (0.1, 10), carry corrected=0
/// and are never divided.
struct LambdaTable {
    struct Entry {
        std::vector<double> lambda;
        std::vector<uint8_t> corrected;
    };
    std::map<int, Entry> by_unit;

    bool has(int unit) const { return by_unit.count(unit) != 0; }
    const Entry& at(int unit) const;  // CalibrationError when missing
};

/// Requires stats collected on this same (unpruned) graph; covers every unit
/// that has a consumer.
LambdaTable calibrate_lambda(const ModelGraph& g, const EmpiricalStats& stats);

struct ShiftEstimate {
    int unit = -1;
    std::vector<double> delta_e;  // corrected mean shift per consumer channel
    double sum_abs = 0.0;
    double std_factor = 1.0;  // sqrt(kept / total)
};

/// Corrected feature shift a mask would cause at the consumer:
/// (full estimate - masked estimate) / lambda per channel.
ShiftEstimate shift_of_plan(const ModelGraph& g, int unit, const std::vector<uint8_t>& keep_mask,
                            const LambdaTable& lt);

/// Lambda archive: <stem>.manifest + <stem>.blob of f64 values, same
/// offset/checksum conventions as the model archive.
void save_lambda(const LambdaTable& lt, const std::string& stem);
LambdaTable load_lambda(const std::string& stem);

}  // namespace fsm
