#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fsm/estimator.hpp"
#include "fsm/graph.hpp"
#include "fsm/inference.hpp"

namespace fsm {

struct ScoreReport {
    int unit = -1;
    std::vector<double> delta;  // per channel, >= 0
    std::vector<int> ranking;   // ascending by delta, ties broken by lower index
};

/// delta_k = sum_j |W(j,k)| * m_k with m_k the analytic post-ReLU channel
/// mean and W the aggregated consumer weights. The correction table is
/// accepted for interface uniformity but never read: corrections apply to
/// shift estimates, not to the ranking.
ScoreReport score_unit(const ModelGraph& g, int unit, const LambdaTable& lt);

/// Variant scoring against the pre-relu channel mean (the bn shift) instead
/// of the rectified one. Ablation path.
ScoreReport score_unit_post_bn(const ModelGraph& g, int unit);

/// Same aggregation with measured post-ReLU means (clamped at zero) in place
/// of the analytic ones. Ablation path.
ScoreReport score_unit_empirical(const ModelGraph& g, int unit, const EmpiricalStats& stats);

/// Magnitude baseline: delta_k = L1 norm of the unit conv's filter k.
ScoreReport score_unit_l1(const ModelGraph& g, int unit);

/// Keep mask dropping floor(rate * d) channels with the smallest scores
/// (ties: lower index goes first); `reverse` drops the largest-scored
/// instead. Rate must lie in [0,1); a drop count that would empty the unit
/// raises SelectionError.
std::vector<uint8_t> select_channels(const ScoreReport& report, double rate,
                                     bool reverse = false);

struct PrunePlan {
    struct UnitPlan {
        std::vector<uint8_t> keep_mask;
        int64_t d = 0;      // original channel count
        int64_t d_hat = 0;  // kept channel count, >= 1
    };
    std::map<int, UnitPlan> by_unit;
    bool use_lambda = true;
    double var_coeff = 1.0;

    void set_mask(int unit, std::vector<uint8_t> mask);  // fills d and d_hat
};

/// New graph with the dropped channels removed from the unit's conv and BN
/// and the matching input slices removed from the consumer (conv input
/// channels, or a linear layer's column groups). Unit must be prunable.
ModelGraph apply_prune(const ModelGraph& g, int unit, const std::vector<uint8_t>& keep_mask);

/// New graph with the consumer's BN running statistics adjusted for the
/// prune already applied to `unit`: running_mean <- masked analytic estimate
/// divided by the channel's correction ratio (skipped where the ratio is
/// flagged unreliable, or taken raw when the plan disables corrections);
/// running_var <- var_coeff * (d_hat/d) * running_var. Scale and shift are
/// untouched. The consumer must be a conv (so it carries a BN).
ModelGraph distribution_optimize(const ModelGraph& g, int unit, const PrunePlan& plan,
                                 const LambdaTable& lt);

std::string report_to_json(const ScoreReport& report);
std::string plan_to_json(const PrunePlan& plan);
PrunePlan plan_from_json(const std::string& text);

}  // namespace fsm
