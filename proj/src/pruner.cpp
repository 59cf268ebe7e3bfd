#include "fsm/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "fsm/error.hpp"

namespace fsm {

using nlohmann::json;

namespace {

void check_mask(const std::vector<uint8_t>& mask, int channels) {
    if (static_cast<int>(mask.size()) != channels)
        throw DomainError("mask has " + std::to_string(mask.size()) + " entries for " +
                          std::to_string(channels) + " channels");
    int kept = 0;
    for (uint8_t m : mask) kept += m ? 1 : 0;
    if (kept == 0) throw DomainError("mask keeps no channels");
}

std::vector<int> rank_ascending(const std::vector<double>& delta) {
    std::vector<int> order(delta.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return delta[static_cast<size_t>(a)] < delta[static_cast<size_t>(b)];
    });
    return order;
}

ScoreReport score_from_means(const ModelGraph& g, const GraphInfo& info, int unit,
                             const std::vector<double>& means) {
    Mat w = downstream_weights(g, info, unit);
    ScoreReport r;
    r.unit = unit;
    r.delta.assign(means.size(), 0.0);
    for (size_t k = 0; k < means.size(); ++k) {
        double acc = 0.0;
        for (int64_t j = 0; j < w.rows; ++j)
            acc += std::fabs(w.at(j, static_cast<int64_t>(k)));
        r.delta[k] = acc * means[k];
    }
    r.ranking = rank_ascending(r.delta);
    return r;
}

Tensor keep_rows(const Tensor& t, const std::vector<uint8_t>& mask, int64_t kept) {
    // drops entries along the leading axis; works for any trailing block size
    int64_t block = 1;
    for (size_t d = 1; d < t.shape.size(); ++d) block *= t.shape[d];
    std::vector<int64_t> shape = t.shape;
    shape[0] = kept;
    Tensor out(std::move(shape), 0.0f);
    float* dst = out.data.data();
    for (int64_t r = 0; r < t.shape[0]; ++r) {
        if (!mask[static_cast<size_t>(r)]) continue;
        const float* src = t.data.data() + r * block;
        std::copy(src, src + block, dst);
        dst += block;
    }
    return out;
}

Tensor keep_conv_inputs(const Tensor& w, const std::vector<uint8_t>& mask, int64_t kept) {
    const int64_t out_c = w.shape[0], in_c = w.shape[1], hw = w.shape[2] * w.shape[3];
    Tensor out({out_c, kept, w.shape[2], w.shape[3]}, 0.0f);
    float* dst = out.data.data();
    for (int64_t o = 0; o < out_c; ++o)
        for (int64_t i = 0; i < in_c; ++i) {
            if (!mask[static_cast<size_t>(i)]) continue;
            const float* src = w.data.data() + (o * in_c + i) * hw;
            std::copy(src, src + hw, dst);
            dst += hw;
        }
    return out;
}

Tensor keep_linear_columns(const Tensor& w, const std::vector<uint8_t>& mask, int64_t kept,
                           int64_t channels) {
    const int64_t out_f = w.shape[0], in_f = w.shape[1];
    const int64_t hw = in_f / channels;  // divisibility checked by the caller
    Tensor out({out_f, kept * hw}, 0.0f);
    float* dst = out.data.data();
    for (int64_t o = 0; o < out_f; ++o)
        for (int64_t c = 0; c < channels; ++c) {
            if (!mask[static_cast<size_t>(c)]) continue;
            const float* src = w.data.data() + o * in_f + c * hw;
            std::copy(src, src + hw, dst);
            dst += hw;
        }
    return out;
}

}  // namespace

ScoreReport score_unit(const ModelGraph& g, int unit, const LambdaTable&) {
    GraphInfo info = validate(g);
    const Unit& u = info.unit(unit);
    const Layer& bn = g.layers[static_cast<size_t>(u.bn)];
    std::vector<double> means(static_cast<size_t>(u.channels));
    for (int64_t k = 0; k < u.channels; ++k)
        means[static_cast<size_t>(k)] = post_relu_channel_mean(bn, k);
    return score_from_means(g, info, unit, means);
}

ScoreReport score_unit_post_bn(const ModelGraph& g, int unit) {
    GraphInfo info = validate(g);
    const Unit& u = info.unit(unit);
    const Layer& bn = g.layers[static_cast<size_t>(u.bn)];
    // the pre-relu channel mean is the bn shift itself; the score folds its
    // sign into the absolute value
    std::vector<double> means(static_cast<size_t>(u.channels));
    for (int64_t k = 0; k < u.channels; ++k)
        means[static_cast<size_t>(k)] =
            std::fabs(static_cast<double>(bn.beta.data[static_cast<size_t>(k)]));
    return score_from_means(g, info, unit, means);
}

ScoreReport score_unit_empirical(const ModelGraph& g, int unit, const EmpiricalStats& stats) {
    GraphInfo info = validate(g);
    const Unit& u = info.unit(unit);
    const std::vector<double>& m = stats.at(u.relu).mean;
    if (m.size() != static_cast<size_t>(u.channels))
        throw StatsError("layer " + std::to_string(u.relu) + " statistics cover " +
                         std::to_string(m.size()) + " channels, expected " +
                         std::to_string(u.channels));
    std::vector<double> means(m.size());
    for (size_t k = 0; k < m.size(); ++k) means[k] = m[k] > 0.0 ? m[k] : 0.0;
    return score_from_means(g, info, unit, means);
}

ScoreReport score_unit_l1(const ModelGraph& g, int unit) {
    GraphInfo info = validate(g);
    const Unit& u = info.unit(unit);
    const Tensor& w = g.layers[static_cast<size_t>(u.conv)].weight;
    const int64_t block = w.shape[1] * w.shape[2] * w.shape[3];
    ScoreReport r;
    r.unit = unit;
    r.delta.assign(static_cast<size_t>(u.channels), 0.0);
    for (int64_t k = 0; k < u.channels; ++k) {
        double acc = 0.0;
        const float* f = w.data.data() + k * block;
        for (int64_t i = 0; i < block; ++i) acc += std::fabs(static_cast<double>(f[i]));
        r.delta[static_cast<size_t>(k)] = acc;
    }
    r.ranking = rank_ascending(r.delta);
    return r;
}

std::vector<uint8_t> select_channels(const ScoreReport& report, double rate, bool reverse) {
    const int64_t d = static_cast<int64_t>(report.delta.size());
    if (report.ranking.size() != report.delta.size())
        throw DomainError("report ranking and scores disagree on channel count");
    if (!(rate >= 0.0 && rate < 1.0))
        throw DomainError("prune rate must lie in [0,1), got " + std::to_string(rate));
    const int64_t n_drop = static_cast<int64_t>(std::floor(rate * static_cast<double>(d)));
    if (n_drop >= d)
        throw SelectionError("dropping " + std::to_string(n_drop) + " of " + std::to_string(d) +
                             " channels would empty the unit");
    std::vector<uint8_t> mask(static_cast<size_t>(d), 1);
    for (int64_t i = 0; i < n_drop; ++i) {
        const size_t pos = reverse ? static_cast<size_t>(d - 1 - i) : static_cast<size_t>(i);
        mask[static_cast<size_t>(report.ranking[pos])] = 0;
    }
    return mask;
}

void PrunePlan::set_mask(int unit, std::vector<uint8_t> mask) {
    UnitPlan up;
    up.d = static_cast<int64_t>(mask.size());
    for (uint8_t m : mask) up.d_hat += m ? 1 : 0;
    if (up.d_hat == 0) throw DomainError("plan mask keeps no channels");
    up.keep_mask = std::move(mask);
    by_unit[unit] = std::move(up);
}

ModelGraph apply_prune(const ModelGraph& g, int unit, const std::vector<uint8_t>& keep_mask) {
    GraphInfo info = validate(g);
    const Unit& u = info.unit(unit);
    check_mask(keep_mask, u.channels);
    if (!u.prunable) {
        if (u.on_skip)
            throw StructureError("unit " + std::to_string(unit) +
                                 " carries a residual connection and cannot be pruned");
        throw StructureError("unit " + std::to_string(unit) +
                             " feeds the network output and cannot be pruned");
    }
    int64_t kept = 0;
    for (uint8_t m : keep_mask) kept += m ? 1 : 0;

    ModelGraph out = g;
    Layer& conv = out.layers[static_cast<size_t>(u.conv)];
    conv.weight = keep_rows(conv.weight, keep_mask, kept);
    if (conv.bias) conv.bias = keep_rows(*conv.bias, keep_mask, kept);

    Layer& bn = out.layers[static_cast<size_t>(u.bn)];
    bn.gamma = keep_rows(bn.gamma, keep_mask, kept);
    bn.beta = keep_rows(bn.beta, keep_mask, kept);
    bn.running_mean = keep_rows(bn.running_mean, keep_mask, kept);
    bn.running_var = keep_rows(bn.running_var, keep_mask, kept);

    Layer& cons = out.layers[static_cast<size_t>(u.consumer)];
    if (cons.kind == LayerKind::Conv2d) {
        cons.weight = keep_conv_inputs(cons.weight, keep_mask, kept);
    } else {
        if (cons.weight.shape[1] % u.channels != 0)
            throw StructureError("consumer features are not channel-aligned");
        cons.weight = keep_linear_columns(cons.weight, keep_mask, kept, u.channels);
    }
    validate(out);
    return out;
}

ModelGraph distribution_optimize(const ModelGraph& g, int unit, const PrunePlan& plan,
                                 const LambdaTable& lt) {
    GraphInfo info = validate(g);
    const Unit& u = info.unit(unit);
    if (u.consumer < 0)
        throw StructureError("unit " + std::to_string(unit) + " has no consumer to adjust");
    auto it = plan.by_unit.find(unit);
    if (it == plan.by_unit.end())
        throw DomainError("plan has no entry for unit " + std::to_string(unit));
    const PrunePlan::UnitPlan& up = it->second;
    if (up.d_hat != u.channels)
        throw DomainError("plan expects " + std::to_string(up.d_hat) +
                          " kept channels but unit " + std::to_string(unit) + " has " +
                          std::to_string(u.channels));
    const Layer& cons = g.layers[static_cast<size_t>(u.consumer)];
    if (cons.kind != LayerKind::Conv2d)
        throw StructureError("consumer of unit " + std::to_string(unit) +
                             " has no batchnorm to adjust");

    // the graph is already pruned, so the surviving channels ARE the mask
    std::vector<uint8_t> full(static_cast<size_t>(u.channels), 1);
    ChannelEstimate est = estimate_layer_means(g, info, unit, full);

    const LambdaTable::Entry* le = nullptr;
    if (plan.use_lambda) {
        le = &lt.at(unit);  // CalibrationError when missing
        if (le->lambda.size() != est.next_input_mean.size())
            throw CalibrationError("correction table size mismatch for unit " +
                                   std::to_string(unit));
    }

    const double factor =
        plan.var_coeff * static_cast<double>(up.d_hat) / static_cast<double>(up.d);
    if (!(factor > 0.0))
        throw DomainError("variance factor must be positive, got " + std::to_string(factor));

    ModelGraph out = g;
    Layer& bn = out.layers[static_cast<size_t>(u.consumer) + 1];  // conv heads conv->bn->relu
    for (size_t j = 0; j < est.next_input_mean.size(); ++j) {
        if (le) {
            if (!le->corrected[j]) continue;  // no trustworthy ratio, leave the mean alone
            bn.running_mean.data[j] = static_cast<float>(est.next_input_mean[j] / le->lambda[j]);
        } else {
            bn.running_mean.data[j] = static_cast<float>(est.next_input_mean[j]);
        }
    }
    for (float& v : bn.running_var.data) v = static_cast<float>(v * factor);
    validate(out);
    return out;
}

std::string report_to_json(const ScoreReport& report) {
    json j;
    j["unit"] = report.unit;
    j["delta"] = report.delta;
    j["ranking"] = report.ranking;
    return j.dump(2) + "\n";
}

std::string plan_to_json(const PrunePlan& plan) {
    json units = json::array();
    for (const auto& [unit, up] : plan.by_unit) {
        json ju;
        ju["unit"] = unit;
        ju["d"] = up.d;
        ju["d_hat"] = up.d_hat;
        ju["keep_mask"] = up.keep_mask;
        units.push_back(std::move(ju));
    }
    json j;
    j["use_lambda"] = plan.use_lambda;
    j["var_coeff"] = plan.var_coeff;
    j["units"] = std::move(units);
    return j.dump(2) + "\n";
}

PrunePlan plan_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed plan: ") + e.what());
    }
    PrunePlan plan;
    try {
        plan.use_lambda = j.at("use_lambda").get<bool>();
        plan.var_coeff = j.at("var_coeff").get<double>();
        if (!(plan.var_coeff > 0.0)) throw ConfigError("var_coeff must be positive");
        for (const json& ju : j.at("units")) {
            const int unit = ju.at("unit").get<int>();
            std::vector<uint8_t> mask = ju.at("keep_mask").get<std::vector<uint8_t>>();
            const int64_t d = ju.at("d").get<int64_t>();
            const int64_t d_hat = ju.at("d_hat").get<int64_t>();
            plan.set_mask(unit, std::move(mask));
            const PrunePlan::UnitPlan& up = plan.by_unit[unit];
            if (up.d != d || up.d_hat != d_hat)
                throw ConfigError("plan counts disagree with mask for unit " +
                                  std::to_string(unit));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed plan: ") + e.what());
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    return plan;
}

}  // namespace fsm
