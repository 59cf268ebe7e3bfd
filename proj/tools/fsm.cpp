// Batch-job front end: dataset synthesis, training, scoring, pruning with
// distribution optimization, per-unit sweep curves, and estimator fidelity
// reports. Every command is deterministic for a fixed --seed and identical
// inputs; CSV and JSON outputs are byte-stable across runs.

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fsm/error.hpp"
#include "fsm/estimator.hpp"
#include "fsm/graph.hpp"
#include "fsm/inference.hpp"
#include "fsm/io.hpp"
#include "fsm/models.hpp"
#include "fsm/pruner.hpp"
#include "fsm/rng.hpp"
#include "fsm/synth.hpp"
#include "fsm/trainer.hpp"

using nlohmann::json;
using namespace fsm;

namespace {

void write_text(const std::string& path, const std::string& text) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open " + path + " for writing");
    if (!text.empty() && std::fwrite(text.data(), 1, text.size(), f) != text.size()) {
        std::fclose(f);
        throw IoError("short write to " + path);
    }
    std::fclose(f);
}

std::vector<int> prunable_units(const GraphInfo& info) {
    std::vector<int> out;
    for (size_t i = 0; i < info.units.size(); ++i)
        if (info.units[i].prunable) out.push_back(static_cast<int>(i));
    return out;
}

// unit whose conv layer is `conv`, -1 if that conv heads no unit
int unit_headed_by(const GraphInfo& info, int conv) {
    for (size_t i = 0; i < info.units.size(); ++i)
        if (info.units[i].conv == conv) return static_cast<int>(i);
    return -1;
}

// ratio 1 everywhere and nothing flagged corrected, so shift bookkeeping
// runs on raw differences when calibration is disabled
LambdaTable identity_table(const ModelGraph& g, const GraphInfo& info) {
    LambdaTable lt;
    for (size_t i = 0; i < info.units.size(); ++i) {
        const Unit& u = info.units[i];
        if (u.consumer < 0) continue;
        std::vector<uint8_t> full(static_cast<size_t>(u.channels), 1);
        ChannelEstimate est = estimate_layer_means(g, info, static_cast<int>(i), full);
        LambdaTable::Entry e;
        e.lambda.assign(est.next_input_mean.size(), 1.0);
        e.corrected.assign(est.next_input_mean.size(), 0);
        lt.by_unit[static_cast<int>(i)] = std::move(e);
    }
    return lt;
}

std::vector<int> rank_ascending(const std::vector<double>& delta) {
    std::vector<int> order(delta.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return delta[static_cast<size_t>(a)] < delta[static_cast<size_t>(b)];
    });
    return order;
}

ScoreReport random_report(int unit, int64_t channels, uint64_t seed) {
    Rng rng(seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(unit + 1)));
    ScoreReport r;
    r.unit = unit;
    r.delta.resize(static_cast<size_t>(channels));
    for (double& d : r.delta) d = rng.uniform();
    r.ranking = rank_ascending(r.delta);
    return r;
}

// reverse shares fsm's scores; the flip happens at selection time
ScoreReport score_for(const ModelGraph& g, const GraphInfo& info, int unit,
                      const std::string& method, uint64_t seed) {
    if (method == "random") return random_report(unit, info.unit(unit).channels, seed);
    if (method == "l1") return score_unit_l1(g, unit);
    if (method == "post_bn") return score_unit_post_bn(g, unit);
    return score_unit(g, unit, LambdaTable{});
}

// average ranks (1-based) with ties sharing their midpoint
std::vector<double> avg_ranks(const std::vector<double>& v) {
    std::vector<int> order = rank_ascending(v);
    std::vector<double> ranks(v.size(), 0.0);
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() &&
               v[static_cast<size_t>(order[j + 1])] == v[static_cast<size_t>(order[i])])
            ++j;
        const double shared = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[static_cast<size_t>(order[k])] = shared;
        i = j + 1;
    }
    return ranks;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = a.size();
    if (n < 2) return 1.0;
    std::vector<double> ra = avg_ranks(a), rb = avg_ranks(b);
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (ra[i] - ma) * (rb[i] - mb);
        sxx += (ra[i] - ma) * (ra[i] - ma);
        syy += (rb[i] - mb) * (rb[i] - mb);
    }
    if (sxx == 0.0 || syy == 0.0) return sxx == syy ? 1.0 : 0.0;
    return sxy / std::sqrt(sxx * syy);
}

struct CommonArgs {
    std::string model;
    std::string data;
    int64_t max_batches = -1;
    int64_t batch_size = 128;
    int64_t limit = -1;
    uint64_t seed = 0;
    bool as_json = false;
};

const std::vector<std::string> kMethodOrder = {"fsm", "reverse", "random", "l1"};

std::vector<std::string> canonical_methods(const std::vector<std::string>& req) {
    std::set<std::string> want(req.begin(), req.end());
    for (const std::string& m : want)
        if (std::find(kMethodOrder.begin(), kMethodOrder.end(), m) == kMethodOrder.end())
            throw ConfigError("unknown method '" + m + "'");
    std::vector<std::string> out;
    for (const std::string& m : kMethodOrder)
        if (want.count(m)) out.push_back(m);
    return out;
}

int run_synth(const std::string& dir, int64_t train_n, int64_t test_n, uint64_t seed) {
    synth_cifar_dir(dir, train_n, test_n, seed);
    std::printf("wrote %" PRId64 " train and %" PRId64 " test records to %s\n", train_n, test_n,
                dir.c_str());
    return 0;
}

int run_eval(const CommonArgs& c, const std::string& split) {
    ModelGraph g = load_model(c.model);
    Dataset ds = load_cifar10(c.data, split, c.limit);
    const double acc = evaluate(g, ds, c.batch_size, c.max_batches);
    const CostReport cost = count_cost(g);
    if (c.as_json) {
        json out;
        out["accuracy"] = acc;
        out["flops"] = cost.flops;
        out["params"] = cost.params;
        std::printf("%s\n", out.dump().c_str());
    } else {
        std::printf("accuracy %.6f\n", acc);
        std::printf("flops %" PRIu64 "\n", cost.flops);
        std::printf("params %" PRIu64 "\n", cost.params);
    }
    return 0;
}

int run_stats(const CommonArgs& c, const std::string& split, const std::string& out_path) {
    ModelGraph g = load_model(c.model);
    GraphInfo info = validate(g);
    Dataset ds = load_cifar10(c.data, split, c.limit);
    EmpiricalStats stats = collect_stats(g, ds, c.batch_size, c.max_batches);

    std::string csv = "unit,layer,channel,analytic,empirical,rel_error,spearman\n";
    char line[256];
    for (size_t ui = 0; ui < info.units.size(); ++ui) {
        const Unit& u = info.units[ui];
        if (u.consumer < 0) continue;
        std::vector<uint8_t> full(static_cast<size_t>(u.channels), 1);
        ChannelEstimate est = estimate_layer_means(g, info, static_cast<int>(ui), full);
        const std::vector<double>& emp = stats.at(u.consumer).mean;
        if (emp.size() != est.next_input_mean.size())
            throw StatsError("unit " + std::to_string(ui) + ": measured channel count " +
                             std::to_string(emp.size()) + " does not match the estimate");
        const double rho = spearman(est.next_input_mean, emp);
        for (size_t ch = 0; ch < emp.size(); ++ch) {
            const double a = est.next_input_mean[ch];
            const double e = emp[ch];
            const double rel = std::fabs(a - e) / std::max(std::fabs(e), 1e-9);
            std::snprintf(line, sizeof line, "%zu,%d,%zu,%.9g,%.9g,%.9g,%.6f\n", ui, u.consumer,
                          ch, a, e, rel, rho);
            csv += line;
        }
        std::printf("unit %zu: consumer layer %d, %zu channels, spearman %.4f\n", ui, u.consumer,
                    emp.size(), rho);
    }
    write_text(out_path, csv);
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

int run_score(const CommonArgs& c, const std::string& order, int unit_arg,
              const std::string& out_path) {
    ModelGraph g = load_model(c.model);
    GraphInfo info = validate(g);

    std::vector<int> units;
    if (unit_arg >= 0)
        units.push_back(unit_arg);
    else
        for (size_t i = 0; i < info.units.size(); ++i)
            if (info.units[i].consumer >= 0) units.push_back(static_cast<int>(i));

    EmpiricalStats stats;
    if (order == "empirical") {
        if (c.data.empty()) throw ConfigError("--order empirical needs --data");
        Dataset ds = load_cifar10(c.data, "train", c.limit);
        stats = collect_stats(g, ds, c.batch_size, c.max_batches);
    }

    json arr = json::array();
    for (int u : units) {
        ScoreReport r = order == "empirical" ? score_unit_empirical(g, u, stats)
                                             : score_for(g, info, u, order, c.seed);
        arr.push_back(json::parse(report_to_json(r)));
    }
    json out;
    out["order"] = order;
    out["reports"] = arr;
    const std::string text = out.dump(2) + "\n";
    if (out_path.empty())
        std::printf("%s", text.c_str());
    else {
        write_text(out_path, text);
        std::printf("wrote %zu reports to %s\n", arr.size(), out_path.c_str());
    }
    return 0;
}

struct PruneArgs {
    CommonArgs common;
    std::string rates_path;
    std::string out;
    std::string order = "fsm";
    bool do_on = true;
    int final_epochs = 0;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0;
    int64_t train_batch = 64;
    std::vector<int64_t> lr_steps;
};

int run_prune(const PruneArgs& a, RateConfig rc) {
    ModelGraph g = load_model(a.common.model);
    const Normalize* norm = rc.normalize ? &*rc.normalize : nullptr;
    Dataset train_ds = load_cifar10(a.common.data, "train", a.common.limit, norm);
    Dataset test_ds = load_cifar10(a.common.data, "test", -1, norm);

    const double acc_before = evaluate(g, test_ds, a.common.batch_size, a.common.max_batches);
    const CostReport cost_before = count_cost(g);

    PrunePlan plan;
    plan.use_lambda = rc.use_lambda;
    plan.var_coeff = rc.var_coeff;

    TrainConfig tcfg;
    tcfg.lr = a.lr;
    tcfg.momentum = a.momentum;
    tcfg.weight_decay = a.weight_decay;
    tcfg.batch_size = a.train_batch;

    json unit_rows = json::array();
    std::vector<int> order_units = prunable_units(validate(g));
    for (int unit : order_units) {
        const double rate = rc.rate_for(unit);
        GraphInfo info = validate(g);
        const Unit& u = info.unit(unit);
        if (static_cast<int64_t>(std::floor(rate * static_cast<double>(u.channels))) == 0)
            continue;
        try {
            LambdaTable lt;
            if (rc.use_lambda) {
                EmpiricalStats stats =
                    collect_stats(g, train_ds, a.train_batch, a.common.max_batches);
                lt = calibrate_lambda(g, stats);
            } else {
                lt = identity_table(g, info);
            }

            ScoreReport report = score_for(g, info, unit, a.order, rc.seed);
            std::vector<uint8_t> mask = select_channels(report, rate, a.order == "reverse");
            ShiftEstimate shift = shift_of_plan(g, unit, mask, lt);
            plan.set_mask(unit, mask);

            g = apply_prune(g, unit, mask);
            bool do_applied = false;
            if (a.do_on && unit_headed_by(info, u.consumer) >= 0) {
                g = distribution_optimize(g, unit, plan, lt);
                do_applied = true;
            }
            if (rc.finetune_epochs > 0) {
                tcfg.seed = rc.seed + static_cast<uint64_t>(unit);
                g = finetune_layer(g, train_ds, rc.finetune_epochs, tcfg);
            }

            json row;
            row["unit"] = unit;
            row["rate"] = rate;
            row["dropped"] = static_cast<int64_t>(plan.by_unit.at(unit).d -
                                                  plan.by_unit.at(unit).d_hat);
            row["kept"] = plan.by_unit.at(unit).d_hat;
            row["shift_sum"] = shift.sum_abs;
            row["do"] = do_applied;
            unit_rows.push_back(row);
        } catch (const Error& e) {
            throw Error("unit " + std::to_string(unit) + ": " + e.what());
        }
    }

    if (a.final_epochs > 0) {
        tcfg.epochs = a.final_epochs;
        tcfg.lr_steps = a.lr_steps;
        tcfg.seed = rc.seed + 9001;
        TrainResult res = train(g, train_ds, tcfg);
        g = res.graph;
        save_loss_csv(res.curve, a.out + ".loss.csv");
    }

    const double acc_after = evaluate(g, test_ds, a.common.batch_size, a.common.max_batches);
    const CostReport cost_after = count_cost(g);
    save_model(g, a.out);
    write_text(a.out + ".plan.json", plan_to_json(plan) + "\n");

    json summary;
    summary["model"] = a.common.model;
    summary["out"] = a.out;
    summary["seed"] = rc.seed;
    summary["order"] = a.order;
    summary["do"] = a.do_on;
    summary["lambda"] = rc.use_lambda;
    summary["var_coeff"] = rc.var_coeff;
    summary["finetune_epochs"] = rc.finetune_epochs;
    summary["final_epochs"] = a.final_epochs;
    summary["accuracy_before"] = acc_before;
    summary["accuracy_after"] = acc_after;
    summary["flops_before"] = cost_before.flops;
    summary["flops_after"] = cost_after.flops;
    summary["params_before"] = cost_before.params;
    summary["params_after"] = cost_after.params;
    summary["flops_reduction"] =
        1.0 - static_cast<double>(cost_after.flops) / static_cast<double>(cost_before.flops);
    summary["params_reduction"] =
        1.0 - static_cast<double>(cost_after.params) / static_cast<double>(cost_before.params);
    summary["units"] = unit_rows;
    write_text(a.out + ".summary.json", summary.dump(2) + "\n");

    if (a.common.as_json) {
        std::printf("%s\n", summary.dump().c_str());
    } else {
        std::printf("accuracy %.6f -> %.6f\n", acc_before, acc_after);
        std::printf("flops %" PRIu64 " -> %" PRIu64 " (%.1f%% reduction)\n", cost_before.flops,
                    cost_after.flops, 100.0 * summary["flops_reduction"].get<double>());
        std::printf("params %" PRIu64 " -> %" PRIu64 " (%.1f%% reduction)\n", cost_before.params,
                    cost_after.params, 100.0 * summary["params_reduction"].get<double>());
        std::printf("wrote %s.{manifest,blob,plan.json,summary.json}\n", a.out.c_str());
    }
    return 0;
}

struct CurveArgs {
    CommonArgs common;
    std::string out;
    std::vector<int> units;
    std::vector<double> rates;
    std::vector<std::string> methods = {"fsm", "reverse", "random", "l1"};
    std::string do_mode = "both";  // off rows, on rows, or both
    bool use_lambda = true;
    double var_coeff = 1.0;
};

int run_curve(const CurveArgs& a) {
    ModelGraph g0 = load_model(a.common.model);
    GraphInfo info = validate(g0);
    Dataset train_ds = load_cifar10(a.common.data, "train", a.common.limit);
    Dataset test_ds = load_cifar10(a.common.data, "test", -1);

    std::vector<int> units = a.units.empty() ? prunable_units(info) : a.units;
    std::sort(units.begin(), units.end());
    units.erase(std::unique(units.begin(), units.end()), units.end());
    for (int u : units)
        if (!info.unit(u).prunable)
            throw DomainError("unit " + std::to_string(u) + " is not prunable");

    std::vector<double> rates = a.rates;
    std::sort(rates.begin(), rates.end());
    rates.erase(std::unique(rates.begin(), rates.end()), rates.end());
    if (rates.empty()) throw ConfigError("--grid needs at least one rate");

    std::vector<std::string> methods = canonical_methods(a.methods);
    std::vector<bool> dos;
    if (a.do_mode == "off" || a.do_mode == "both") dos.push_back(false);
    if (a.do_mode == "on" || a.do_mode == "both") dos.push_back(true);
    if (dos.empty()) throw ConfigError("--do must be on, off, or both");

    LambdaTable lt;
    if (a.use_lambda) {
        EmpiricalStats stats = collect_stats(g0, train_ds, 64, a.common.max_batches);
        lt = calibrate_lambda(g0, stats);
    } else {
        lt = identity_table(g0, info);
    }

    std::string csv = "unit,rate,method,do,lambda,var_coeff,seed,accuracy,shift_sum,flops,params\n";
    char line[320];
    for (int unit : units) {
        const bool do_possible = unit_headed_by(info, info.unit(unit).consumer) >= 0;
        for (double rate : rates) {
            if (!(rate >= 0.0 && rate < 1.0))
                throw DomainError("rate " + std::to_string(rate) + " outside [0,1)");
            for (const std::string& method : methods) {
                ScoreReport report = score_for(g0, info, unit, method, a.common.seed);
                for (bool do_on : dos) {
                    if (do_on && !do_possible) continue;  // consumer carries no bn
                    std::vector<uint8_t> mask =
                        select_channels(report, rate, method == "reverse");
                    ShiftEstimate shift = shift_of_plan(g0, unit, mask, lt);
                    ModelGraph gp = apply_prune(g0, unit, mask);
                    if (do_on) {
                        PrunePlan plan;
                        plan.use_lambda = a.use_lambda;
                        plan.var_coeff = a.var_coeff;
                        plan.set_mask(unit, mask);
                        gp = distribution_optimize(gp, unit, plan, lt);
                    }
                    const double acc =
                        evaluate(gp, test_ds, a.common.batch_size, a.common.max_batches);
                    const CostReport cost = count_cost(gp);
                    std::snprintf(line, sizeof line,
                                  "%d,%g,%s,%s,%s,%g,%" PRIu64 ",%.6f,%.9g,%" PRIu64
                                  ",%" PRIu64 "\n",
                                  unit, rate, method.c_str(), do_on ? "on" : "off",
                                  a.use_lambda ? "on" : "off", a.var_coeff, a.common.seed, acc,
                                  shift.sum_abs, cost.flops, cost.params);
                    csv += line;
                }
            }
        }
    }
    write_text(a.out, csv);
    std::printf("wrote %s\n", a.out.c_str());
    return 0;
}

struct TrainArgs {
    CommonArgs common;
    std::string arch = "tinynet";
    std::string out;
    std::string curve_path;
    TrainConfig cfg;
};

int run_train(const TrainArgs& a) {
    ModelGraph g;
    if (!a.common.model.empty())
        g = load_model(a.common.model);
    else if (a.arch == "tinynet")
        g = tinynet(a.cfg.seed);
    else if (a.arch == "vgg8")
        g = vgg8(a.cfg.seed);
    else
        throw ConfigError("unknown arch '" + a.arch + "'");

    Dataset train_ds = load_cifar10(a.common.data, "train", a.common.limit);
    TrainResult res = train(g, train_ds, a.cfg);
    save_model(res.graph, a.out);
    if (!a.curve_path.empty()) save_loss_csv(res.curve, a.curve_path);

    const double last_loss = res.curve.empty() ? 0.0 : res.curve.back().loss;
    std::printf("trained %" PRId64 " epochs, %zu steps, final loss %.4f\n", a.cfg.epochs,
                res.curve.size(), last_loss);
    try {
        Dataset test_ds = load_cifar10(a.common.data, "test", -1);
        std::printf("test accuracy %.6f\n",
                    evaluate(res.graph, test_ds, 128, a.common.max_batches));
    } catch (const IoError&) {
        // no test split in the directory; training output alone is fine
    }
    std::printf("wrote %s.{manifest,blob}\n", a.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"feature-shift channel pruning toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic 10-class image set");
    std::string synth_dir;
    int64_t synth_train = 10000, synth_test = 2000;
    uint64_t synth_seed = 0;
    synth_cmd->add_option("--out", synth_dir, "output directory")->required();
    synth_cmd->add_option("--train", synth_train, "train record count");
    synth_cmd->add_option("--test", synth_test, "test record count");
    synth_cmd->add_option("--seed", synth_seed, "generator seed");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "top-1 accuracy and cost of an archive");
    CommonArgs eval_args;
    std::string eval_split = "test";
    eval_cmd->add_option("--model", eval_args.model, "model archive stem")->required();
    eval_cmd->add_option("--data", eval_args.data, "dataset directory or batch file")->required();
    eval_cmd->add_option("--split", eval_split, "train or test");
    eval_cmd->add_option("--limit", eval_args.limit, "cap on records read");
    eval_cmd->add_option("--batch-size", eval_args.batch_size, "evaluation batch size");
    eval_cmd->add_option("--max-batches", eval_args.max_batches, "cap on evaluated batches");
    eval_cmd->add_flag("--json", eval_args.as_json, "machine-readable output");

    // stats
    auto* stats_cmd = app.add_subcommand("stats", "analytic vs measured consumer-input means");
    CommonArgs stats_args;
    std::string stats_split = "train", stats_out;
    stats_cmd->add_option("--model", stats_args.model, "model archive stem")->required();
    stats_cmd->add_option("--data", stats_args.data, "dataset directory")->required();
    stats_cmd->add_option("--out", stats_out, "csv path")->required();
    stats_cmd->add_option("--split", stats_split, "train or test");
    stats_cmd->add_option("--limit", stats_args.limit, "cap on records read");
    stats_cmd->add_option("--batch-size", stats_args.batch_size, "collection batch size");
    stats_cmd->add_option("--max-batches", stats_args.max_batches, "cap on collected batches");

    // score
    auto* score_cmd = app.add_subcommand("score", "per-channel importance reports");
    CommonArgs score_args;
    std::string score_order = "fsm", score_out;
    int score_unit_arg = -1;
    score_cmd->add_option("--model", score_args.model, "model archive stem")->required();
    score_cmd->add_option("--order", score_order, "fsm, reverse, random, l1, post_bn, empirical")
        ->check(CLI::IsMember({"fsm", "reverse", "random", "l1", "post_bn", "empirical"}));
    score_cmd->add_option("--unit", score_unit_arg, "single unit (default: all with a consumer)");
    score_cmd->add_option("--out", score_out, "json path (default: stdout)");
    score_cmd->add_option("--data", score_args.data, "dataset directory (empirical order only)");
    score_cmd->add_option("--limit", score_args.limit, "cap on records read");
    score_cmd->add_option("--max-batches", score_args.max_batches, "cap on collected batches");
    score_cmd->add_option("--seed", score_args.seed, "random-order seed");

    // prune
    auto* prune_cmd = app.add_subcommand("prune", "prune per the rates config and retrain");
    PruneArgs prune_args;
    std::string prune_lambda = "";
    double prune_var_coeff = 0.0;
    int prune_finetune = -1;
    prune_cmd->add_option("--model", prune_args.common.model, "model archive stem")->required();
    prune_cmd->add_option("--data", prune_args.common.data, "dataset directory")->required();
    prune_cmd->add_option("--rates", prune_args.rates_path, "rates config json")->required();
    prune_cmd->add_option("--out", prune_args.out, "output archive stem")->required();
    prune_cmd->add_option("--order", prune_args.order, "fsm, reverse, random, or l1")
        ->check(CLI::IsMember(kMethodOrder));
    auto* do_opt = prune_cmd->add_option("--do", "distribution optimization on or off")
                       ->check(CLI::IsMember({"on", "off"}));
    prune_cmd->add_option("--lambda", prune_lambda, "estimate correction on or off")
        ->check(CLI::IsMember({"on", "off"}));
    auto* vc_opt = prune_cmd->add_option("--var-coeff", prune_var_coeff,
                                         "variance coefficient for optimization");
    auto* ft_opt =
        prune_cmd->add_option("--finetune-epochs", prune_finetune, "epochs after each unit");
    auto* seed_opt = prune_cmd->add_option("--seed", prune_args.common.seed, "pipeline seed");
    prune_cmd->add_option("--final-epochs", prune_args.final_epochs, "retrain after all units");
    prune_cmd->add_option("--lr", prune_args.lr, "fine-tune/retrain learning rate");
    prune_cmd->add_option("--momentum", prune_args.momentum, "sgd momentum");
    prune_cmd->add_option("--wd", prune_args.weight_decay, "weight decay");
    prune_cmd->add_option("--train-batch", prune_args.train_batch, "training batch size");
    prune_cmd->add_option("--lr-steps", prune_args.lr_steps, "retrain decay epochs")
        ->delimiter(',');
    prune_cmd->add_option("--limit", prune_args.common.limit, "cap on train records");
    prune_cmd->add_option("--batch-size", prune_args.common.batch_size, "evaluation batch size");
    prune_cmd->add_option("--max-batches", prune_args.common.max_batches,
                          "cap on stat/eval batches");
    prune_cmd->add_flag("--json", prune_args.common.as_json, "print the summary json");

    // curve
    auto* curve_cmd = app.add_subcommand("curve", "per-unit rate sweep from the pristine model");
    CurveArgs curve_args;
    std::string curve_lambda = "on";
    curve_cmd->add_option("--model", curve_args.common.model, "model archive stem")->required();
    curve_cmd->add_option("--data", curve_args.common.data, "dataset directory")->required();
    curve_cmd->add_option("--out", curve_args.out, "csv path")->required();
    curve_cmd->add_option("--grid", curve_args.rates, "compression rates")
        ->delimiter(',')
        ->required();
    curve_cmd->add_option("--units", curve_args.units, "unit indices (default: all prunable)")
        ->delimiter(',');
    curve_cmd->add_option("--methods", curve_args.methods, "subset of fsm,reverse,random,l1")
        ->delimiter(',');
    curve_cmd->add_option("--do", curve_args.do_mode, "on, off, or both")
        ->check(CLI::IsMember({"on", "off", "both"}));
    curve_cmd->add_option("--lambda", curve_lambda, "estimate correction on or off")
        ->check(CLI::IsMember({"on", "off"}));
    curve_cmd->add_option("--var-coeff", curve_args.var_coeff, "variance coefficient");
    curve_cmd->add_option("--seed", curve_args.common.seed, "random-order seed");
    curve_cmd->add_option("--limit", curve_args.common.limit, "cap on train records");
    curve_cmd->add_option("--batch-size", curve_args.common.batch_size, "evaluation batch size");
    curve_cmd->add_option("--max-batches", curve_args.common.max_batches,
                          "cap on stat/eval batches");

    // train
    auto* train_cmd = app.add_subcommand("train", "train an architecture or archive");
    TrainArgs train_args;
    train_cmd->add_option("--data", train_args.common.data, "dataset directory")->required();
    train_cmd->add_option("--out", train_args.out, "output archive stem")->required();
    train_cmd->add_option("--model", train_args.common.model, "start from this archive");
    train_cmd->add_option("--arch", train_args.arch, "tinynet or vgg8 when no --model");
    train_cmd->add_option("--epochs", train_args.cfg.epochs, "epoch count");
    train_cmd->add_option("--lr", train_args.cfg.lr, "learning rate");
    train_cmd->add_option("--momentum", train_args.cfg.momentum, "sgd momentum");
    train_cmd->add_option("--wd", train_args.cfg.weight_decay, "weight decay");
    train_cmd->add_option("--batch-size", train_args.cfg.batch_size, "mini-batch size");
    train_cmd->add_option("--lr-steps", train_args.cfg.lr_steps, "decay epochs")->delimiter(',');
    train_cmd->add_option("--seed", train_args.cfg.seed, "init and shuffle seed");
    train_cmd->add_option("--limit", train_args.common.limit, "cap on train records");
    train_cmd->add_option("--max-batches", train_args.common.max_batches,
                          "cap on evaluation batches");
    train_cmd->add_option("--curve", train_args.curve_path, "loss curve csv path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(synth_cmd))
            return run_synth(synth_dir, synth_train, synth_test, synth_seed);
        if (app.got_subcommand(eval_cmd)) return run_eval(eval_args, eval_split);
        if (app.got_subcommand(stats_cmd)) return run_stats(stats_args, stats_split, stats_out);
        if (app.got_subcommand(score_cmd))
            return run_score(score_args, score_order, score_unit_arg, score_out);
        if (app.got_subcommand(prune_cmd)) {
            RateConfig rc = load_rates(prune_args.rates_path);
            if (seed_opt->count()) rc.seed = prune_args.common.seed;
            if (!prune_lambda.empty()) rc.use_lambda = prune_lambda == "on";
            if (vc_opt->count()) rc.var_coeff = prune_var_coeff;
            if (ft_opt->count()) rc.finetune_epochs = prune_finetune;
            if (do_opt->count()) prune_args.do_on = do_opt->as<std::string>() == "on";
            if (rc.var_coeff <= 0.0) throw ConfigError("--var-coeff must be positive");
            if (rc.finetune_epochs < 0) throw ConfigError("--finetune-epochs must be >= 0");
            prune_args.common.seed = rc.seed;
            return run_prune(prune_args, rc);
        }
        if (app.got_subcommand(curve_cmd)) {
            curve_args.use_lambda = curve_lambda == "on";
            if (curve_args.var_coeff <= 0.0) throw ConfigError("--var-coeff must be positive");
            return run_curve(curve_args);
        }
        if (app.got_subcommand(train_cmd)) return run_train(train_args);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
