// Acceptance harness. Each numbered check prints one [PASS]/[FAIL] line with
// the measured margin; the process exits nonzero if any check fails. The
// thresholds below are pinned on purpose: loosening them is a behavior
// change, not a test fix.

#include <sys/wait.h>

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

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

using namespace fsm;
using nlohmann::json;

namespace {

// pinned gates
constexpr int kMcPairs = 20;
constexpr int64_t kMcSamples = 10000000;
constexpr double kMcSigmas = 3.0;
constexpr double kAccuracyFloor = 0.60;
constexpr double kSpearmanFloor = 0.80;
constexpr double kIdentityTol = 1e-6;
constexpr float kZeroPruneDoTol = 1e-5f;
constexpr int kDoUnitsNeeded = 4;  // of the 5 optimizable units
constexpr double kOrderingGapFloor = 0.05;
constexpr double kGradTol = 1e-2;
constexpr double kEndToEndGap = 0.03;

// hand-counted vgg8 costs: 3x3 pad-1 convs on 32x32 with pools after units
// 1, 3, 5, then 1024->128->10 heads; pruning half of every unit's channels
// leaves 8,8,16,16,32,32 and a 512-wide first head
constexpr uint64_t kFullFlops = 10011904;
constexpr uint64_t kFullParams = 205018;
constexpr uint64_t kHalfFlops = 2647296;
constexpr uint64_t kHalfParams = 85362;

int g_failures = 0;

void report(int idx, const char* name, bool ok, const std::string& detail) {
    std::printf("[%s] %2d. %s (%s)\n", ok ? "PASS" : "FAIL", idx, name, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

void note(const std::string& msg) {
    std::printf("# %s\n", msg.c_str());
    std::fflush(stdout);
}

struct Workspace {
    std::filesystem::path dir;

    Workspace() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "fsm_accept_XXXXXX").string();
        std::vector<char> buf(tmpl.begin(), tmpl.end());
        buf.push_back('\0');
        if (!mkdtemp(buf.data())) throw IoError("cannot create scratch directory");
        dir = buf.data();
    }
    ~Workspace() {
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
    }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

int run_cli(const std::string& args, const std::string& log) {
    const std::string cmd = std::string(FSM_BIN) + " " + args + " >" + log + " 2>&1";
    const int st = std::system(cmd.c_str());
    if (st == -1 || !WIFEXITED(st)) return -1;
    return WEXITSTATUS(st);
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) return "<unreadable:" + path + ">";
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<int> rank_order(const std::vector<double>& v) {
    std::vector<int> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return v[static_cast<size_t>(a)] < v[static_cast<size_t>(b)];
    });
    return order;
}

std::vector<double> avg_ranks(const std::vector<double>& v) {
    std::vector<int> order = rank_order(v);
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

// the trained model, its dataset, and the statistics every later check reuses
struct Fixture {
    Workspace ws;
    std::string data_dir;
    std::string model_stem;
    ModelGraph g;
    GraphInfo info;
    Dataset train_ds;
    Dataset test_ds;
    EmpiricalStats stats;
    LambdaTable lt;
    double base_acc = 0.0;
};

Fixture build_fixture() {
    Fixture fx;
    fx.data_dir = fx.ws.path("data");
    fx.model_stem = fx.ws.path("fixture");

    note("generating 10000 train / 2000 test synthetic records");
    synth_cifar_dir(fx.data_dir, 10000, 2000, 77);
    fx.train_ds = load_cifar10(fx.data_dir, "train");
    fx.test_ds = load_cifar10(fx.data_dir, "test");

    note("training the vgg-style fixture for 3 epochs");
    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.epochs = 3;
    cfg.lr_steps = {2};
    cfg.seed = 21;
    fx.g = train(vgg8(21), fx.train_ds, cfg).graph;
    fx.info = validate(fx.g);
    save_model(fx.g, fx.model_stem);

    fx.base_acc = evaluate(fx.g, fx.test_ds);
    note("collecting activation statistics");
    fx.stats = collect_stats(fx.g, fx.train_ds, 64);
    fx.lt = calibrate_lambda(fx.g, fx.stats);
    return fx;
}

std::vector<uint8_t> half_mask(const ModelGraph& g, int unit, double rate, bool reverse) {
    ScoreReport r = score_unit(g, unit, LambdaTable{});
    return select_channels(r, rate, reverse);
}

// ---- 1: closed form vs monte carlo -----------------------------------------

void check_estimator_mc() {
    Rng rng(2024);
    double worst_ratio = 0.0;
    bool ok = true;
    for (int i = 0; i < kMcPairs; ++i) {
        // redraw pairs whose positive tail is below the sampler's resolution:
        // past beta/gamma = -4 fewer than ~300 of the 1e7 draws land positive
        // and the empirical standard error collapses to zero
        double beta, gamma;
        do {
            beta = -3.0 + 6.0 * rng.uniform();
            gamma = std::max(2.0 * rng.uniform(), 0.02);
        } while (beta / gamma < -4.0);
        const double closed = relu_gauss_mean(beta, gamma);

        double sum = 0.0, sumsq = 0.0;
        for (int64_t s = 0; s < kMcSamples; ++s) {
            const double y = beta + gamma * rng.gaussian();
            const double r = y > 0.0 ? y : 0.0;
            sum += r;
            sumsq += r * r;
        }
        const double n = static_cast<double>(kMcSamples);
        const double mc = sum / n;
        const double var = std::max(sumsq / n - mc * mc, 0.0);
        const double se = std::sqrt(var / n);
        const double diff = std::fabs(closed - mc);
        if (diff > kMcSigmas * se + 1e-12) ok = false;
        if (se > 0.0) worst_ratio = std::max(worst_ratio, diff / se);
    }
    char d[128];
    std::snprintf(d, sizeof d, "%d pairs x %" PRId64 " samples, worst deviation %.2f se", kMcPairs,
                  kMcSamples, worst_ratio);
    report(1, "rectified gaussian mean matches monte carlo", ok, d);
}

// ---- 2: analytic means track measurements on the trained net ---------------

void check_fidelity(const Fixture& fx) {
    bool ok = fx.base_acc >= kAccuracyFloor;
    double worst_rho = 1.0;
    for (size_t ui = 1; ui < fx.info.units.size(); ++ui) {
        const Unit& u = fx.info.units[ui];
        if (u.consumer < 0) continue;
        std::vector<uint8_t> full(static_cast<size_t>(u.channels), 1);
        ChannelEstimate est = estimate_layer_means(fx.g, fx.info, static_cast<int>(ui), full);
        const double rho = spearman(est.next_input_mean, fx.stats.at(u.consumer).mean);
        worst_rho = std::min(worst_rho, rho);
        if (rho < kSpearmanFloor) ok = false;
    }
    char d[128];
    std::snprintf(d, sizeof d, "top-1 %.4f, worst rank correlation %.4f past the first unit",
                  fx.base_acc, worst_rho);
    report(2, "analytic means track measured means on a trained model", ok, d);
}

// ---- 3: corrected estimates reproduce measurements --------------------------

void check_lambda_identity(const Fixture& fx) {
    double worst = 0.0;
    int corrected = 0, total = 0;
    for (size_t ui = 0; ui < fx.info.units.size(); ++ui) {
        const Unit& u = fx.info.units[ui];
        if (u.consumer < 0) continue;
        const LambdaTable::Entry& e = fx.lt.at(static_cast<int>(ui));
        std::vector<uint8_t> full(static_cast<size_t>(u.channels), 1);
        ChannelEstimate est = estimate_layer_means(fx.g, fx.info, static_cast<int>(ui), full);
        const std::vector<double>& emp = fx.stats.at(u.consumer).mean;
        for (size_t j = 0; j < emp.size(); ++j) {
            ++total;
            if (!e.corrected[j]) continue;
            ++corrected;
            worst = std::max(worst, std::fabs(est.next_input_mean[j] / e.lambda[j] - emp[j]));
        }
    }
    char d[128];
    std::snprintf(d, sizeof d, "%d of %d channels corrected, worst residual %.2e", corrected,
                  total, worst);
    report(3, "corrected estimates reproduce measurements identically",
           corrected > 0 && worst <= kIdentityTol, d);
}

// ---- 4: keep-everything pruning is the identity -----------------------------

void check_zero_prune(const Fixture& fx) {
    Rng rng(55);
    std::vector<Tensor> batches;
    for (int b = 0; b < 10; ++b) {
        Tensor t({8, 3, 32, 32}, 0.0f);
        for (float& v : t.data) v = static_cast<float>(rng.uniform());
        batches.push_back(std::move(t));
    }

    ModelGraph gz = fx.g;
    for (size_t ui = 0; ui < fx.info.units.size(); ++ui) {
        if (!fx.info.units[ui].prunable) continue;
        std::vector<uint8_t> full(static_cast<size_t>(fx.info.units[ui].channels), 1);
        gz = apply_prune(gz, static_cast<int>(ui), full);
    }
    bool bit_equal = true;
    for (const Tensor& b : batches) {
        Tensor la = forward(fx.g, b), lb = forward(gz, b);
        if (std::memcmp(la.data.data(), lb.data.data(), la.data.size() * sizeof(float)) != 0)
            bit_equal = false;
    }

    // statistics rewriting at rate zero: align the running statistics with
    // the data first, then the correction writes back what is already there
    ModelGraph gr = fx.g;
    recalibrate_bn(gr, fx.train_ds, 128);
    GraphInfo info_r = validate(gr);
    EmpiricalStats stats_r = collect_stats(gr, fx.train_ds, 128);
    LambdaTable lt_r = calibrate_lambda(gr, stats_r);
    ModelGraph gd = gr;
    for (size_t ui = 0; ui < info_r.units.size(); ++ui) {
        const Unit& u = info_r.units[ui];
        if (!u.prunable) continue;
        bool consumer_heads_unit = false;
        for (const Unit& w : info_r.units)
            if (w.conv == u.consumer) consumer_heads_unit = true;
        if (!consumer_heads_unit) continue;
        PrunePlan plan;
        plan.set_mask(static_cast<int>(ui),
                      std::vector<uint8_t>(static_cast<size_t>(u.channels), 1));
        gd = distribution_optimize(gd, static_cast<int>(ui), plan, lt_r);
    }
    float worst = 0.0f;
    for (const Tensor& b : batches) {
        Tensor la = forward(gr, b), lb = forward(gd, b);
        for (size_t i = 0; i < la.data.size(); ++i)
            worst = std::max(worst, std::fabs(la.data[i] - lb.data[i]));
    }

    char d[128];
    std::snprintf(d, sizeof d, "full-mask logits %s, rate-0 optimization drift %.1e",
                  bit_equal ? "bit-equal" : "DIFFER", static_cast<double>(worst));
    report(4, "keep-everything pruning is the identity", bit_equal && worst < kZeroPruneDoTol, d);
}

// ---- 5: cost accounting matches hand counts ---------------------------------

void check_cost_oracle(const Fixture& fx) {
    const CostReport before = count_cost(fx.g);
    ModelGraph gp = fx.g;
    for (size_t ui = 0; ui < fx.info.units.size(); ++ui)
        gp = apply_prune(gp, static_cast<int>(ui), half_mask(gp, static_cast<int>(ui), 0.5, false));
    const CostReport after = count_cost(gp);
    const bool ok = before.flops == kFullFlops && before.params == kFullParams &&
                    after.flops == kHalfFlops && after.params == kHalfParams;
    char d[160];
    std::snprintf(d, sizeof d,
                  "flops %" PRIu64 " -> %" PRIu64 ", params %" PRIu64 " -> %" PRIu64
                  ", expected %" PRIu64 "/%" PRIu64,
                  before.flops, after.flops, before.params, after.params, kHalfFlops, kHalfParams);
    report(5, "cost accounting matches hand counts", ok, d);
}

// ---- 6: distribution optimization recovers accuracy --------------------------

void check_do_direction(const Fixture& fx) {
    int improved = 0, tried = 0;
    double mean_gain = 0.0;
    for (int unit = 0; unit <= 4; ++unit) {
        std::vector<uint8_t> mask = half_mask(fx.g, unit, 0.5, false);
        PrunePlan plan;
        plan.set_mask(unit, mask);
        ModelGraph gp = apply_prune(fx.g, unit, mask);
        const double off = evaluate(gp, fx.test_ds);
        ModelGraph go = distribution_optimize(gp, unit, plan, fx.lt);
        const double on = evaluate(go, fx.test_ds);
        ++tried;
        if (on >= off) ++improved;
        mean_gain += (on - off) / 5.0;
    }
    char d[128];
    std::snprintf(d, sizeof d, "%d of %d units improved, mean gain %+.4f", improved, tried,
                  mean_gain);
    report(6, "distribution optimization recovers accuracy",
           improved >= kDoUnitsNeeded && mean_gain > 0.0, d);
}

// ---- 7: shift-ordered pruning beats reverse ordering -------------------------

void check_ordering(const Fixture& fx) {
    const int unit = 2;
    ModelGraph ga = apply_prune(fx.g, unit, half_mask(fx.g, unit, 0.4, false));
    ModelGraph gb = apply_prune(fx.g, unit, half_mask(fx.g, unit, 0.4, true));
    const double acc_fsm = evaluate(ga, fx.test_ds);
    const double acc_rev = evaluate(gb, fx.test_ds);
    char d[128];
    std::snprintf(d, sizeof d, "unit %d at rate 0.4: %.4f vs %.4f reversed", unit, acc_fsm,
                  acc_rev);
    report(7, "shift-ordered pruning beats reverse ordering",
           acc_fsm - acc_rev >= kOrderingGapFloor, d);
}

// ---- 8: backward passes match finite differences -----------------------------

Tensor rand_tensor(std::vector<int64_t> shape, Rng& rng, float lo, float hi) {
    Tensor t(std::move(shape), 0.0f);
    for (float& v : t.data) v = lo + static_cast<float>(rng.uniform()) * (hi - lo);
    return t;
}

Layer rand_bn(int64_t c, Rng& rng) {
    Tensor gamma({c}, 0.0f), beta({c}, 0.0f), mean({c}, 0.0f), var({c}, 1.0f);
    for (float& v : gamma.data) v = 0.8f + 0.4f * static_cast<float>(rng.uniform());
    for (float& v : beta.data) v = -0.2f + 0.4f * static_cast<float>(rng.uniform());
    return batchnorm(gamma, beta, mean, var);
}

double worst_grad_error(ModelGraph& g, const Tensor& batch, const std::vector<int>& labels,
                        double h) {
    std::vector<Tensor> grads;
    loss_and_gradients(g, batch, labels, grads);
    std::vector<Tensor*> params = trainable_params(g);
    double worst = 0.0;
    for (size_t p = 0; p < params.size(); ++p) {
        for (int64_t t = 0; t < params[p]->size(); ++t) {
            float& w = params[p]->data[static_cast<size_t>(t)];
            const float orig = w;
            std::vector<Tensor> scratch;
            w = orig + static_cast<float>(h);
            const double lp = loss_and_gradients(g, batch, labels, scratch);
            w = orig - static_cast<float>(h);
            const double lm = loss_and_gradients(g, batch, labels, scratch);
            w = orig;
            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = grads[p].data[static_cast<size_t>(t)];
            const double rel = std::fabs(analytic - numeric) /
                               std::max({std::fabs(analytic), std::fabs(numeric), 0.01});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

void check_gradients() {
    double worst = 0.0;
    Rng rb(404);
    Tensor batch = rand_tensor({3, 2, 6, 6}, rb, 0.0f, 1.0f);
    std::vector<int> labels = {0, 2, 1};

    {
        // fixture seeds are screened so no relu input or pooling window sits
        // near a tie at the 1e-3 probe step
        Rng rng(51);
        ModelGraph g;
        g.input_shape = Shape4{1, 2, 6, 6};
        g.layers.push_back(conv2d(rand_tensor({3, 2, 3, 3}, rng, -0.3f, 0.3f),
                                  rand_tensor({3}, rng, -0.1f, 0.1f), 1, 1));
        g.layers.push_back(rand_bn(3, rng));
        g.layers.push_back(relu());
        g.layers.push_back(maxpool(2, 2));
        g.layers.push_back(flatten());
        g.layers.push_back(linear(rand_tensor({4, 27}, rng, -0.3f, 0.3f),
                                  rand_tensor({4}, rng, -0.1f, 0.1f)));
        worst = std::max(worst, worst_grad_error(g, batch, labels, 1e-3));
    }
    {
        Rng rng(42);
        ModelGraph g;
        g.input_shape = Shape4{1, 2, 6, 6};
        g.layers.push_back(conv2d(rand_tensor({2, 2, 3, 3}, rng, -0.3f, 0.3f),
                                  rand_tensor({2}, rng, -0.1f, 0.1f), 1, 1));
        g.layers.push_back(rand_bn(2, rng));
        g.layers.push_back(relu());
        g.layers.push_back(avgpool(2, 2));
        g.layers.push_back(flatten());
        g.layers.push_back(linear(rand_tensor({3, 18}, rng, -0.3f, 0.3f),
                                  rand_tensor({3}, rng, -0.1f, 0.1f)));
        worst = std::max(worst, worst_grad_error(g, batch, labels, 1e-3));
    }
    {
        Rng rng(43);
        ModelGraph g;
        g.input_shape = Shape4{1, 2, 4, 4};
        for (int i = 0; i < 2; ++i) {
            g.layers.push_back(conv2d(rand_tensor({2, 2, 3, 3}, rng, -0.3f, 0.3f),
                                      rand_tensor({2}, rng, -0.1f, 0.1f), 1, 1));
            g.layers.push_back(rand_bn(2, rng));
            g.layers.push_back(relu());
        }
        g.layers.push_back(flatten());
        g.layers.push_back(linear(rand_tensor({2, 32}, rng, -0.3f, 0.3f),
                                  rand_tensor({2}, rng, -0.1f, 0.1f)));
        g.residual_links.push_back({0, 1});
        Tensor batch3 = rand_tensor({3, 2, 4, 4}, rb, 0.0f, 1.0f);
        std::vector<int> labels3 = {1, 0, 1};
        worst = std::max(worst, worst_grad_error(g, batch3, labels3, 1e-3));
    }

    char d[96];
    std::snprintf(d, sizeof d, "worst relative error %.2e over three micro-nets", worst);
    report(8, "backward passes match finite differences", worst < kGradTol, d);
}

// ---- 9: end-to-end pipeline at roughly half the flops ------------------------

void check_end_to_end(const Fixture& fx) {
    const std::string rates = fx.ws.path("rates30.json");
    std::ofstream(rates) << R"({"rates": {"0": 0.3, "1": 0.3, "2": 0.3, "3": 0.3, "4": 0.3,)"
                         << R"( "5": 0.3}, "finetune_epochs": 1, "seed": 33})";

    note("pruning to roughly half the flops with per-unit fine-tuning and a 20-epoch retrain");
    const int prc = run_cli("prune --model " + fx.model_stem + " --data " + fx.data_dir +
                                " --rates " + rates + " --out " + fx.ws.path("pruned") +
                                " --final-epochs 20 --lr 0.02 --lr-steps 12 --seed 33"
                                " --train-batch 64 --max-batches 60",
                            fx.ws.path("prune.log"));

    note("training the unpruned baseline with the same 26-epoch budget");
    const int trc = run_cli("train --model " + fx.model_stem + " --data " + fx.data_dir +
                                " --out " + fx.ws.path("base26") +
                                " --epochs 26 --lr 0.02 --lr-steps 18 --seed 33 --batch-size 64",
                            fx.ws.path("base.log"));

    if (prc != 0 || trc != 0) {
        char d[96];
        std::snprintf(d, sizeof d, "exit codes prune=%d baseline=%d", prc, trc);
        report(9, "end-to-end pipeline holds accuracy at half the flops", false, d);
        return;
    }

    json summary = json::parse(read_bytes(fx.ws.path("pruned.summary.json")));
    const double reduction = summary["flops_reduction"].get<double>();
    const double acc_pruned = evaluate(load_model(fx.ws.path("pruned")), fx.test_ds);
    const double acc_base = evaluate(load_model(fx.ws.path("base26")), fx.test_ds);
    const bool ok = reduction >= 0.40 && reduction <= 0.60 &&
                    acc_pruned >= acc_base - kEndToEndGap;
    char d[128];
    std::snprintf(d, sizeof d, "flops cut %.1f%%, top-1 %.4f vs baseline %.4f", 100.0 * reduction,
                  acc_pruned, acc_base);
    report(9, "end-to-end pipeline holds accuracy at half the flops", ok, d);
}

// ---- 10: identical seeds give identical bytes --------------------------------

void check_determinism(const Fixture& fx) {
    const std::string rdet = fx.ws.path("rdet.json");
    std::ofstream(rdet) << R"({"rates": {"2": 0.5}})";

    const std::string curve_cmd = "curve --model " + fx.model_stem + " --data " + fx.data_dir +
                                  " --grid 0.25 --units 2 --methods fsm --max-batches 20"
                                  " --seed 3 --out " +
                                  fx.ws.path("det.csv");
    bool ok = run_cli(curve_cmd, fx.ws.path("det1.log")) == 0;
    const std::string csv1 = read_bytes(fx.ws.path("det.csv"));
    ok = ok && run_cli(curve_cmd, fx.ws.path("det2.log")) == 0;
    const bool csv_same = ok && csv1 == read_bytes(fx.ws.path("det.csv"));

    const std::string prune_cmd = "prune --model " + fx.model_stem + " --data " + fx.data_dir +
                                  " --rates " + rdet + " --out " + fx.ws.path("detm") +
                                  " --finetune-epochs 0 --max-batches 20 --seed 3";
    ok = ok && run_cli(prune_cmd, fx.ws.path("det3.log")) == 0;
    const std::string blob1 = read_bytes(fx.ws.path("detm.blob"));
    const std::string man1 = read_bytes(fx.ws.path("detm.manifest"));
    const std::string plan1 = read_bytes(fx.ws.path("detm.plan.json"));
    ok = ok && run_cli(prune_cmd, fx.ws.path("det4.log")) == 0;
    const bool archive_same = ok && blob1 == read_bytes(fx.ws.path("detm.blob")) &&
                              man1 == read_bytes(fx.ws.path("detm.manifest")) &&
                              plan1 == read_bytes(fx.ws.path("detm.plan.json"));

    char d[96];
    std::snprintf(d, sizeof d, "csv %s, archive %s", csv_same ? "byte-equal" : "DIFFERS",
                  archive_same ? "byte-equal" : "DIFFERS");
    report(10, "identical seeds give identical bytes", csv_same && archive_same, d);
}

}  // namespace

int main() {
    try {
        check_estimator_mc();
        Fixture fx = build_fixture();
        check_fidelity(fx);
        check_lambda_identity(fx);
        check_zero_prune(fx);
        check_cost_oracle(fx);
        check_do_direction(fx);
        check_ordering(fx);
        check_gradients();
        check_end_to_end(fx);
        check_determinism(fx);
    } catch (const std::exception& e) {
        std::printf("[FAIL] harness aborted: %s\n", e.what());
        return 1;
    }
    std::printf("%s\n", g_failures == 0 ? "all checks passed" : "SOME CHECKS FAILED");
    return g_failures == 0 ? 0 : 1;
}
