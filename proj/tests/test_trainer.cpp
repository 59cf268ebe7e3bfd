#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fsm/error.hpp"
#include "fsm/inference.hpp"
#include "fsm/models.hpp"
#include "fsm/rng.hpp"
#include "fsm/trainer.hpp"
#include "test_util.hpp"

using namespace fsm;
using fsm_test::TempDir;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, float lo, float hi) {
    Tensor t(std::move(shape), 0.0f);
    for (float& v : t.data)
        v = lo + static_cast<float>(rng.uniform()) * (hi - lo);
    return t;
}

Layer fresh_bn(int64_t c, Rng& rng) {
    Tensor gamma({c}, 0.0f), beta({c}, 0.0f), mean({c}, 0.0f), var({c}, 1.0f);
    for (float& v : gamma.data) v = 0.8f + 0.4f * static_cast<float>(rng.uniform());
    for (float& v : beta.data) v = -0.2f + 0.4f * static_cast<float>(rng.uniform());
    return batchnorm(gamma, beta, mean, var);
}

// ~175 parameters, every kind on the maxpool path
ModelGraph micro_net(uint64_t seed) {
    Rng rng(seed);
    ModelGraph g;
    g.input_shape = Shape4{1, 2, 6, 6};
    g.layers.push_back(conv2d(random_tensor({3, 2, 3, 3}, rng, -0.3f, 0.3f),
                              random_tensor({3}, rng, -0.1f, 0.1f), 1, 1));
    g.layers.push_back(fresh_bn(3, rng));
    g.layers.push_back(relu());
    g.layers.push_back(maxpool(2, 2));
    g.layers.push_back(flatten());
    g.layers.push_back(linear(random_tensor({4, 27}, rng, -0.3f, 0.3f),
                              random_tensor({4}, rng, -0.1f, 0.1f)));
    return g;
}

// avgpool variant
ModelGraph micro_net_avg(uint64_t seed) {
    Rng rng(seed);
    ModelGraph g;
    g.input_shape = Shape4{1, 2, 6, 6};
    g.layers.push_back(conv2d(random_tensor({2, 2, 3, 3}, rng, -0.3f, 0.3f),
                              random_tensor({2}, rng, -0.1f, 0.1f), 1, 1));
    g.layers.push_back(fresh_bn(2, rng));
    g.layers.push_back(relu());
    g.layers.push_back(avgpool(2, 2));
    g.layers.push_back(flatten());
    g.layers.push_back(linear(random_tensor({3, 18}, rng, -0.3f, 0.3f),
                              random_tensor({3}, rng, -0.1f, 0.1f)));
    return g;
}

// two equal-width triples joined by a skip
ModelGraph micro_resnet(uint64_t seed) {
    Rng rng(seed);
    ModelGraph g;
    g.input_shape = Shape4{1, 2, 4, 4};
    for (int i = 0; i < 2; ++i) {
        g.layers.push_back(conv2d(random_tensor({2, 2, 3, 3}, rng, -0.3f, 0.3f),
                                  random_tensor({2}, rng, -0.1f, 0.1f), 1, 1));
        g.layers.push_back(fresh_bn(2, rng));
        g.layers.push_back(relu());
    }
    g.layers.push_back(flatten());
    g.layers.push_back(linear(random_tensor({2, 32}, rng, -0.3f, 0.3f),
                              random_tensor({2}, rng, -0.1f, 0.1f)));
    g.residual_links.push_back({0, 1});
    return g;
}

// 2-class toy set matched to the micro nets: class c hovers around its own
// plateau, far enough apart to be trivially separable
Dataset toy_dataset(int64_t n, uint64_t seed) {
    Rng rng(seed);
    Dataset ds;
    ds.images = Tensor({n, 2, 6, 6}, 0.0f);
    for (int64_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        ds.labels.push_back(label);
        const float base = label ? 0.75f : 0.25f;
        for (int64_t t = 0; t < 72; ++t)
            ds.images.data[static_cast<size_t>(i * 72 + t)] =
                base + 0.05f * (static_cast<float>(rng.uniform()) - 0.5f);
    }
    return ds;
}

double loss_only(const ModelGraph& g, const Tensor& batch, const std::vector<int>& labels) {
    std::vector<Tensor> scratch;
    return loss_and_gradients(g, batch, labels, scratch);
}

// worst relative error between analytic and central-difference gradients,
// with the denominator floored so fd noise on near-zero entries cannot blow
// up the ratio
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
            w = orig + static_cast<float>(h);
            const double lp = loss_only(g, batch, labels);
            w = orig - static_cast<float>(h);
            const double lm = loss_only(g, batch, labels);
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

bool params_equal(const ModelGraph& a, const ModelGraph& b) {
    std::vector<const Tensor*> pa = trainable_params(a);
    std::vector<const Tensor*> pb = trainable_params(b);
    if (pa.size() != pb.size()) return false;
    for (size_t i = 0; i < pa.size(); ++i) {
        if (pa[i]->shape != pb[i]->shape) return false;
        if (std::memcmp(pa[i]->data.data(), pb[i]->data.data(),
                        pa[i]->data.size() * sizeof(float)) != 0)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("analytic gradients match central differences on every layer kind") {
    Rng rng(404);
    Tensor batch = random_tensor({3, 2, 6, 6}, rng, 0.0f, 1.0f);
    std::vector<int> labels = {0, 2, 1};

    // 1e-3 probes everywhere: a larger step walks across relu kinks and
    // maxpool argmax flips, a smaller one drowns in f32 rounding. The maxpool
    // seed is picked so no pooling window sits near a tie.
    ModelGraph g1 = micro_net(51);
    CHECK(worst_grad_error(g1, batch, labels, 1e-3) < 1e-2);

    ModelGraph g2 = micro_net_avg(42);
    std::vector<int> labels2 = {0, 2, 1};
    CHECK(worst_grad_error(g2, batch, labels2, 1e-3) < 1e-2);

    ModelGraph g3 = micro_resnet(43);
    Tensor batch3 = random_tensor({3, 2, 4, 4}, rng, 0.0f, 1.0f);
    std::vector<int> labels3 = {1, 0, 1};
    CHECK(worst_grad_error(g3, batch3, labels3, 1e-3) < 1e-2);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    ModelGraph g = micro_net(7);
    Dataset ds = toy_dataset(24, 7);
    TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.weight_decay = 0.0;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    TrainResult res = train(g, ds, cfg);
    CHECK(params_equal(g, res.graph));
    CHECK(res.curve.size() == 9);  // 3 batches x 3 epochs
}

TEST_CASE("training is bit-deterministic for a fixed seed") {
    ModelGraph g = micro_net(8);
    Dataset ds = toy_dataset(32, 9);
    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 123;
    TrainResult a = train(g, ds, cfg);
    TrainResult b = train(g, ds, cfg);
    CHECK(params_equal(a.graph, b.graph));
    REQUIRE(a.curve.size() == b.curve.size());
    for (size_t i = 0; i < a.curve.size(); ++i)
        CHECK(a.curve[i].loss == b.curve[i].loss);
    // running statistics follow the same guarantee
    for (size_t i = 0; i < a.graph.layers.size(); ++i)
        if (a.graph.layers[i].kind == LayerKind::BatchNorm)
            CHECK(std::memcmp(a.graph.layers[i].running_mean.data.data(),
                              b.graph.layers[i].running_mean.data.data(),
                              a.graph.layers[i].running_mean.data.size() * sizeof(float)) == 0);
}

TEST_CASE("full-batch loss is non-increasing at a small learning rate") {
    ModelGraph g = micro_net(15);
    Dataset ds = toy_dataset(16, 15);
    TrainConfig cfg;
    cfg.lr = 1e-4;
    cfg.momentum = 0.0;
    cfg.epochs = 10;
    cfg.batch_size = 16;  // one step per epoch
    TrainResult res = train(g, ds, cfg);
    REQUIRE(res.curve.size() == 10);
    for (size_t i = 1; i < res.curve.size(); ++i)
        CHECK(res.curve[i].loss <= res.curve[i - 1].loss + 1e-12);
}

TEST_CASE("a separable toy problem trains to high accuracy") {
    ModelGraph base = micro_net(21);
    // 2-class head
    Rng rng(22);
    base.layers[5] = linear(random_tensor({2, 27}, rng, -0.3f, 0.3f), Tensor({2}, 0.0f));
    Dataset ds = toy_dataset(200, 23);
    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.epochs = 50;
    cfg.batch_size = 32;
    cfg.seed = 5;
    TrainResult res = train(base, ds, cfg);
    CHECK(evaluate(res.graph, ds) >= 0.95);
    CHECK(res.curve.back().loss < res.curve.front().loss);
}

TEST_CASE("learning rate steps decay by a factor of ten") {
    ModelGraph g = micro_net(31);
    Dataset ds = toy_dataset(8, 31);
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg.lr_steps = {2};
    TrainResult res = train(g, ds, cfg);
    REQUIRE(res.curve.size() == 4);
    CHECK_NEAR(res.curve[0].lr, 0.1, 1e-12);
    CHECK_NEAR(res.curve[1].lr, 0.1, 1e-12);
    CHECK_NEAR(res.curve[2].lr, 0.01, 1e-12);
    CHECK_NEAR(res.curve[3].lr, 0.01, 1e-12);
}

TEST_CASE("running statistics blend toward the batch statistics") {
    ModelGraph g = micro_net(35);
    Dataset ds = toy_dataset(16, 35);
    // measured conv-output stats for the one full batch
    Tensor conv_out = forward_prefix(g, ds.images, 0);
    const Shape4 cs = conv_out.shape4();
    std::vector<double> mean(static_cast<size_t>(cs.c), 0.0);
    for (int64_t n = 0; n < cs.n; ++n)
        for (int64_t c = 0; c < cs.c; ++c) {
            const float* p = conv_out.data.data() + (n * cs.c + c) * cs.h * cs.w;
            for (int64_t i = 0; i < cs.h * cs.w; ++i) mean[static_cast<size_t>(c)] += p[i];
        }
    for (double& m : mean) m /= static_cast<double>(cs.n * cs.h * cs.w);

    std::vector<float> before(g.layers[1].running_mean.data);
    TrainConfig cfg;
    cfg.lr = 0.0;  // keep the conv frozen so the measurement matches
    cfg.epochs = 1;
    cfg.batch_size = 16;
    TrainResult res = train(g, ds, cfg);
    for (size_t c = 0; c < mean.size(); ++c)
        CHECK_NEAR(res.graph.layers[1].running_mean.data[c], 0.9 * before[c] + 0.1 * mean[c],
                   1e-4);
}

TEST_CASE("an absurd learning rate raises a divergence error") {
    ModelGraph g = micro_net(51);
    Dataset ds = toy_dataset(16, 51);
    TrainConfig cfg;
    cfg.lr = 1e18;
    cfg.epochs = 10;
    cfg.batch_size = 16;
    CHECK_THROWS_AS(train(g, ds, cfg), TrainError);
}

TEST_CASE("invalid configurations and datasets are rejected") {
    ModelGraph g = micro_net(61);
    Dataset ds = toy_dataset(8, 61);
    TrainConfig cfg;
    cfg.lr = -0.1;
    CHECK_THROWS_AS(train(g, ds, cfg), ConfigError);
    cfg.lr = 0.1;
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(train(g, ds, cfg), ConfigError);
    cfg.momentum = 0.9;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(train(g, ds, cfg), ConfigError);
    cfg.batch_size = 8;
    ds.labels.pop_back();
    CHECK_THROWS_AS(train(g, ds, cfg), ShapeError);
}

TEST_CASE("a zero-epoch finetune returns the graph unchanged") {
    ModelGraph g = micro_net(71);
    Dataset ds = toy_dataset(8, 71);
    TrainConfig cfg;
    cfg.lr = 0.1;
    ModelGraph out = finetune_layer(g, ds, 0, cfg);
    CHECK(params_equal(g, out));
    CHECK(std::memcmp(out.layers[1].running_mean.data.data(),
                      g.layers[1].running_mean.data.data(),
                      g.layers[1].running_mean.data.size() * sizeof(float)) == 0);

    ModelGraph tuned = finetune_layer(g, ds, 1, cfg);
    CHECK(!params_equal(g, tuned));
}

TEST_CASE("loss curves serialize to csv") {
    ModelGraph g = micro_net(81);
    Dataset ds = toy_dataset(8, 81);
    TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    TrainResult res = train(g, ds, cfg);
    TempDir td;
    std::string path = (td.path / "curve.csv").string();
    save_loss_csv(res.curve, path);
    auto bytes = fsm_test::slurp(path);
    std::string text(bytes.begin(), bytes.end());
    CHECK(text.rfind("step,loss,lr\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 1 + static_cast<long>(res.curve.size()));
    CHECK(text.find("\n0,") != std::string::npos);
}

TEST_CASE("training a residual network moves its parameters") {
    ModelGraph g = micro_resnet(91);
    Rng rng(92);
    Dataset ds;
    ds.images = random_tensor({16, 2, 4, 4}, rng, 0.0f, 1.0f);
    for (int64_t i = 0; i < 16; ++i) ds.labels.push_back(static_cast<int>(i % 2));
    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    TrainResult res = train(g, ds, cfg);
    CHECK(!params_equal(g, res.graph));
    for (const LossPoint& p : res.curve) CHECK(std::isfinite(p.loss));
}
