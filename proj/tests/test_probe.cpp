#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stepconf/errors.hpp"
#include "stepconf/probe.hpp"
#include "stepconf/representation.hpp"
#include "stepconf/rng.hpp"

using namespace stepconf;

namespace {

// Per-sample distinct prefixes so the feature-hash term varies realistically.
Trajectory tiny_prefix(int i) {
    Trajectory traj;
    traj.task.id = "probe-fixture";
    traj.task.text = "sample task " + std::to_string(i % 17);
    StepRecord s;
    s.t = 0;
    s.action = "inspect item " + std::to_string(i % 13);
    s.observation = "variant " + std::to_string(i % 7);
    return append_step(traj, std::move(s));
}

Dataset cell_dataset(const RepresentationProvider& provider, int layer, int n_per_class,
                     std::uint64_t seed) {
    Dataset ds;
    const Rng root(seed);
    for (int i = 0; i < n_per_class; ++i) {
        for (int y : {1, 0}) {
            const auto h = provider.hidden_state(tiny_prefix(i), layer, y == 1,
                                                 root.derive(2 * i + y));
            ds.X.push_back(h.values);
            ds.y.push_back(y);
        }
    }
    return ds;
}

// Ground-truth-direction classifier: threshold midway between the class
// means of the projections onto g_L, fit on train, scored on test.
double oracle_accuracy(const std::vector<double>& g, const Dataset& train, const Dataset& test) {
    double mean_pos = 0.0, mean_neg = 0.0;
    int n_pos = 0, n_neg = 0;
    auto proj = [&](const std::vector<double>& x) {
        double p = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) p += x[j] * g[j];
        return p;
    };
    for (std::size_t i = 0; i < train.X.size(); ++i) {
        if (train.y[i] == 1) {
            mean_pos += proj(train.X[i]);
            ++n_pos;
        } else {
            mean_neg += proj(train.X[i]);
            ++n_neg;
        }
    }
    const double threshold = 0.5 * (mean_pos / n_pos + mean_neg / n_neg);
    int correct = 0;
    for (std::size_t i = 0; i < test.X.size(); ++i) {
        const int pred = proj(test.X[i]) >= threshold ? 1 : 0;
        if (pred == test.y[i]) ++correct;
    }
    return static_cast<double>(correct) / test.X.size();
}

ProbeParams raw_params(std::vector<double> W, double b) {
    ProbeParams p;
    p.W = std::move(W);
    p.b = b;
    p.mean.assign(p.W.size(), 0.0);
    p.scale.assign(p.W.size(), 1.0);
    return p;
}

}  // namespace

TEST_CASE("loss at the origin is ln 2 with zero bias gradient on balanced labels") {
    Dataset batch;
    Rng rng(5);
    for (int i = 0; i < 10; ++i) {
        std::vector<double> x;
        for (int j = 0; j < 4; ++j) x.push_back(rng.normal());
        batch.X.push_back(x);
        batch.X.push_back(x);
        batch.y.push_back(1);
        batch.y.push_back(0);
    }
    const auto lg = loss_and_gradient(raw_params(std::vector<double>(4, 0.0), 0.0), batch, 0.0);
    CHECK(lg.loss == doctest::Approx(std::log(2.0)));
    CHECK(lg.grad_b == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("saturated correct prediction leaves only the l2 term") {
    Dataset batch;
    batch.X.push_back({1.0, 0.0});
    batch.y.push_back(1);
    const double l2 = 1e-3;
    const auto lg = loss_and_gradient(raw_params({30.0, 0.0}, 0.0), batch, l2);
    CHECK(lg.loss == doctest::Approx(0.5 * l2 * 900.0).epsilon(1e-6));
}

TEST_CASE("analytic gradients match central finite differences") {
    Rng rng(123);
    const double fd_step = 1e-5;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int dim = 2 + static_cast<int>(rng.below(6));
        const int n = 3 + static_cast<int>(rng.below(10));
        Dataset batch;
        for (int i = 0; i < n; ++i) {
            std::vector<double> x;
            for (int j = 0; j < dim; ++j) x.push_back(rng.normal());
            batch.X.push_back(std::move(x));
            batch.y.push_back(static_cast<int>(rng.below(2)));
        }
        std::vector<double> W;
        for (int j = 0; j < dim; ++j) W.push_back(rng.normal(0.0, 0.5));
        const double b = rng.normal(0.0, 0.5);
        const double l2 = rng.uniform01() * 0.01;
        ProbeParams params = raw_params(W, b);

        const auto lg = loss_and_gradient(params, batch, l2);
        auto loss_at = [&](const std::vector<double>& W2, double b2) {
            ProbeParams p2 = raw_params(W2, b2);
            return loss_and_gradient(p2, batch, l2).loss;
        };
        for (int j = 0; j < dim; ++j) {
            std::vector<double> Wp = W, Wm = W;
            Wp[j] += fd_step;
            Wm[j] -= fd_step;
            const double fd = (loss_at(Wp, b) - loss_at(Wm, b)) / (2 * fd_step);
            const double rel = std::abs(lg.grad_W[j] - fd) /
                               std::max({std::abs(fd), std::abs(lg.grad_W[j]), 1e-8});
            worst = std::max(worst, rel);
        }
        const double fd_b = (loss_at(W, b + fd_step) - loss_at(W, b - fd_step)) / (2 * fd_step);
        worst = std::max(worst, std::abs(lg.grad_b - fd_b) /
                                    std::max({std::abs(fd_b), std::abs(lg.grad_b), 1e-8}));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("probe separates the synthetic classes and tracks the oracle") {
    RepresentationConfig rep;
    rep.seed = 21;
    const RepresentationProvider provider(rep);
    const int layer = 16;
    const Dataset train = cell_dataset(provider, layer, 500, 1000);
    const Dataset test = cell_dataset(provider, layer, 200, 2000);

    TrainConfig cfg;
    cfg.seed = 3;
    auto [params, val_metrics] = train_probe(train, {layer, 2}, cfg);
    CHECK(val_metrics.accuracy >= 0.95);

    std::vector<int> pred;
    for (const auto& x : test.X) {
        ActivationVector h;
        h.values = x;
        pred.push_back(predict(params, h).label == LabelValue::Success ? 1 : 0);
    }
    const ProbeMetrics test_metrics = compute_metrics(test.y, pred);
    const double oracle = oracle_accuracy(provider.direction(layer), train, test);
    CHECK(test_metrics.accuracy >= 0.95);
    CHECK(test_metrics.f1 >= 0.95);
    CHECK(std::abs(test_metrics.accuracy - oracle) <= 0.02);
    CHECK(test_metrics.accuracy <= oracle + 0.03);  // never beats it by more than noise
}

TEST_CASE("margin 0 gives chance-level validation accuracy") {
    RepresentationConfig rep;
    rep.seed = 21;
    rep.margin = 0.0;
    const RepresentationProvider provider(rep);
    const Dataset train = cell_dataset(provider, 8, 400, 500);
    TrainConfig cfg;
    cfg.seed = 4;
    auto [params, metrics] = train_probe(train, {8, 2}, cfg);
    CHECK(metrics.accuracy > 0.38);
    CHECK(metrics.accuracy < 0.62);
}

TEST_CASE("training strictly improves on the zero initializer") {
    RepresentationConfig rep;
    rep.seed = 77;
    rep.dim = 16;
    const RepresentationProvider provider(rep);
    const Dataset ds = cell_dataset(provider, 8, 100, 11);
    TrainConfig cfg;
    cfg.seed = 1;
    auto [params, metrics] = train_probe(ds, {8, 2}, cfg);

    ProbeParams zeros = params;
    std::fill(zeros.W.begin(), zeros.W.end(), 0.0);
    zeros.b = 0.0;
    // Accepted descent steps never increase the training loss, so the final
    // checkpoint must sit strictly below the ln 2 starting point.
    CHECK(loss_and_gradient(params, ds, cfg.l2_lambda).loss <
          loss_and_gradient(zeros, ds, cfg.l2_lambda).loss);
}

TEST_CASE("training is deterministic given the seed") {
    RepresentationConfig rep;
    rep.seed = 9;
    rep.dim = 16;
    const RepresentationProvider provider(rep);
    const Dataset ds = cell_dataset(provider, 8, 50, 77);
    TrainConfig cfg;
    cfg.seed = 12;
    auto [p1, m1] = train_probe(ds, {8, 3}, cfg);
    auto [p2, m2] = train_probe(ds, {8, 3}, cfg);
    CHECK(p1.W == p2.W);
    CHECK(p1.b == p2.b);
    CHECK(m1.accuracy == m2.accuracy);
}

TEST_CASE("scaling all inputs leaves the fitted predictions unchanged") {
    RepresentationConfig rep;
    rep.seed = 31;
    rep.dim = 16;
    const RepresentationProvider provider(rep);
    Dataset ds = cell_dataset(provider, 8, 80, 3);
    TrainConfig cfg;
    cfg.seed = 5;
    auto [p1, m1] = train_probe(ds, {8, 2}, cfg);

    Dataset scaled = ds;
    for (auto& x : scaled.X) {
        for (double& v : x) v *= 2.0;  // exact in binary floating point
    }
    auto [p2, m2] = train_probe(scaled, {8, 2}, cfg);

    for (std::size_t i = 0; i < ds.X.size(); ++i) {
        ActivationVector h1, h2;
        h1.values = ds.X[i];
        h2.values = scaled.X[i];
        CHECK(predict(p1, h1).label == predict(p2, h2).label);
    }
}

TEST_CASE("degenerate datasets are rejected") {
    Dataset one_class;
    one_class.X = {{1.0}, {2.0}, {3.0}};
    one_class.y = {1, 1, 1};
    CHECK_THROWS_AS(train_probe(one_class, {8, 2}, TrainConfig{}), DegenerateDataset);

    Dataset constant;
    constant.X = {{1.0}, {1.0}, {1.0}, {1.0}};
    constant.y = {1, 0, 1, 0};
    CHECK_THROWS_AS(train_probe(constant, {8, 2}, TrainConfig{}), DegenerateDataset);
}

TEST_CASE("predict: tie rule, sigmoid symmetry, dimension check") {
    const auto params = raw_params({0.0, 0.0}, 0.0);
    ActivationVector h;
    h.values = {3.0, -1.0};
    const auto at_zero = predict(params, h);
    CHECK(at_zero.score == 0.5);
    CHECK(at_zero.label == LabelValue::Success);  // tie goes to Success

    const auto sym = raw_params({0.7, -0.3}, 0.0);
    ActivationVector neg;
    neg.values = {-3.0, 1.0};
    CHECK(predict(sym, h).score + predict(sym, neg).score == doctest::Approx(1.0));

    ActivationVector bad;
    bad.values = {1.0};
    CHECK_THROWS_AS(predict(params, bad), DimensionMismatch);
}

TEST_CASE("metrics: all-correct F1 is 1, permuted labels are chance") {
    std::vector<int> y = {1, 0, 1, 0, 1, 1, 0, 0};
    CHECK(compute_metrics(y, y).f1 == 1.0);
    CHECK(compute_metrics(y, y).accuracy == 1.0);

    RepresentationConfig rep;
    rep.seed = 21;
    rep.dim = 32;
    const RepresentationProvider provider(rep);
    Dataset ds = cell_dataset(provider, 8, 300, 42);
    Rng shuffle(9);
    for (std::size_t i = ds.y.size(); i > 1; --i) {
        std::swap(ds.y[i - 1], ds.y[shuffle.below(i)]);
    }
    TrainConfig cfg;
    cfg.seed = 8;
    auto [params, metrics] = train_probe(ds, {8, 2}, cfg);
    CHECK(metrics.accuracy > 0.35);
    CHECK(metrics.accuracy < 0.65);
}

TEST_CASE("train_grid trains per cell and reports unusable cells") {
    RepresentationConfig rep;
    rep.seed = 4;
    rep.dim = 8;
    rep.layers = {8, 16};
    const RepresentationProvider provider(rep);

    std::vector<Trajectory> corpus;
    StepLabelMap labels;
    Rng root(55);
    for (int i = 0; i < 40; ++i) {
        Trajectory traj;
        traj.task.id = "grid-" + std::to_string(i);
        traj.task.text = "grid task " + std::to_string(i);
        StepRecord ack;
        ack.t = 0;
        ack.action = "OK";
        traj = append_step(traj, std::move(ack));
        const bool success = i % 2 == 0;
        for (int t = 1; t <= 3; ++t) {
            StepRecord s;
            s.t = t;
            s.action = "step " + std::to_string(t);
            s.observation = "obs";
            traj = append_step(traj, std::move(s));
            auto& rec = traj.steps.back();
            for (int layer : rep.layers) {
                rec.activations[layer] =
                    provider.hidden_state(traj, layer, success, root.derive(i).derive(t).derive(layer));
            }
            // t=3 gets only Success labels: a degenerate cell.
            labels[{traj.task.id, t}] =
                (t == 3 || success) ? LabelValue::Success : LabelValue::Failure;
        }
        corpus.push_back(finalize(std::move(traj), success ? 1.0 : 0.0));
    }

    TrainConfig cfg;
    cfg.seed = 2;
    const ProbeGrid grid = train_grid(corpus, labels, rep.layers, {2, 3, 4}, cfg);
    CHECK(grid.size() == 6);
    CHECK(grid.at({8, 2}).params.has_value());
    CHECK_FALSE(grid.at({8, 3}).params.has_value());
    CHECK(grid.at({8, 3}).error.find("2 examples per class") != std::string::npos);
    CHECK_FALSE(grid.at({8, 4}).params.has_value());  // no data at t=4

    // Determinism of the whole grid.
    const ProbeGrid grid2 = train_grid(corpus, labels, rep.layers, {2, 3, 4}, cfg);
    CHECK(grid2.at({16, 2}).params->W == grid.at({16, 2}).params->W);

    const GridEvaluation eval = evaluate(grid, corpus, labels);
    CHECK(eval.cells.count({8, 2}) == 1);
    CHECK(eval.errors.count({8, 3}) == 1);
    CHECK(eval.cells.at({8, 2}).accuracy >= 0.9);  // trained and tested in-sample

    // Grid persistence round trip.
    save_grid(grid, "cfg-digest", "test_grid.json");
    const ProbeGrid loaded = load_grid("test_grid.json");
    CHECK(loaded.size() == grid.size());
    CHECK(loaded.at({16, 2}).params->W == grid.at({16, 2}).params->W);
    CHECK(loaded.at({8, 3}).error == grid.at({8, 3}).error);
    std::remove("test_grid.json");
}

TEST_CASE("grid tables have the layer x timestep layout") {
    std::map<ActivationKey, double> values;
    values[{8, 2}] = 0.5;
    values[{8, 3}] = 0.75;
    values[{16, 2}] = 1.0;
    const std::string csv = grid_csv(values, {8, 16}, {2, 3}, 2);
    CHECK(csv == "layer,t=2,t=3\n8,0.50,0.75\n16,1.00,\n");
    const std::string table = grid_table(values, {8, 16}, {2, 3}, 2);
    CHECK(table.find("Layer") == 0);
    CHECK(table.find("-") != std::string::npos);  // the missing cell
}
