#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "softshift/data.hpp"
#include "softshift/training.hpp"

using namespace softshift;

namespace {

struct Task {
    DomainPair pair;
    ModelParams init;
    BatchLossFn loss;
};

Task easy_task(std::uint64_t seed, std::size_t max_per_class = 30) {
    ShiftConfig cfg;
    cfg.num_classes = 4;
    cfg.feature_dim = 6;
    cfg.source_train_per_class = max_per_class;
    cfg.target_train_per_class = 10;
    cfg.val_per_class = 15;
    cfg.test_per_class = 20;
    cfg.separation = 6.0;  // well separated, learns fast
    SeededRng data_rng(seed);
    Task t;
    t.pair = generate_domain_pair(cfg, data_rng);
    SeededRng init_rng(seed + 1000);
    t.init = init_params({{6, 16, Activation::Tanh}, {16, 4, Activation::Linear}}, init_rng);
    const LabeledDataset& train_ds = t.pair.source.train;
    t.loss = [train_ds](const Matrix& logits, const std::vector<std::size_t>& idx) {
        Labels batch(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = train_ds.labels[idx[i]];
        return hard_loss(logits, batch);
    };
    return t;
}

}  // namespace

TEST_CASE("evaluate counts argmax hits") {
    ModelParams p;
    p.specs = {{3, 3, Activation::Linear}};
    p.weights = {Matrix::identity(3)};
    p.biases = {Matrix(1, 3)};

    LabeledDataset ds;
    ds.features = Matrix::from_rows(
        {{9, 0, 0}, {0, 9, 0}, {0, 0, 9}, {9, 0, 0}});
    ds.labels = {1, 2, 3, 2};  // last one wrong on purpose
    REQUIRE(evaluate(p, ds) == 0.75);

    ds.labels = {1, 2, 3, 1};
    REQUIRE(evaluate(p, ds) == 1.0);

    ds.labels = {2, 3, 1, 2};
    REQUIRE(evaluate(p, ds) == 0.0);
}

TEST_CASE("max_epochs zero returns the initial model and empty trace") {
    Task t = easy_task(1);
    TrainConfig cfg;
    cfg.max_epochs = 0;
    const auto [model, run] = train(t.init, t.pair.source.train.features, t.loss,
                                    t.pair.source.validation, cfg);
    REQUIRE(model == t.init);
    REQUIRE(run.val_accuracy.empty());
    REQUIRE(run.best_epoch == kNoEpoch);
}

TEST_CASE("forced plateau halts after the four scheduled learning rates") {
    Task t = easy_task(2);
    TrainConfig cfg;
    cfg.max_epochs = 100;
    cfg.halving_threshold = 10.0;  // nothing can improve 1000%, every epoch halves
    cfg.seed = 2;
    const auto [model, run] = train(t.init, t.pair.source.train.features, t.loss,
                                    t.pair.source.validation, cfg);
    const std::set<double> allowed = {0.004, 0.002, 0.001, 0.0005};
    for (double lr : run.lr) REQUIRE(allowed.count(lr) == 1);
    REQUIRE(run.val_accuracy.size() == 5);  // 0.004 x2 (no first-epoch halving), then 3 halvings
    REQUIRE(run.halvings.size() == 4);
}

TEST_CASE("learning-rate trace is non-increasing with exact halvings") {
    Task t = easy_task(3);
    TrainConfig cfg;
    cfg.max_epochs = 60;
    cfg.seed = 3;
    const auto [model, run] = train(t.init, t.pair.source.train.features, t.loss,
                                    t.pair.source.validation, cfg);
    REQUIRE(run.lr.front() == cfg.initial_lr);
    for (std::size_t i = 1; i < run.lr.size(); ++i) {
        REQUIRE(run.lr[i] <= run.lr[i - 1]);
        REQUIRE((run.lr[i] == run.lr[i - 1] || run.lr[i] == 0.5 * run.lr[i - 1]));
    }
    for (double lr : run.lr) REQUIRE(lr >= cfg.stop_ratio * cfg.initial_lr);
    for (const auto& h : run.halvings) REQUIRE(h.new_lr == 0.5 * run.lr[h.epoch - 1]);
}

TEST_CASE("halvings only fire when accuracy fails to improve") {
    Task t = easy_task(4);
    TrainConfig cfg;
    cfg.max_epochs = 60;
    cfg.halving_threshold = 0.0;
    cfg.seed = 4;
    const auto [model, run] = train(t.init, t.pair.source.train.features, t.loss,
                                    t.pair.source.validation, cfg);
    double best = 0.0;
    std::size_t expected_halvings = 0;
    for (std::size_t e = 0; e < run.val_accuracy.size(); ++e) {
        const double acc = run.val_accuracy[e];
        if (e > 0 && best > 0.0 && (acc - best) / best < 0.0) ++expected_halvings;
        best = std::max(best, acc);
    }
    REQUIRE(run.halvings.size() == expected_halvings);
}

TEST_CASE("returned model is the best-validation snapshot") {
    Task t = easy_task(5);
    TrainConfig cfg;
    cfg.max_epochs = 40;
    cfg.seed = 5;
    const auto [model, run] = train(t.init, t.pair.source.train.features, t.loss,
                                    t.pair.source.validation, cfg);
    REQUIRE(!run.val_accuracy.empty());
    const double best_in_trace =
        *std::max_element(run.val_accuracy.begin(), run.val_accuracy.end());
    REQUIRE(run.best_val_accuracy == best_in_trace);
    REQUIRE(evaluate(model, t.pair.source.validation) == best_in_trace);
}

TEST_CASE("training is deterministic bit for bit") {
    Task t = easy_task(6);
    TrainConfig cfg;
    cfg.max_epochs = 20;
    cfg.seed = 6;
    const auto [m1, r1] = train(t.init, t.pair.source.train.features, t.loss,
                                t.pair.source.validation, cfg);
    const auto [m2, r2] = train(t.init, t.pair.source.train.features, t.loss,
                                t.pair.source.validation, cfg);
    REQUIRE(m1 == m2);
    REQUIRE(r1.val_accuracy == r2.val_accuracy);
    REQUIRE(r1.lr == r2.lr);
    REQUIRE(r1.best_epoch == r2.best_epoch);
}

TEST_CASE("non-finite loss aborts with epoch and batch index") {
    Task t = easy_task(7);
    TrainConfig cfg;
    cfg.max_epochs = 5;
    BatchLossFn bad = [](const Matrix& logits, const std::vector<std::size_t>&) {
        LossValue v;
        v.value = std::numeric_limits<double>::infinity();
        v.dlogits = Matrix(logits.rows(), logits.cols());
        return v;
    };
    try {
        train(t.init, t.pair.source.train.features, bad, t.pair.source.validation, cfg);
        FAIL("expected NonFiniteLoss");
    } catch (const NonFiniteLoss& e) {
        REQUIRE(e.epoch == 1);
        REQUIRE(e.batch == 0);
    }
}

TEST_CASE("run log format") {
    Task t = easy_task(8);
    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.seed = 8;
    auto [model, run] = train(t.init, t.pair.source.train.features, t.loss,
                              t.pair.source.validation, cfg);
    run.test_accuracy = evaluate(model, t.pair.source.test);
    const std::string log = format_run_log(run);
    REQUIRE(log.find("# improvement measured against best-so-far") == 0);
    REQUIRE(log.find("epoch 1 lr 0.004000") != std::string::npos);
    REQUIRE(log.find("best_epoch ") != std::string::npos);
    REQUIRE(log.find("test_acc ") != std::string::npos);
}

TEST_CASE("easy task trains to high accuracy") {
    Task t = easy_task(9, 60);
    TrainConfig cfg;
    cfg.max_epochs = 80;
    cfg.seed = 9;
    const auto [model, run] = train(t.init, t.pair.source.train.features, t.loss,
                                    t.pair.source.validation, cfg);
    REQUIRE(run.best_val_accuracy > 0.9);
}
