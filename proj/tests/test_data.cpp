#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>

#include "softshift/data.hpp"
#include "softshift/training.hpp"

using namespace softshift;

namespace {

ShiftConfig small_config() {
    ShiftConfig cfg;
    cfg.num_classes = 5;
    cfg.feature_dim = 10;
    cfg.source_train_per_class = 40;
    cfg.target_train_per_class = 10;
    cfg.val_per_class = 20;
    cfg.test_per_class = 40;
    cfg.separation = 3.0;
    return cfg;
}

// A quick linear probe trained on source data with the hard loss.
ModelParams train_probe(const DomainPair& pair, std::uint64_t seed) {
    SeededRng rng(seed);
    const std::size_t classes =
        *std::max_element(pair.source.train.labels.begin(), pair.source.train.labels.end());
    ModelParams init = init_params(
        {{pair.source.train.features.cols(), classes, Activation::Linear}}, rng);
    TrainConfig tc;
    tc.max_epochs = 30;
    tc.seed = seed;
    const auto& train_ds = pair.source.train;
    BatchLossFn loss = [&train_ds](const Matrix& logits, const std::vector<std::size_t>& idx) {
        Labels batch(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = train_ds.labels[idx[i]];
        return hard_loss(logits, batch);
    };
    return train(init, train_ds.features, loss, pair.source.validation, tc).first;
}

}  // namespace

TEST_CASE("generation is deterministic bit for bit") {
    const ShiftConfig cfg = small_config();
    SeededRng a(9), b(9);
    const DomainPair p1 = generate_domain_pair(cfg, a);
    const DomainPair p2 = generate_domain_pair(cfg, b);
    REQUIRE(p1.source.train == p2.source.train);
    REQUIRE(p1.target.test == p2.target.test);
    REQUIRE(p1.parallel == p2.parallel);
}

TEST_CASE("per-class counts are exact in every split") {
    const ShiftConfig cfg = small_config();
    SeededRng rng(3);
    const DomainPair pair = generate_domain_pair(cfg, rng);
    auto count = [&](const LabeledDataset& ds, std::size_t expected) {
        std::map<std::uint32_t, std::size_t> counts;
        for (auto label : ds.labels) ++counts[label];
        REQUIRE(counts.size() == cfg.num_classes);
        for (const auto& [label, n] : counts) REQUIRE(n == expected);
    };
    count(pair.source.train, cfg.source_train_per_class);
    count(pair.source.validation, cfg.val_per_class);
    count(pair.source.test, cfg.test_per_class);
    count(pair.target.train, cfg.target_train_per_class);
    count(pair.target.validation, cfg.val_per_class);
    count(pair.target.test, cfg.test_per_class);
}

TEST_CASE("parallel pairs share labels and differ only by the domain transform") {
    ShiftConfig cfg = small_config();
    cfg.shift = 2.0;
    SeededRng rng(4);
    const DomainPair pair = generate_domain_pair(cfg, rng);
    REQUIRE(pair.parallel.source_features.rows() == pair.parallel.target_features.rows());
    REQUIRE(pair.parallel.labels.size() == pair.parallel.source_features.rows());
    // With rotation = 0 the pairwise offset has length exactly shift * sigma.
    for (std::size_t i = 0; i < pair.parallel.labels.size(); ++i) {
        double dist = 0.0;
        for (std::size_t j = 0; j < cfg.feature_dim; ++j) {
            const double d =
                pair.parallel.target_features(i, j) - pair.parallel.source_features(i, j);
            dist += d * d;
        }
        REQUIRE_THAT(std::sqrt(dist), Catch::Matchers::WithinAbs(2.0, 1e-9));
    }
}

TEST_CASE("null shift leaves domains statistically equal") {
    const ShiftConfig cfg = small_config();
    SeededRng rng(5);
    const DomainPair pair = generate_domain_pair(cfg, rng);
    const ModelParams probe = train_probe(pair, 11);
    const double acc_source = evaluate(probe, pair.source.test);
    const double acc_target = evaluate(probe, pair.target.test);
    REQUIRE(std::abs(acc_source - acc_target) < 0.1);
}

TEST_CASE("huge shift drives a source-trained probe to chance on target") {
    ShiftConfig cfg = small_config();
    cfg.num_classes = 10;
    cfg.shift = 25.0;
    double total = 0.0;
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        cfg.geometry_seed = 100 + seed;
        SeededRng rng(seed);
        const DomainPair pair = generate_domain_pair(cfg, rng);
        total += evaluate(train_probe(pair, seed), pair.target.test);
    }
    REQUIRE(total / 5.0 <= 1.0 / cfg.num_classes + 0.1);
}

TEST_CASE("target-test accuracy decays monotonically with the shift") {
    const std::vector<double> shifts = {0.0, 1.0, 2.0, 4.0};
    std::vector<double> means, ses;
    for (double shift : shifts) {
        ShiftConfig cfg = small_config();
        cfg.shift = shift;
        std::vector<double> accs;
        for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
            SeededRng rng(seed);
            const DomainPair pair = generate_domain_pair(cfg, rng);
            accs.push_back(evaluate(train_probe(pair, seed), pair.target.test));
        }
        double mean = 0.0;
        for (double a : accs) mean += a;
        mean /= accs.size();
        double var = 0.0;
        for (double a : accs) var += (a - mean) * (a - mean);
        means.push_back(mean);
        ses.push_back(std::sqrt(var / (accs.size() - 1)) / std::sqrt(double(accs.size())));
    }
    for (std::size_t i = 1; i < means.size(); ++i)
        REQUIRE(means[i] <= means[i - 1] + ses[i - 1]);
}

TEST_CASE("label noise respects the pairing") {
    ShiftConfig cfg = small_config();
    cfg.label_noise = 0.3;
    SeededRng rng(6);
    const DomainPair pair = generate_domain_pair(cfg, rng);
    std::size_t flipped = 0;
    std::size_t i = 0;
    for (std::size_t c = 0; c < cfg.num_classes; ++c)
        for (std::size_t s = 0; s < cfg.source_train_per_class; ++s, ++i)
            if (pair.source.train.labels[i] != c + 1) ++flipped;
    const double rate = double(flipped) / double(pair.source.train.size());
    REQUIRE(rate > 0.15);
    REQUIRE(rate < 0.45);
}

TEST_CASE("invalid configs are rejected") {
    ShiftConfig cfg = small_config();
    cfg.label_noise = 1.0;
    SeededRng rng(1);
    REQUIRE_THROWS_AS(generate_domain_pair(cfg, rng), InvalidConfig);
    cfg = small_config();
    cfg.num_classes = 1;
    REQUIRE_THROWS_AS(generate_domain_pair(cfg, rng), InvalidConfig);
}

TEST_CASE("dataset round trip is exact") {
    const ShiftConfig cfg = small_config();
    SeededRng rng(7);
    const DomainPair pair = generate_domain_pair(cfg, rng);
    const auto bytes = save_dataset(pair.target.train, cfg, 7);
    const LoadedDataset loaded = load_dataset(bytes);
    REQUIRE(loaded.dataset == pair.target.train);
    REQUIRE(loaded.config == cfg);
    REQUIRE(loaded.seed == 7);
}

TEST_CASE("length mismatch is caught on load") {
    const ShiftConfig cfg = small_config();
    SeededRng rng(8);
    const DomainPair pair = generate_domain_pair(cfg, rng);
    auto bytes = save_dataset(pair.target.train, cfg, 8);
    bytes.resize(bytes.size() - 2);
    REQUIRE_THROWS_AS(load_dataset(bytes), CorruptDataset);
    bytes = save_dataset(pair.target.train, cfg, 8);
    bytes.push_back(0);
    REQUIRE_THROWS_AS(load_dataset(bytes), CorruptDataset);
}

TEST_CASE("parallel set round trip is exact") {
    const ShiftConfig cfg = small_config();
    SeededRng rng(9);
    const DomainPair pair = generate_domain_pair(cfg, rng);
    REQUIRE(load_parallel(save_parallel(pair.parallel)) == pair.parallel);
}
