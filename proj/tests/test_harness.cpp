#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <set>

#include "softshift/config.hpp"
#include "softshift/harness.hpp"

using namespace softshift;

namespace {

// Tiny scale so a full grid runs in well under a second per cell.
ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.data.num_classes = 4;
    cfg.data.feature_dim = 6;
    cfg.data.source_train_per_class = 30;
    cfg.data.target_train_per_class = 8;
    cfg.data.val_per_class = 10;
    cfg.data.test_per_class = 15;
    cfg.data.shift = 1.0;
    cfg.hidden = {12};
    cfg.train.max_epochs = 8;
    cfg.train.batch_size = 16;
    cfg.temperatures = {1, 2};
    cfg.rhos = {0, 0.5};
    cfg.seeds = {1, 2};
    return cfg;
}

const ResultRow* find_row(const ResultsTable& t, StrategyKind kind, double temp, double rho,
                          bool soft_only, std::uint64_t seed) {
    for (const auto& r : t.rows) {
        if (r.cell.kind != kind || r.seed != seed || r.cell.soft_only != soft_only) continue;
        if (r.cell.has_temperature() != !std::isnan(temp)) continue;
        if (!std::isnan(temp) && r.cell.temperature != temp) continue;
        if (!soft_only) {
            if (std::isnan(rho) != std::isnan(r.cell.rho)) continue;
            if (!std::isnan(rho) && r.cell.rho != rho) continue;
        }
        return &r;
    }
    return nullptr;
}

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

}  // namespace

TEST_CASE("config file parsing round trip") {
    const std::string text = R"(
# experiment configuration
[data]
classes = 6
dim = 12
source_train_per_class = 100
target_train_per_class = 10
shift = 2.5        # delta in sigma units
rotation = 0.4

[model]
hidden = 32, 16
activation = relu

[train]
initial_lr = 0.002
batch_size = 32
max_epochs = 50

[grid]
strategies = fine-tune, mean-soft-label
rhos = 0.1, 1
seeds = 7, 8, 9
output_dir = results/run1
)";
    const ExperimentConfig cfg = parse_experiment_config(text);
    REQUIRE(cfg.data.num_classes == 6);
    REQUIRE(cfg.data.feature_dim == 12);
    REQUIRE(cfg.data.shift == 2.5);
    REQUIRE(cfg.data.rotation == 0.4);
    REQUIRE(cfg.hidden == std::vector<std::size_t>{32, 16});
    REQUIRE(cfg.hidden_activation == Activation::Relu);
    REQUIRE(cfg.train.initial_lr == 0.002);
    REQUIRE(cfg.train.batch_size == 32);
    REQUIRE(cfg.strategies ==
            std::vector<StrategyKind>{StrategyKind::FineTune, StrategyKind::MeanSoftLabel});
    REQUIRE(cfg.rhos == std::vector<double>{0.1, 1});
    REQUIRE(cfg.seeds == std::vector<std::uint64_t>{7, 8, 9});
    REQUIRE(cfg.output_dir == "results/run1");
}

TEST_CASE("config parser rejects unknown keys and malformed lines") {
    REQUIRE_THROWS_AS(parse_experiment_config("[data]\nbogus = 1\n"), InvalidConfig);
    REQUIRE_THROWS_AS(parse_experiment_config("[nope]\n"), InvalidConfig);
    REQUIRE_THROWS_AS(parse_experiment_config("[data]\nclasses 10\n"), InvalidConfig);
    REQUIRE_THROWS_AS(parse_experiment_config("[data]\nclasses = ten\n"), InvalidConfig);
}

TEST_CASE("SOFTSHIFT_SEED overrides the seed list") {
    setenv("SOFTSHIFT_SEED", "42", 1);
    const ExperimentConfig cfg = parse_experiment_config("[grid]\nseeds = 1,2,3\n");
    unsetenv("SOFTSHIFT_SEED");
    REQUIRE(cfg.seeds == std::vector<std::uint64_t>{42});
}

TEST_CASE("grid enumeration matches the configured cross product") {
    ExperimentConfig cfg = tiny_config();
    const auto cells = enumerate_cells(cfg);
    // 5 singleton strategies + kld 2 rho + distillation 2T x 2rho + mean-soft 2 rho + inf.
    REQUIRE(cells.size() == 5 + 2 + 4 + 2 + 1);
    std::set<std::string> keys;
    for (const auto& c : cells) keys.insert(c.describe());
    REQUIRE(keys.size() == cells.size());  // no duplicates
}

TEST_CASE("single-strategy grid has one row per seed") {
    ExperimentConfig cfg = tiny_config();
    cfg.strategies = {StrategyKind::SourceOnly};
    const ResultsTable t = run_experiment(cfg);
    REQUIRE(t.rows.size() == cfg.seeds.size());
    for (const auto& r : t.rows) {
        REQUIRE(!r.cell.has_temperature());
        REQUIRE(!r.cell.has_rho());
    }
}

TEST_CASE("full tiny grid: completeness, teacher reuse, and reductions") {
    ExperimentConfig cfg = tiny_config();
    const ResultsTable t = run_experiment(cfg);
    const std::size_t cells = enumerate_cells(cfg).size();
    REQUIRE(t.rows.size() == cells * cfg.seeds.size());

    for (std::uint64_t seed : cfg.seeds) {
        std::set<std::string> fps;
        for (const auto& r : t.rows)
            if (r.seed == seed) fps.insert(r.teacher_fingerprint);
        REQUIRE(fps.size() == 1);
    }

    for (std::uint64_t seed : cfg.seeds) {
        // fine-tune == mean-soft-label at rho = 0.
        const auto* ft = find_row(t, StrategyKind::FineTune, kNan, kNan, false, seed);
        const auto* ms = find_row(t, StrategyKind::MeanSoftLabel, 1.0, 0.0, false, seed);
        REQUIRE(ft != nullptr);
        REQUIRE(ms != nullptr);
        REQUIRE(ft->test_acc == ms->test_acc);
        REQUIRE(ft->val_acc == ms->val_acc);
        REQUIRE(ft->epochs == ms->epochs);
        REQUIRE(ft->halvings == ms->halvings);

        // kld-reg == distillation at T = 1, matched rho.
        for (double rho : cfg.rhos) {
            const auto* kld = find_row(t, StrategyKind::KldReg, 1.0, rho, false, seed);
            const auto* dst = find_row(t, StrategyKind::Distillation, 1.0, rho, false, seed);
            REQUIRE(kld != nullptr);
            REQUIRE(dst != nullptr);
            REQUIRE(kld->test_acc == dst->test_acc);
            REQUIRE(kld->val_acc == dst->val_acc);
            REQUIRE(kld->epochs == dst->epochs);
            REQUIRE(kld->halvings == dst->halvings);
        }
    }
}

TEST_CASE("rerunning the experiment reproduces the table byte for byte") {
    ExperimentConfig cfg = tiny_config();
    cfg.strategies = {StrategyKind::FineTune, StrategyKind::MeanSoftLabel};
    cfg.seeds = {3};
    const std::string a = emit_table(run_experiment(cfg), TableFormat::Tsv);
    const std::string b = emit_table(run_experiment(cfg), TableFormat::Tsv);
    REQUIRE(a == b);
}

TEST_CASE("emit_table single row") {
    ResultsTable t;
    ResultRow r;
    r.cell.kind = StrategyKind::SourceOnly;
    r.seed = 1;
    r.test_acc = 0.5;
    r.val_acc = 0.625;
    r.epochs = 3;
    r.halvings = 1;
    t.rows.push_back(r);
    const std::string tsv = emit_table(t, TableFormat::Tsv);
    REQUIRE(tsv ==
            "strategy\tT\trho\tseed\ttest_acc\tval_acc\tepochs\thalvings\n"
            "source-only\t-\t-\t1\t0.5000\t0.6250\t3\t1\n"
            "source-only\t-\t-\tagg\t0.5000±0.0000\t0.6250±0.0000\t3.0000\t1.0000\n");
}

TEST_CASE("emit_table aggregates two seeds with the arithmetic mean") {
    ResultsTable t;
    for (int s = 1; s <= 2; ++s) {
        ResultRow r;
        r.cell.kind = StrategyKind::FineTune;
        r.seed = s;
        r.test_acc = s == 1 ? 0.4 : 0.6;
        r.val_acc = 0.5;
        r.epochs = 4;
        t.rows.push_back(r);
    }
    const std::string tsv = emit_table(t, TableFormat::Tsv);
    REQUIRE(tsv.find("agg\t0.5000±0.1414") != std::string::npos);
}

TEST_CASE("markdown output carries the same values as tsv") {
    ExperimentConfig cfg = tiny_config();
    cfg.strategies = {StrategyKind::TargetOnly};
    cfg.seeds = {1};
    const ResultsTable t = run_experiment(cfg);
    std::string tsv = emit_table(t, TableFormat::Tsv);
    std::string md = emit_table(t, TableFormat::Markdown);
    for (char& c : tsv)
        if (c == '\t') c = ' ';
    std::string flat_md;
    for (std::size_t i = 0; i < md.size(); ++i) {
        if (md[i] == '|') continue;
        flat_md += md[i];
    }
    // Every tsv data token appears in the markdown output.
    std::stringstream ss(tsv);
    std::string token;
    while (ss >> token) {
        if (token.find("---") != std::string::npos) continue;
        REQUIRE(flat_md.find(token) != std::string::npos);
    }
}

TEST_CASE("empty results table is rejected") {
    REQUIRE_THROWS_AS(emit_table(ResultsTable{}, TableFormat::Tsv), Error);
}

TEST_CASE("validate_experiment rejects degenerate grids") {
    ExperimentConfig cfg = tiny_config();
    cfg.seeds = {1, 1};
    REQUIRE_THROWS_AS(validate_experiment(cfg), InvalidConfig);
    cfg = tiny_config();
    cfg.rhos.clear();
    REQUIRE_THROWS_AS(validate_experiment(cfg), InvalidConfig);
    cfg = tiny_config();
    cfg.temperatures = {0.0};
    REQUIRE_THROWS_AS(validate_experiment(cfg), InvalidConfig);
}
