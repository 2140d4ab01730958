#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "softshift/data.hpp"
#include "softshift/errors.hpp"
#include "softshift/losses.hpp"
#include "softshift/matrix.hpp"
#include "softshift/network.hpp"
#include "softshift/rng.hpp"
#include "softshift/soft_labels.hpp"
#include "softshift/training.hpp"

namespace softshift {

enum class StrategyKind : std::uint8_t {
    SourceOnly,
    TargetOnly,
    SourcePlusTarget,
    FineTune,
    KldReg,
    Distillation,
    TeacherStudent,
    MeanSoftLabel,
};

inline const char* to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::SourceOnly: return "source-only";
        case StrategyKind::TargetOnly: return "target-only";
        case StrategyKind::SourcePlusTarget: return "source-plus-target";
        case StrategyKind::FineTune: return "fine-tune";
        case StrategyKind::KldReg: return "kld-reg";
        case StrategyKind::Distillation: return "distillation";
        case StrategyKind::TeacherStudent: return "teacher-student";
        case StrategyKind::MeanSoftLabel: return "mean-soft-label";
    }
    return "?";
}

inline StrategyKind strategy_from_string(const std::string& s) {
    for (int k = 0; k <= static_cast<int>(StrategyKind::MeanSoftLabel); ++k)
        if (s == to_string(static_cast<StrategyKind>(k)))
            return static_cast<StrategyKind>(k);
    throw InvalidConfig("unknown strategy: " + s);
}

// One point of the experiment grid. T/rho are NaN for strategies that do
// not take them; soft_only marks the rho = infinity mean-soft-label cell.
struct GridCell {
    StrategyKind kind = StrategyKind::SourceOnly;
    double temperature = std::numeric_limits<double>::quiet_NaN();
    double rho = std::numeric_limits<double>::quiet_NaN();
    bool soft_only = false;

    bool has_temperature() const { return !std::isnan(temperature); }
    bool has_rho() const { return !std::isnan(rho) || soft_only; }

    std::string describe() const {
        std::ostringstream os;
        os << to_string(kind);
        if (has_temperature()) os << " T=" << temperature;
        if (soft_only)
            os << " rho=inf";
        else if (!std::isnan(rho))
            os << " rho=" << rho;
        return os.str();
    }

    // fine-tune and kld-reg are special cases of mean-soft-label (rho=0) and
    // distillation (T=1); the canonical key makes the reduced pairs share
    // RNG streams so the equivalences hold bit-for-bit.
    std::string canonical_key() const {
        std::ostringstream os;
        switch (kind) {
            case StrategyKind::FineTune:
                os << "mean-soft-label|T=1|rho=0";
                break;
            case StrategyKind::KldReg:
                os << "distillation|T=1|rho=" << rho;
                break;
            default:
                os << to_string(kind);
                if (has_temperature()) os << "|T=" << temperature;
                if (soft_only)
                    os << "|rho=inf";
                else if (!std::isnan(rho))
                    os << "|rho=" << rho;
        }
        return os.str();
    }

    // Unset axes are NaN, so the defaulted comparison would make a cell
    // unequal to itself; compare NaN-as-equal instead.
    friend bool operator==(const GridCell& a, const GridCell& b) {
        auto axis_eq = [](double x, double y) {
            return (std::isnan(x) && std::isnan(y)) || x == y;
        };
        return a.kind == b.kind && axis_eq(a.temperature, b.temperature) &&
               axis_eq(a.rho, b.rho) && a.soft_only == b.soft_only;
    }
};

struct ExperimentConfig {
    ShiftConfig data;
    std::vector<std::size_t> hidden = {64, 64};
    Activation hidden_activation = Activation::Tanh;
    TrainConfig train;
    std::vector<StrategyKind> strategies = {
        StrategyKind::SourceOnly,     StrategyKind::TargetOnly,
        StrategyKind::SourcePlusTarget, StrategyKind::FineTune,
        StrategyKind::KldReg,         StrategyKind::Distillation,
        StrategyKind::TeacherStudent, StrategyKind::MeanSoftLabel,
    };
    std::vector<double> temperatures = {1, 2, 5};  // distillation T grid
    std::vector<double> rhos = {0.1, 0.2, 0.5, 1};
    bool mean_soft_soft_only = true;  // include the rho = infinity cell
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::string output_dir = "out";
};

inline std::vector<LayerSpec> layer_specs(const ExperimentConfig& cfg) {
    std::vector<LayerSpec> specs;
    std::size_t in = cfg.data.feature_dim;
    for (std::size_t h : cfg.hidden) {
        specs.push_back({in, h, cfg.hidden_activation});
        in = h;
    }
    specs.push_back({in, cfg.data.num_classes, Activation::Linear});
    return specs;
}

inline void validate_experiment(const ExperimentConfig& cfg) {
    validate_config(cfg.data);
    if (cfg.strategies.empty()) throw InvalidConfig("strategy list is empty");
    if (cfg.temperatures.empty()) throw InvalidConfig("temperature grid is empty");
    if (cfg.rhos.empty()) throw InvalidConfig("rho grid is empty");
    if (cfg.seeds.empty()) throw InvalidConfig("seed list is empty");
    for (double t : cfg.temperatures)
        if (!(t > 0.0)) throw InvalidConfig("temperatures must be > 0");
    for (double r : cfg.rhos)
        if (!(r >= 0.0)) throw InvalidConfig("rhos must be >= 0");
    std::vector<std::uint64_t> s = cfg.seeds;
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end())
        throw InvalidConfig("seeds must be distinct");
}

inline std::vector<GridCell> enumerate_cells(const ExperimentConfig& cfg) {
    std::vector<GridCell> cells;
    for (StrategyKind kind : cfg.strategies) {
        GridCell base;
        base.kind = kind;
        switch (kind) {
            case StrategyKind::SourceOnly:
            case StrategyKind::TargetOnly:
            case StrategyKind::SourcePlusTarget:
            case StrategyKind::FineTune:
            case StrategyKind::TeacherStudent:
                cells.push_back(base);
                break;
            case StrategyKind::KldReg:
                base.temperature = 1.0;
                for (double r : cfg.rhos) {
                    base.rho = r;
                    cells.push_back(base);
                }
                break;
            case StrategyKind::Distillation:
                for (double t : cfg.temperatures) {
                    base.temperature = t;
                    for (double r : cfg.rhos) {
                        base.rho = r;
                        cells.push_back(base);
                    }
                }
                break;
            case StrategyKind::MeanSoftLabel:
                base.temperature = 1.0;
                for (double r : cfg.rhos) {
                    base.rho = r;
                    cells.push_back(base);
                }
                if (cfg.mean_soft_soft_only) {
                    base.rho = std::numeric_limits<double>::quiet_NaN();
                    base.soft_only = true;
                    cells.push_back(base);
                }
                break;
        }
    }
    return cells;
}

struct ResultRow {
    GridCell cell;
    std::uint64_t seed = 0;
    double test_acc = 0.0;
    double val_acc = 0.0;
    std::size_t epochs = 0;
    std::size_t halvings = 0;
    std::string teacher_fingerprint;
    RunResult run;  // full trace, for per-run logs
};

struct ResultsTable {
    std::vector<ResultRow> rows;
};

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
    return h;
}

namespace detail {

struct SeedContext {
    DomainPair data;
    ModelParams teacher;
    ResultRow teacher_row;  // metrics of the source-only run
    std::string teacher_fp;
    std::map<double, MeanSoftLabelTable> tables;  // keyed by temperature
};

inline std::uint64_t stream_seed(std::uint64_t seed, std::string_view label) {
    std::uint64_t sm = seed ^ fnv1a64(label);
    return splitmix64_next(sm);
}

inline ResultRow run_cell_training(const GridCell& cell, const ModelParams& init,
                                   const Matrix& features, const BatchLossFn& loss_fn,
                                   const LabeledDataset& validation,
                                   const LabeledDataset& test, const TrainConfig& base_cfg,
                                   std::uint64_t seed) {
    TrainConfig cfg = base_cfg;
    cfg.seed = stream_seed(seed, "train|" + cell.canonical_key());
    auto [model, run] = train(init, features, loss_fn, validation, cfg);
    run.test_accuracy = evaluate(model, test);
    ResultRow row;
    row.cell = cell;
    row.seed = seed;
    row.test_acc = run.test_accuracy;
    row.val_acc = run.best_val_accuracy;
    row.epochs = run.val_accuracy.size();
    row.halvings = run.halvings.size();
    row.run = std::move(run);
    return row;
}

inline SeedContext build_seed_context(const ExperimentConfig& cfg, std::uint64_t seed) {
    SeedContext ctx;
    SeededRng data_rng(stream_seed(seed, "data"));
    ctx.data = generate_domain_pair(cfg.data, data_rng);

    SeededRng init_rng(stream_seed(seed, "init|source"));
    const ModelParams init = init_params(layer_specs(cfg), init_rng);
    TrainConfig tc = cfg.train;
    tc.seed = stream_seed(seed, "train|source-only");
    const auto& labels = ctx.data.source.train.labels;
    BatchLossFn hard = [&labels](const Matrix& logits, const std::vector<std::size_t>& idx) {
        Labels batch(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = labels[idx[i]];
        return hard_loss(logits, batch);
    };
    auto [model, run] = train(init, ctx.data.source.train.features, hard,
                              ctx.data.source.validation, tc);
    run.test_accuracy = evaluate(model, ctx.data.target.test);
    ctx.teacher = std::move(model);
    ctx.teacher_fp = hex(model_fingerprint(ctx.teacher));

    ctx.teacher_row.cell = GridCell{StrategyKind::SourceOnly};
    ctx.teacher_row.seed = seed;
    ctx.teacher_row.test_acc = run.test_accuracy;
    ctx.teacher_row.val_acc = run.best_val_accuracy;
    ctx.teacher_row.epochs = run.val_accuracy.size();
    ctx.teacher_row.halvings = run.halvings.size();
    ctx.teacher_row.teacher_fingerprint = ctx.teacher_fp;
    ctx.teacher_row.run = std::move(run);
    return ctx;
}

inline const MeanSoftLabelTable& mean_table(SeedContext& ctx, const ExperimentConfig& cfg,
                                            double temperature) {
    auto it = ctx.tables.find(temperature);
    if (it == ctx.tables.end())
        it = ctx.tables
                 .emplace(temperature, compute_mean_soft_labels(
                                           ctx.teacher, ctx.data.source.train, temperature))
                 .first;
    return it->second;
}

inline ResultRow run_cell(const ExperimentConfig& cfg, SeedContext& ctx, const GridCell& cell,
                          std::uint64_t seed) {
    const auto& target = ctx.data.target;
    const Labels& target_labels = target.train.labels;

    auto hard_on = [](const Labels& all) {
        return [&all](const Matrix& logits, const std::vector<std::size_t>& idx) {
            Labels batch(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = all[idx[i]];
            return hard_loss(logits, batch);
        };
    };

    switch (cell.kind) {
        case StrategyKind::SourceOnly: {
            ResultRow row = ctx.teacher_row;
            row.cell = cell;
            return row;
        }
        case StrategyKind::TargetOnly: {
            SeededRng init_rng(stream_seed(seed, "init|target-only"));
            const ModelParams init = init_params(layer_specs(cfg), init_rng);
            return run_cell_training(cell, init, target.train.features,
                                     hard_on(target_labels), target.validation, target.test,
                                     cfg.train, seed);
        }
        case StrategyKind::SourcePlusTarget: {
            const auto& src = ctx.data.source.train;
            Matrix features(src.size() + target.train.size(), src.features.cols());
            Labels labels;
            labels.reserve(features.rows());
            std::copy(src.features.data().begin(), src.features.data().end(),
                      features.data().begin());
            std::copy(target.train.features.data().begin(),
                      target.train.features.data().end(),
                      features.data().begin() + src.features.data().size());
            labels.insert(labels.end(), src.labels.begin(), src.labels.end());
            labels.insert(labels.end(), target_labels.begin(), target_labels.end());
            SeededRng init_rng(stream_seed(seed, "init|source-plus-target"));
            const ModelParams init = init_params(layer_specs(cfg), init_rng);
            // Union order is randomized by the per-epoch seeded shuffle.
            auto loss = [labels = std::move(labels)](const Matrix& logits,
                                                     const std::vector<std::size_t>& idx) {
                Labels batch(idx.size());
                for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = labels[idx[i]];
                return hard_loss(logits, batch);
            };
            return run_cell_training(cell, init, features, loss, target.validation,
                                     target.test, cfg.train, seed);
        }
        case StrategyKind::FineTune:
        case StrategyKind::MeanSoftLabel: {
            // fine-tune runs the mean-soft-label path with rho = 0, so the
            // rho -> 0 reduction is exact by construction.
            const double t = cell.has_temperature() ? cell.temperature : 1.0;
            const MeanSoftLabelTable& table = mean_table(ctx, cfg, t);
            LossWeights w;
            w.temperature = t;
            w.soft_only = cell.soft_only;
            w.rho = cell.kind == StrategyKind::FineTune ? 0.0
                    : cell.soft_only                    ? 0.0
                                                        : cell.rho;
            auto loss = [&table, &target_labels, w](const Matrix& logits,
                                                    const std::vector<std::size_t>& idx) {
                Labels batch(idx.size());
                for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = target_labels[idx[i]];
                const SoftTargetBatch targets = lookup(table, batch);
                return combined_loss(logits, batch, targets, w);
            };
            return run_cell_training(cell, ctx.teacher, target.train.features, loss,
                                     target.validation, target.test, cfg.train, seed);
        }
        case StrategyKind::KldReg:
        case StrategyKind::Distillation: {
            const double t = cell.temperature;
            const SoftTargetBatch all_targets = teacher_soft_targets(
                ctx.teacher, target.train.features, t, TargetProvenance::TeacherOnTarget);
            LossWeights w;
            w.temperature = t;
            w.rho = cell.rho;
            auto loss = [all_targets, &target_labels, w](
                            const Matrix& logits, const std::vector<std::size_t>& idx) {
                Labels batch(idx.size());
                SoftTargetBatch targets;
                targets.temperature = all_targets.temperature;
                targets.provenance = all_targets.provenance;
                targets.probs = Matrix(idx.size(), all_targets.probs.cols());
                for (std::size_t i = 0; i < idx.size(); ++i) {
                    batch[i] = target_labels[idx[i]];
                    const double* src = all_targets.probs.row(idx[i]);
                    double* dst = targets.probs.row(i);
                    for (std::size_t j = 0; j < targets.probs.cols(); ++j) dst[j] = src[j];
                }
                return combined_loss(logits, batch, targets, w);
            };
            return run_cell_training(cell, ctx.teacher, target.train.features, loss,
                                     target.validation, target.test, cfg.train, seed);
        }
        case StrategyKind::TeacherStudent: {
            // Pure soft loss on parallel pairs at T=1; no hard branch.
            const SoftTargetBatch all_targets =
                teacher_soft_targets(ctx.teacher, ctx.data.parallel.source_features, 1.0,
                                     TargetProvenance::TeacherOnParallelSource);
            LossWeights w;
            w.temperature = 1.0;
            w.soft_only = true;
            const Labels& par_labels = ctx.data.parallel.labels;
            auto loss = [all_targets, &par_labels, w](const Matrix& logits,
                                                      const std::vector<std::size_t>& idx) {
                Labels batch(idx.size());
                SoftTargetBatch targets;
                targets.temperature = all_targets.temperature;
                targets.provenance = all_targets.provenance;
                targets.probs = Matrix(idx.size(), all_targets.probs.cols());
                for (std::size_t i = 0; i < idx.size(); ++i) {
                    batch[i] = par_labels[idx[i]];
                    const double* src = all_targets.probs.row(idx[i]);
                    double* dst = targets.probs.row(i);
                    for (std::size_t j = 0; j < targets.probs.cols(); ++j) dst[j] = src[j];
                }
                return combined_loss(logits, batch, targets, w);
            };
            return run_cell_training(cell, ctx.teacher, ctx.data.parallel.target_features,
                                     loss, target.validation, target.test, cfg.train, seed);
        }
    }
    throw Error("unreachable strategy kind");
}

}  // namespace detail

inline ResultsTable run_experiment(const ExperimentConfig& cfg) {
    validate_experiment(cfg);
    const std::vector<GridCell> cells = enumerate_cells(cfg);
    ResultsTable table;
    for (std::uint64_t seed : cfg.seeds) {
        detail::SeedContext ctx = detail::build_seed_context(cfg, seed);
        for (const GridCell& cell : cells) {
            try {
                ResultRow row = detail::run_cell(cfg, ctx, cell, seed);
                row.teacher_fingerprint = ctx.teacher_fp;
                table.rows.push_back(std::move(row));
            } catch (const Error& e) {
                throw Error("grid cell [" + cell.describe() + " seed=" +
                            std::to_string(seed) + "] failed: " + e.what());
            }
        }
    }
    std::stable_sort(table.rows.begin(), table.rows.end(),
                     [](const ResultRow& a, const ResultRow& b) {
                         if (a.cell.kind != b.cell.kind) return a.cell.kind < b.cell.kind;
                         const double at = a.cell.has_temperature() ? a.cell.temperature : -1;
                         const double bt = b.cell.has_temperature() ? b.cell.temperature : -1;
                         if (at != bt) return at < bt;
                         // soft-only (rho = inf) sorts after all finite rho.
                         const double ar = a.cell.soft_only
                                               ? std::numeric_limits<double>::infinity()
                                               : (std::isnan(a.cell.rho) ? -1 : a.cell.rho);
                         const double br = b.cell.soft_only
                                               ? std::numeric_limits<double>::infinity()
                                               : (std::isnan(b.cell.rho) ? -1 : b.cell.rho);
                         if (ar != br) return ar < br;
                         return a.seed < b.seed;
                     });
    return table;
}

namespace detail {

inline std::string format4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

inline std::string format_axis(double v, bool soft_only = false) {
    if (soft_only) return "inf";
    if (std::isnan(v)) return "-";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

struct Aggregate {
    GridCell cell;
    std::size_t count = 0;
    double mean_test = 0, std_test = 0;
    double mean_val = 0, std_val = 0;
    double mean_epochs = 0, mean_halvings = 0;
};

inline std::vector<Aggregate> aggregate_rows(const ResultsTable& results) {
    std::vector<Aggregate> aggs;
    std::size_t i = 0;
    while (i < results.rows.size()) {
        std::size_t j = i;
        while (j < results.rows.size() && results.rows[j].cell == results.rows[i].cell) ++j;
        Aggregate a;
        a.cell = results.rows[i].cell;
        a.count = j - i;
        for (std::size_t k = i; k < j; ++k) {
            a.mean_test += results.rows[k].test_acc;
            a.mean_val += results.rows[k].val_acc;
            a.mean_epochs += static_cast<double>(results.rows[k].epochs);
            a.mean_halvings += static_cast<double>(results.rows[k].halvings);
        }
        const double n = static_cast<double>(a.count);
        a.mean_test /= n;
        a.mean_val /= n;
        a.mean_epochs /= n;
        a.mean_halvings /= n;
        if (a.count > 1) {
            double st = 0, sv = 0;
            for (std::size_t k = i; k < j; ++k) {
                st += (results.rows[k].test_acc - a.mean_test) *
                      (results.rows[k].test_acc - a.mean_test);
                sv += (results.rows[k].val_acc - a.mean_val) *
                      (results.rows[k].val_acc - a.mean_val);
            }
            a.std_test = std::sqrt(st / (n - 1));
            a.std_val = std::sqrt(sv / (n - 1));
        }
        aggs.push_back(a);
        i = j;
    }
    return aggs;
}

}  // namespace detail

enum class TableFormat { Tsv, Markdown };

// Stable column order and fixed 4-decimal accuracy formatting; the output
// is byte-identical for identical inputs.
inline std::string emit_table(const ResultsTable& results, TableFormat format) {
    if (results.rows.empty()) throw Error("emit_table: empty results");
    using detail::format4;
    using detail::format_axis;
    const char* sep = format == TableFormat::Tsv ? "\t" : " | ";
    std::ostringstream os;
    auto line = [&](std::initializer_list<std::string> cells) {
        if (format == TableFormat::Markdown) os << "| ";
        bool first = true;
        for (const auto& c : cells) {
            if (!first) os << sep;
            os << c;
            first = false;
        }
        if (format == TableFormat::Markdown) os << " |";
        os << "\n";
    };
    line({"strategy", "T", "rho", "seed", "test_acc", "val_acc", "epochs", "halvings"});
    if (format == TableFormat::Markdown)
        line({"---", "---", "---", "---", "---", "---", "---", "---"});
    for (const auto& r : results.rows)
        line({to_string(r.cell.kind), format_axis(r.cell.temperature),
              format_axis(r.cell.rho, r.cell.soft_only), std::to_string(r.seed),
              format4(r.test_acc), format4(r.val_acc), std::to_string(r.epochs),
              std::to_string(r.halvings)});
    for (const auto& a : detail::aggregate_rows(results))
        line({to_string(a.cell.kind), format_axis(a.cell.temperature),
              format_axis(a.cell.rho, a.cell.soft_only), "agg",
              format4(a.mean_test) + "±" + format4(a.std_test),
              format4(a.mean_val) + "±" + format4(a.std_val), format4(a.mean_epochs),
              format4(a.mean_halvings)});
    return os.str();
}

}  // namespace softshift
