#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "softshift/softshift.hpp"

namespace fs = std::filesystem;
using namespace softshift;

namespace {

std::string read_text(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open config file: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot open for writing: " + path);
    f << text;
}

ExperimentConfig load_config(const std::string& path) {
    return parse_experiment_config(read_text(path));
}

std::uint64_t pick_seed(const ExperimentConfig& cfg, std::optional<std::uint64_t> override) {
    return override ? *override : cfg.seeds.front();
}

void save_domain_pair(const DomainPair& pair, const ShiftConfig& cfg, std::uint64_t seed,
                      const std::string& dir) {
    fs::create_directories(dir);
    auto put = [&](const char* name, const LabeledDataset& ds) {
        write_file(dir + "/" + name, save_dataset(ds, cfg, seed));
    };
    put("source_train.ds", pair.source.train);
    put("source_val.ds", pair.source.validation);
    put("source_test.ds", pair.source.test);
    put("target_train.ds", pair.target.train);
    put("target_val.ds", pair.target.validation);
    put("target_test.ds", pair.target.test);
    write_file(dir + "/parallel.pd", save_parallel(pair.parallel));
}

LabeledDataset load_ds(const std::string& path) {
    return load_dataset(read_file(path)).dataset;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed_override) {
    const ExperimentConfig cfg = load_config(config_path);
    const std::uint64_t seed = pick_seed(cfg, seed_override);
    SeededRng rng(detail::stream_seed(seed, "data"));
    const DomainPair pair = generate_domain_pair(cfg.data, rng);
    save_domain_pair(pair, cfg.data, seed, out_dir);
    std::cout << "wrote 7 dataset files to " << out_dir << " (seed " << seed << ")\n";
    return 0;
}

int cmd_train_source(const std::string& config_path, const std::string& data_dir,
                     const std::string& out_path, std::optional<std::uint64_t> seed_override,
                     const std::string& log_path) {
    const ExperimentConfig cfg = load_config(config_path);
    const std::uint64_t seed = pick_seed(cfg, seed_override);
    const LabeledDataset train = load_ds(data_dir + "/source_train.ds");
    const LabeledDataset val = load_ds(data_dir + "/source_val.ds");

    SeededRng init_rng(detail::stream_seed(seed, "init|source"));
    const ModelParams init = init_params(layer_specs(cfg), init_rng);
    TrainConfig tc = cfg.train;
    tc.seed = detail::stream_seed(seed, "train|source-only");
    BatchLossFn loss = [&train](const Matrix& logits, const std::vector<std::size_t>& idx) {
        Labels batch(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = train.labels[idx[i]];
        return hard_loss(logits, batch);
    };
    auto [model, run] = softshift::train(init, train.features, loss, val, tc);
    write_file(out_path, save_model(model));
    if (!log_path.empty()) write_text(log_path, format_run_log(run));
    std::cout << "source model: best val_acc " << run.best_val_accuracy << " after "
              << run.val_accuracy.size() << " epochs -> " << out_path << "\n";
    return 0;
}

int cmd_make_table(const std::string& model_path, const std::string& data_path,
                   double temperature, const std::string& out_path) {
    const ModelParams model = load_model(read_file(model_path));
    const LabeledDataset data = load_ds(data_path);
    const MeanSoftLabelTable table = compute_mean_soft_labels(model, data, temperature);
    write_file(out_path, save_table(table));
    std::cout << "mean soft label table: " << table.num_classes() << " classes, T="
              << temperature << ", diagonal dominance " << diagonal_dominance(table)
              << " -> " << out_path << "\n";
    return 0;
}

int cmd_adapt(const std::string& config_path, const std::string& data_dir,
              const std::string& model_path, const std::string& strategy,
              double temperature, double rho, bool soft_only, const std::string& table_path,
              const std::string& out_path, std::optional<std::uint64_t> seed_override,
              const std::string& log_path) {
    const ExperimentConfig cfg = load_config(config_path);
    const std::uint64_t seed = pick_seed(cfg, seed_override);
    const StrategyKind kind = strategy_from_string(strategy);
    const ModelParams teacher = load_model(read_file(model_path));

    const LabeledDataset train = load_ds(data_dir + "/target_train.ds");
    const LabeledDataset val = load_ds(data_dir + "/target_val.ds");
    const LabeledDataset test = load_ds(data_dir + "/target_test.ds");

    GridCell cell;
    cell.kind = kind;
    BatchLossFn loss;
    Matrix features = train.features;
    Labels labels = train.labels;
    LossWeights w;

    switch (kind) {
        case StrategyKind::FineTune:
        case StrategyKind::MeanSoftLabel: {
            cell.temperature = 1.0;
            MeanSoftLabelTable table;
            if (!table_path.empty()) {
                table = load_table(read_file(table_path));
                if (table.temperature != (kind == StrategyKind::FineTune ? 1.0 : temperature))
                    throw Error("table temperature " + std::to_string(table.temperature) +
                                " does not match requested temperature");
                if (table.source_fingerprint != model_fingerprint(teacher))
                    std::cerr << "warning: table fingerprint does not match the model "
                                 "checkpoint\n";
            } else {
                const LabeledDataset src = load_ds(data_dir + "/source_train.ds");
                table = compute_mean_soft_labels(
                    teacher, src, kind == StrategyKind::FineTune ? 1.0 : temperature);
            }
            cell.temperature = table.temperature;
            cell.soft_only = kind == StrategyKind::MeanSoftLabel && soft_only;
            cell.rho = kind == StrategyKind::FineTune || cell.soft_only
                           ? std::numeric_limits<double>::quiet_NaN()
                           : rho;
            w.temperature = table.temperature;
            w.soft_only = cell.soft_only;
            w.rho = kind == StrategyKind::FineTune || cell.soft_only ? 0.0 : rho;
            if (kind == StrategyKind::FineTune)
                cell.rho = std::numeric_limits<double>::quiet_NaN();
            loss = [table, labels, w](const Matrix& logits,
                                      const std::vector<std::size_t>& idx) {
                Labels batch(idx.size());
                for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = labels[idx[i]];
                return combined_loss(logits, batch, lookup(table, batch), w);
            };
            break;
        }
        case StrategyKind::KldReg:
        case StrategyKind::Distillation: {
            const double t = kind == StrategyKind::KldReg ? 1.0 : temperature;
            cell.temperature = t;
            cell.rho = rho;
            w.temperature = t;
            w.rho = rho;
            const SoftTargetBatch all = teacher_soft_targets(
                teacher, train.features, t, TargetProvenance::TeacherOnTarget);
            loss = [all, labels, w](const Matrix& logits,
                                    const std::vector<std::size_t>& idx) {
                Labels batch(idx.size());
                SoftTargetBatch targets;
                targets.temperature = all.temperature;
                targets.provenance = all.provenance;
                targets.probs = Matrix(idx.size(), all.probs.cols());
                for (std::size_t i = 0; i < idx.size(); ++i) {
                    batch[i] = labels[idx[i]];
                    for (std::size_t j = 0; j < all.probs.cols(); ++j)
                        targets.probs(i, j) = all.probs(idx[i], j);
                }
                return combined_loss(logits, batch, targets, w);
            };
            break;
        }
        case StrategyKind::TeacherStudent: {
            const ParallelDataset parallel = load_parallel(read_file(data_dir + "/parallel.pd"));
            features = parallel.target_features;
            labels = parallel.labels;
            w.temperature = 1.0;
            w.soft_only = true;
            const SoftTargetBatch all = teacher_soft_targets(
                teacher, parallel.source_features, 1.0,
                TargetProvenance::TeacherOnParallelSource);
            loss = [all, labels, w](const Matrix& logits,
                                    const std::vector<std::size_t>& idx) {
                Labels batch(idx.size());
                SoftTargetBatch targets;
                targets.temperature = all.temperature;
                targets.provenance = all.provenance;
                targets.probs = Matrix(idx.size(), all.probs.cols());
                for (std::size_t i = 0; i < idx.size(); ++i) {
                    batch[i] = labels[idx[i]];
                    for (std::size_t j = 0; j < all.probs.cols(); ++j)
                        targets.probs(i, j) = all.probs(idx[i], j);
                }
                return combined_loss(logits, batch, targets, w);
            };
            break;
        }
        default:
            throw Error(std::string("adapt supports adaptation strategies only; use "
                                    "`grid` for ") + to_string(kind));
    }

    TrainConfig tc = cfg.train;
    tc.seed = detail::stream_seed(seed, "train|" + cell.canonical_key());
    auto [model, run] = softshift::train(teacher, features, loss, val, tc);
    run.test_accuracy = evaluate(model, test);
    if (!out_path.empty()) write_file(out_path, save_model(model));
    if (!log_path.empty()) write_text(log_path, format_run_log(run));
    std::cout << cell.describe() << ": test_acc " << run.test_accuracy << ", best val_acc "
              << run.best_val_accuracy << "\n";
    return 0;
}

std::string log_file_name(const ResultRow& r) {
    std::ostringstream os;
    os << to_string(r.cell.kind);
    if (r.cell.has_temperature()) os << "_T" << r.cell.temperature;
    if (r.cell.soft_only)
        os << "_rho_inf";
    else if (!std::isnan(r.cell.rho))
        os << "_rho" << r.cell.rho;
    os << "_seed" << r.seed << ".log";
    return os.str();
}

int cmd_grid(const std::string& config_path, std::string out_dir) {
    const ExperimentConfig cfg = load_config(config_path);
    if (out_dir.empty()) out_dir = cfg.output_dir;
    const ResultsTable results = run_experiment(cfg);
    fs::create_directories(out_dir + "/logs");
    write_text(out_dir + "/results.tsv", emit_table(results, TableFormat::Tsv));
    write_text(out_dir + "/results.md", emit_table(results, TableFormat::Markdown));
    for (const auto& r : results.rows)
        write_text(out_dir + "/logs/" + log_file_name(r), format_run_log(r.run));
    std::cout << "wrote " << results.rows.size() << " rows to " << out_dir
              << "/results.tsv\n";
    return 0;
}

// Rebuilds rows from the raw (non-aggregate) lines of a results.tsv.
ResultsTable parse_results_tsv(const std::string& text) {
    ResultsTable table;
    std::istringstream in(text);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, '\t')) cells.push_back(cell);
        if (cells.size() != 8) throw Error("malformed results line: " + line);
        if (cells[3] == "agg") continue;
        ResultRow row;
        row.cell.kind = strategy_from_string(cells[0]);
        row.cell.temperature = cells[1] == "-" ? std::numeric_limits<double>::quiet_NaN()
                                               : std::stod(cells[1]);
        if (cells[2] == "inf")
            row.cell.soft_only = true;
        else if (cells[2] != "-")
            row.cell.rho = std::stod(cells[2]);
        row.seed = std::stoull(cells[3]);
        row.test_acc = std::stod(cells[4]);
        row.val_acc = std::stod(cells[5]);
        row.epochs = std::stoull(cells[6]);
        row.halvings = std::stoull(cells[7]);
        table.rows.push_back(row);
    }
    if (table.rows.empty()) throw Error("no result rows in input");
    return table;
}

int cmd_report(const std::string& results_path, const std::string& format) {
    const ResultsTable table = parse_results_tsv(read_text(results_path));
    if (format == "tsv")
        std::cout << emit_table(table, TableFormat::Tsv);
    else if (format == "markdown")
        std::cout << emit_table(table, TableFormat::Markdown);
    else
        throw Error("unknown format: " + format);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"softshift: domain adaptation experiments with mean soft labels"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, model_path, table_path, log_path;
    std::string strategy, format = "tsv", results_path;
    double temperature = 1.0, rho = 0.0;
    bool soft_only = false;
    std::optional<std::uint64_t> seed;

    auto* gen = app.add_subcommand("gen-data", "generate source/target dataset files");
    gen->add_option("--config", config_path, "config file")->required();
    gen->add_option("--out", out_path, "output directory")->required();
    gen->add_option("--seed", seed, "override seed");

    auto* trn = app.add_subcommand("train-source", "train the source model");
    trn->add_option("--config", config_path)->required();
    trn->add_option("--data", data_dir, "dataset directory")->required();
    trn->add_option("--out", out_path, "checkpoint path")->required();
    trn->add_option("--seed", seed);
    trn->add_option("--log", log_path, "run log path");

    auto* tbl = app.add_subcommand("make-table", "compute the mean soft label table");
    tbl->add_option("--model", model_path, "source checkpoint")->required();
    tbl->add_option("--data", data_dir, "source train dataset file")->required();
    tbl->add_option("--temperature", temperature)->check(CLI::PositiveNumber);
    tbl->add_option("--out", out_path, "table path")->required();

    auto* adp = app.add_subcommand("adapt", "run one adaptation strategy");
    adp->add_option("--config", config_path)->required();
    adp->add_option("--data", data_dir, "dataset directory")->required();
    adp->add_option("--model", model_path, "source checkpoint")->required();
    adp->add_option("--strategy", strategy)->required();
    adp->add_option("--temperature", temperature);
    adp->add_option("--rho", rho);
    adp->add_flag("--soft-only", soft_only, "train with soft loss alone (rho = inf)");
    adp->add_option("--table", table_path, "precomputed mean soft label table");
    adp->add_option("--out", out_path, "adapted checkpoint path");
    adp->add_option("--seed", seed);
    adp->add_option("--log", log_path);

    auto* grd = app.add_subcommand("grid", "run the full experiment grid");
    grd->add_option("--config", config_path)->required();
    grd->add_option("--out", out_path, "output directory (default from config)");

    auto* rep = app.add_subcommand("report", "re-emit a results table");
    rep->add_option("--results", results_path, "results.tsv path")->required();
    rep->add_option("--format", format, "tsv or markdown");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_path, seed);
        if (trn->parsed()) return cmd_train_source(config_path, data_dir, out_path, seed, log_path);
        if (tbl->parsed()) return cmd_make_table(model_path, data_dir, temperature, out_path);
        if (adp->parsed())
            return cmd_adapt(config_path, data_dir, model_path, strategy, temperature, rho,
                             soft_only, table_path, out_path, seed, log_path);
        if (grd->parsed()) return cmd_grid(config_path, out_path);
        if (rep->parsed()) return cmd_report(results_path, format);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
