#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "softshift/data.hpp"
#include "softshift/errors.hpp"
#include "softshift/losses.hpp"
#include "softshift/matrix.hpp"
#include "softshift/network.hpp"
#include "softshift/rng.hpp"

namespace softshift {

struct TrainConfig {
    double initial_lr = 0.004;
    double halving_threshold = 0.001;  // relative validation improvement
    double stop_ratio = 0.1;           // stop once lr < stop_ratio * initial_lr
    std::size_t batch_size = 64;
    std::size_t max_epochs = 200;
    std::uint64_t seed = 0;
    double rmsprop_decay = 0.9;
    double rmsprop_epsilon = 1e-8;
};

struct HalvingEvent {
    std::size_t epoch;  // 1-based epoch after which the halving fired
    double new_lr;
};

inline constexpr std::size_t kNoEpoch = std::numeric_limits<std::size_t>::max();

struct RunResult {
    std::vector<double> val_accuracy;  // one entry per completed epoch
    std::vector<double> lr;            // lr in effect during that epoch
    std::vector<HalvingEvent> halvings;
    std::size_t best_epoch = kNoEpoch;  // index into the traces
    double best_val_accuracy = 0.0;
    double test_accuracy = 0.0;
    double wall_seconds = 0.0;
};

inline double evaluate(const ModelParams& model, const LabeledDataset& data) {
    if (data.size() == 0) return 0.0;
    const Matrix logits = forward(model, data.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const double* row = logits.row(i);
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (row[c] > row[best]) best = c;
        if (best + 1 == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

// Loss over one minibatch: receives the logits for the selected rows and the
// dataset indices of those rows (to slice labels / per-sample soft targets).
using BatchLossFn =
    std::function<LossValue(const Matrix& logits, const std::vector<std::size_t>& indices)>;

namespace detail {
inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& indices) {
    Matrix out(indices.size(), m.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const double* src = m.row(indices[i]);
        double* dst = out.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) dst[j] = src[j];
    }
    return out;
}

inline void shuffle_indices(std::vector<std::size_t>& idx, SeededRng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.next_below(i)]);
}
}  // namespace detail

// Epoch loop with validation-driven halving: after each epoch, if the
// relative improvement over the best validation accuracy so far is below the
// threshold, the learning rate is halved; training stops once the rate falls
// under stop_ratio * initial_lr. Returns the best-validation snapshot.
inline std::pair<ModelParams, RunResult> train(const ModelParams& initial_model,
                                               const Matrix& train_features,
                                               const BatchLossFn& loss_fn,
                                               const LabeledDataset& validation,
                                               const TrainConfig& cfg) {
    if (!(cfg.stop_ratio > 0.0 && cfg.stop_ratio < 1.0))
        throw InvalidConfig("stop_ratio must be in (0,1)");
    if (cfg.halving_threshold < 0.0) throw InvalidConfig("halving threshold must be >= 0");
    if (cfg.batch_size == 0) throw InvalidConfig("batch_size must be >= 1");

    const auto t0 = std::chrono::steady_clock::now();
    ModelParams model = initial_model;
    ModelParams best_model = initial_model;
    RunResult result;
    RmspropState opt = RmspropState::for_model(model, cfg.initial_lr, cfg.rmsprop_decay,
                                               cfg.rmsprop_epsilon);
    // Shuffle stream independent of the init stream.
    SeededRng shuffle_rng = SeededRng(cfg.seed).split(0x51ULL);
    std::vector<std::size_t> order(train_features.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});

    double lr = cfg.initial_lr;
    double best_acc = 0.0;
    bool have_best = false;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        if (lr < cfg.stop_ratio * cfg.initial_lr) break;
        opt.learning_rate = lr;
        detail::shuffle_indices(order, shuffle_rng);
        std::vector<std::size_t> batch;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            batch.assign(order.begin() + start, order.begin() + end);
            const Matrix inputs = detail::gather_rows(train_features, batch);
            ForwardCache cache;
            const Matrix logits = forward(model, inputs, &cache);
            LossValue loss = loss_fn(logits, batch);
            if (!std::isfinite(loss.value))
                throw NonFiniteLoss(epoch, start / cfg.batch_size);
            const ModelParams grads = backward(model, cache, loss.dlogits);
            rmsprop_step(model, grads, opt);
        }

        const double acc = evaluate(model, validation);
        result.val_accuracy.push_back(acc);
        result.lr.push_back(lr);
        if (!have_best || acc > best_acc) {
            best_model = model;
            result.best_epoch = result.val_accuracy.size() - 1;
        }
        if (have_best) {
            // prev_best == 0 counts as improved, avoiding the 0/0 case.
            const bool improved =
                best_acc == 0.0 || (acc - best_acc) / best_acc >= cfg.halving_threshold;
            if (!improved) {
                lr *= 0.5;
                result.halvings.push_back({epoch, lr});
            }
        }
        if (acc > best_acc || !have_best) best_acc = acc;
        have_best = true;
    }

    result.best_val_accuracy = result.best_epoch == kNoEpoch
                                   ? 0.0
                                   : result.val_accuracy[result.best_epoch];
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(best_model), std::move(result)};
}

// Line-oriented run log; the header records that improvement is measured
// against the best validation accuracy so far.
inline std::string format_run_log(const RunResult& r) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(6);
    os << "# improvement measured against best-so-far validation accuracy\n";
    for (std::size_t e = 0; e < r.val_accuracy.size(); ++e)
        os << "epoch " << (e + 1) << " lr " << r.lr[e] << " val_acc " << r.val_accuracy[e]
           << "\n";
    if (r.best_epoch == kNoEpoch)
        os << "best_epoch none\n";
    else
        os << "best_epoch " << (r.best_epoch + 1) << "\n";
    os << "test_acc " << r.test_accuracy << "\n";
    return os.str();
}

}  // namespace softshift
