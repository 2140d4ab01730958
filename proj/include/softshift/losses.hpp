#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "softshift/errors.hpp"
#include "softshift/matrix.hpp"
#include "softshift/network.hpp"
#include "softshift/softmax.hpp"

namespace softshift {

// Class labels are 1-based (1..D_C) throughout.
using Labels = std::vector<std::uint32_t>;

enum class TargetProvenance : std::uint8_t {
    TeacherOnTarget = 0,
    TeacherOnParallelSource = 1,
    MeanTable = 2,
};

struct SoftTargetBatch {
    Matrix probs;  // one probability row per sample
    double temperature = 1.0;
    TargetProvenance provenance = TargetProvenance::TeacherOnTarget;
};

// Exactly one of finite rho / soft_only is active.
struct LossWeights {
    double temperature = 1.0;
    double rho = 0.0;
    bool soft_only = false;
};

struct LossValue {
    double value = 0.0;
    Matrix dlogits;
};

inline void check_labels(const Labels& labels, std::size_t num_classes) {
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 1 || labels[i] > num_classes)
            throw LabelOutOfRange("label " + std::to_string(labels[i]) + " at sample " +
                                  std::to_string(i) + " outside 1.." +
                                  std::to_string(num_classes));
}

// Mean cross entropy against one-hot labels, probabilities at T=1.
// Gradient per sample is (p - onehot)/N.
inline LossValue hard_loss(const Matrix& logits, const Labels& labels) {
    if (labels.size() != logits.rows())
        throw ShapeMismatch("hard_loss: label count != batch rows");
    check_labels(labels, logits.cols());
    const std::size_t n = logits.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    LossValue out;
    out.dlogits = Matrix(n, logits.cols());
    std::vector<double> logp(logits.cols());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        log_softmax_tempered_row({logits.row(i), logits.cols()}, 1.0, logp);
        const std::size_t label = labels[i] - 1;
        total += -logp[label];
        double* g = out.dlogits.row(i);
        for (std::size_t c = 0; c < logits.cols(); ++c) g[c] = std::exp(logp[c]) * inv_n;
        g[label] -= inv_n;
    }
    out.value = total * inv_n;
    return out;
}

// Validates the simplex invariant; rows off by more than tol are rejected,
// rows within tol are renormalized in place.
inline void validate_targets(Matrix& targets, double tol = 1e-6) {
    for (std::size_t i = 0; i < targets.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t c = 0; c < targets.cols(); ++c) {
            const double v = targets(i, c);
            if (!(v >= 0.0 && v <= 1.0 + tol))
                throw InvalidTargets("target entry out of [0,1] at row " + std::to_string(i));
            sum += v;
        }
        if (std::abs(sum - 1.0) > tol)
            throw InvalidTargets("target row " + std::to_string(i) + " sums to " +
                                 std::to_string(sum));
        // Drift at rounding scale is left alone; larger in-tolerance drift
        // (accumulated float error in mean tables) is renormalized.
        if (std::abs(sum - 1.0) > 1e-12)
            for (std::size_t c = 0; c < targets.cols(); ++c) targets(i, c) /= sum;
    }
}

// Mean cross entropy of the model's tempered output against probability
// targets. Raw gradient per logit is (q_model - target)/(N*T); the T^2
// scaling for combined objectives is applied by combined_loss, not here.
inline LossValue soft_cross_entropy(const Matrix& logits, const SoftTargetBatch& targets,
                                    double temperature) {
    if (targets.probs.rows() != logits.rows() || targets.probs.cols() != logits.cols())
        throw ShapeMismatch("soft_cross_entropy: target shape != logits shape");
    Matrix t = targets.probs;
    validate_targets(t);
    const std::size_t n = logits.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    const double grad_scale = inv_n / temperature;
    LossValue out;
    out.dlogits = Matrix(n, logits.cols());
    std::vector<double> logq(logits.cols());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        log_softmax_tempered_row({logits.row(i), logits.cols()}, temperature, logq);
        double row_loss = 0.0;
        double* g = out.dlogits.row(i);
        for (std::size_t c = 0; c < logits.cols(); ++c) {
            row_loss -= t(i, c) * logq[c];
            g[c] = (std::exp(logq[c]) - t(i, c)) * grad_scale;
        }
        total += row_loss;
    }
    out.value = total * inv_n;
    return out;
}

// Hard + rho * soft. The gradient applies the T^2 rule so the hard/soft
// balance stays roughly temperature-invariant; in soft_only mode the value
// is the soft loss alone and the gradient is T^2 * soft gradient.
inline LossValue combined_loss(const Matrix& logits, const Labels& labels,
                               const SoftTargetBatch& targets, const LossWeights& w) {
    const double t2 = w.temperature * w.temperature;
    LossValue soft = soft_cross_entropy(logits, targets, w.temperature);
    if (w.soft_only) {
        for (auto& g : soft.dlogits.data()) g *= t2;
        return soft;
    }
    LossValue hard = hard_loss(logits, labels);
    LossValue out;
    out.value = hard.value + w.rho * soft.value;
    out.dlogits = std::move(hard.dlogits);
    const double scale = w.rho * t2;
    for (std::size_t i = 0; i < out.dlogits.size(); ++i)
        out.dlogits.data()[i] += scale * soft.dlogits.data()[i];
    return out;
}

inline SoftTargetBatch teacher_soft_targets(const ModelParams& teacher, const Matrix& batch,
                                            double temperature,
                                            TargetProvenance provenance =
                                                TargetProvenance::TeacherOnTarget) {
    const Matrix logits = forward(teacher, batch);
    SoftTargetBatch out;
    out.temperature = temperature;
    out.provenance = provenance;
    out.probs = Matrix(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i)
        softmax_tempered_row({logits.row(i), logits.cols()}, temperature,
                             {out.probs.row(i), out.probs.cols()});
    return out;
}

}  // namespace softshift
