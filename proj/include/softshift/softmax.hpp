#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "softshift/errors.hpp"

namespace softshift {

// In-place tempered log-softmax over one row of logits:
// out[c] = z[c]/T - logsumexp(z/T), computed with max-subtraction.
inline void log_softmax_tempered_row(std::span<const double> logits, double temperature,
                                     std::span<double> out) {
    if (!(temperature > 0.0))
        throw InvalidTemperature("temperature must be > 0, got " +
                                 std::to_string(temperature));
    const std::size_t n = logits.size();
    double maxv = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) {
        const double v = logits[c] / temperature;
        out[c] = v;
        if (v > maxv) maxv = v;
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < n; ++c) sum += std::exp(out[c] - maxv);
    const double lse = maxv + std::log(sum);
    for (std::size_t c = 0; c < n; ++c) out[c] -= lse;
}

inline void softmax_tempered_row(std::span<const double> logits, double temperature,
                                 std::span<double> out) {
    log_softmax_tempered_row(logits, temperature, out);
    for (auto& v : out) v = std::exp(v);
}

inline std::vector<double> softmax_tempered(std::span<const double> logits,
                                            double temperature) {
    std::vector<double> out(logits.size());
    softmax_tempered_row(logits, temperature, out);
    return out;
}

inline std::vector<double> log_softmax_tempered(std::span<const double> logits,
                                                double temperature) {
    std::vector<double> out(logits.size());
    log_softmax_tempered_row(logits, temperature, out);
    return out;
}

}  // namespace softshift
