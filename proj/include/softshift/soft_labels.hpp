#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "softshift/data.hpp"
#include "softshift/errors.hpp"
#include "softshift/io.hpp"
#include "softshift/losses.hpp"
#include "softshift/matrix.hpp"
#include "softshift/network.hpp"
#include "softshift/softmax.hpp"

namespace softshift {

// Per-class mean of tempered source-model posteriors. Row c is the constant
// soft label served for every class-c sample during adaptation.
struct MeanSoftLabelTable {
    Matrix rows;  // num_classes x num_classes, row-stochastic
    double temperature = 1.0;
    std::vector<std::uint64_t> class_counts;
    std::array<std::uint8_t, 32> source_fingerprint{};

    std::size_t num_classes() const { return rows.rows(); }

    friend bool operator==(const MeanSoftLabelTable&, const MeanSoftLabelTable&) = default;
};

// Per-class summation runs in a canonical (lexicographically sorted) order
// followed by one division, so the table is bitwise independent of both
// sample order and chunking. chunk_size = 0 processes the whole dataset in
// one forward pass.
inline MeanSoftLabelTable compute_mean_soft_labels(const ModelParams& source_model,
                                                   const LabeledDataset& source_data,
                                                   double temperature,
                                                   std::size_t chunk_size = 0) {
    if (!(temperature > 0.0))
        throw InvalidTemperature("temperature must be > 0, got " +
                                 std::to_string(temperature));
    const std::size_t num_classes = source_model.output_dim();
    check_labels(source_data.labels, num_classes);

    MeanSoftLabelTable table;
    table.temperature = temperature;
    table.rows = Matrix(num_classes, num_classes);
    table.class_counts.assign(num_classes, 0);
    table.source_fingerprint = model_fingerprint(source_model);

    const std::size_t n = source_data.size();
    if (chunk_size == 0) chunk_size = n;
    std::vector<std::vector<std::vector<double>>> per_class(num_classes);
    std::vector<double> probs(num_classes);
    for (std::size_t start = 0; start < n; start += chunk_size) {
        const std::size_t end = std::min(start + chunk_size, n);
        Matrix chunk(end - start, source_data.features.cols());
        for (std::size_t i = start; i < end; ++i)
            for (std::size_t j = 0; j < chunk.cols(); ++j)
                chunk(i - start, j) = source_data.features(i, j);
        const Matrix logits = forward(source_model, chunk);
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            softmax_tempered_row({logits.row(i), num_classes}, temperature, probs);
            per_class[source_data.labels[start + i] - 1].push_back(probs);
        }
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (per_class[c].empty()) throw MissingClassSamples(c + 1);
        std::sort(per_class[c].begin(), per_class[c].end());
        table.class_counts[c] = per_class[c].size();
        double* row = table.rows.row(c);
        for (const auto& p : per_class[c])
            for (std::size_t j = 0; j < num_classes; ++j) row[j] += p[j];
        const double inv = 1.0 / static_cast<double>(per_class[c].size());
        for (std::size_t j = 0; j < num_classes; ++j) row[j] *= inv;
    }
    return table;
}

inline SoftTargetBatch lookup(const MeanSoftLabelTable& table, const Labels& labels) {
    check_labels(labels, table.num_classes());
    SoftTargetBatch out;
    out.temperature = table.temperature;
    out.provenance = TargetProvenance::MeanTable;
    out.probs = Matrix(labels.size(), table.num_classes());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double* src = table.rows.row(labels[i] - 1);
        double* dst = out.probs.row(i);
        for (std::size_t j = 0; j < table.num_classes(); ++j) dst[j] = src[j];
    }
    return out;
}

// Fraction of rows whose largest entry sits on the diagonal; a table-quality
// diagnostic equal to the teacher's per-class top-1 consistency.
inline double diagonal_dominance(const MeanSoftLabelTable& table) {
    std::size_t dominant = 0;
    for (std::size_t c = 0; c < table.num_classes(); ++c) {
        const double* row = table.rows.row(c);
        std::size_t best = 0;
        for (std::size_t j = 1; j < table.num_classes(); ++j)
            if (row[j] > row[best]) best = j;
        if (best == c) ++dominant;
    }
    return static_cast<double>(dominant) / static_cast<double>(table.num_classes());
}

// Table file: magic, version, D_C, T (f64), per-class counts (u64),
// fingerprint (32 bytes), then D_C x D_C little-endian f64 row-major.
inline constexpr char kTableMagic[9] = "SSTABL01";
inline constexpr std::uint32_t kTableVersion = 1;

inline std::vector<std::uint8_t> save_table(const MeanSoftLabelTable& table) {
    ByteWriter w;
    w.magic(kTableMagic);
    w.u32(kTableVersion);
    w.u32(static_cast<std::uint32_t>(table.num_classes()));
    w.f64(table.temperature);
    for (std::uint64_t n : table.class_counts) w.u64(n);
    w.raw(table.source_fingerprint.data(), table.source_fingerprint.size());
    for (double v : table.rows.data()) w.f64(v);
    return w.take();
}

inline MeanSoftLabelTable load_table(const std::vector<std::uint8_t>& bytes) {
    ByteReader<CorruptTable> r(bytes);
    r.expect_magic(kTableMagic);
    if (r.u32() != kTableVersion) r.fail("unsupported table version");
    const std::uint32_t num_classes = r.u32();
    if (num_classes == 0 || num_classes > 100000) r.fail("implausible class count");
    MeanSoftLabelTable table;
    table.temperature = r.f64();
    if (!(table.temperature > 0.0)) r.fail("non-positive temperature");
    table.class_counts.resize(num_classes);
    for (auto& n : table.class_counts) {
        n = r.u64();
        if (n == 0) r.fail("zero sample count for a stored class");
    }
    r.raw(table.source_fingerprint.data(), table.source_fingerprint.size());
    table.rows = Matrix(num_classes, num_classes);
    for (auto& v : table.rows.data()) v = r.f64();
    if (!r.exhausted()) r.fail("trailing bytes after table payload");
    for (std::size_t c = 0; c < num_classes; ++c) {
        double sum = 0.0;
        for (std::size_t j = 0; j < num_classes; ++j) {
            const double v = table.rows(c, j);
            if (!(v >= 0.0 && v <= 1.0)) r.fail("entry outside [0,1] in row " + std::to_string(c + 1));
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-6) r.fail("row " + std::to_string(c + 1) + " is not stochastic");
    }
    return table;
}

}  // namespace softshift
