#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "softshift/errors.hpp"
#include "softshift/io.hpp"
#include "softshift/losses.hpp"
#include "softshift/matrix.hpp"
#include "softshift/rng.hpp"

namespace softshift {

enum class Domain : std::uint8_t { Source = 0, Target = 1 };
enum class Split : std::uint8_t { Train = 0, Validation = 1, Test = 2 };

struct LabeledDataset {
    Matrix features;  // N x d
    Labels labels;    // N labels in 1..num_classes
    Domain domain = Domain::Source;
    Split split = Split::Train;

    std::size_t size() const { return features.rows(); }

    friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

struct DatasetSplits {
    LabeledDataset train;
    LabeledDataset validation;
    LabeledDataset test;
};

// Aligned (source sample, target sample) pairs sharing a label.
struct ParallelDataset {
    Matrix source_features;
    Matrix target_features;
    Labels labels;

    friend bool operator==(const ParallelDataset&, const ParallelDataset&) = default;
};

// Gaussian class blobs with a rigid-motion shift between domains: the
// target domain rotates all points by `rotation` in a fixed random 2-plane
// and translates each class by shift * sigma along a fixed per-class
// direction. shift = 0 and rotation = 0 makes the domains identical.
struct ShiftConfig {
    std::size_t num_classes = 10;
    std::size_t feature_dim = 20;
    std::size_t source_train_per_class = 1000;
    std::size_t target_train_per_class = 50;
    std::size_t val_per_class = 100;
    std::size_t test_per_class = 200;
    double shift = 0.0;            // delta, in units of blob sigma
    double rotation = 0.0;         // radians, in a fixed random 2-plane
    double label_noise = 0.0;      // fraction of train labels flipped
    double separation = 3.0;       // expected inter-mean distance, sigma units
    double sigma = 1.0;            // blob standard deviation
    std::uint64_t geometry_seed = 17;

    friend bool operator==(const ShiftConfig&, const ShiftConfig&) = default;
};

struct DomainPair {
    DatasetSplits source;
    DatasetSplits target;
    ParallelDataset parallel;
};

inline void validate_config(const ShiftConfig& cfg) {
    if (cfg.num_classes < 2) throw InvalidConfig("num_classes must be >= 2");
    if (cfg.feature_dim < 2) throw InvalidConfig("feature_dim must be >= 2");
    if (cfg.shift < 0.0) throw InvalidConfig("shift must be >= 0");
    if (cfg.label_noise < 0.0 || cfg.label_noise >= 1.0)
        throw InvalidConfig("label_noise must be in [0,1)");
    if (cfg.sigma <= 0.0) throw InvalidConfig("sigma must be > 0");
    if (cfg.source_train_per_class == 0 || cfg.target_train_per_class == 0 ||
        cfg.val_per_class == 0 || cfg.test_per_class == 0)
        throw InvalidConfig("per-class sample counts must be >= 1");
}

namespace detail {

struct DomainGeometry {
    std::vector<std::vector<double>> class_means;       // num_classes x d
    std::vector<std::vector<double>> shift_directions;  // unit vectors, per class
    std::vector<double> plane_u, plane_v;               // orthonormal rotation plane
};

inline std::vector<double> unit_vector(SeededRng& rng, std::size_t d) {
    std::vector<double> v = standard_normal(rng, d);
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

inline DomainGeometry make_geometry(const ShiftConfig& cfg) {
    SeededRng grng(cfg.geometry_seed);
    DomainGeometry g;
    // Gaussian means scaled so expected pairwise distance is
    // separation * sigma: |m_a - m_b| ~ scale * sqrt(2d).
    const double scale =
        cfg.separation * cfg.sigma / std::sqrt(2.0 * static_cast<double>(cfg.feature_dim));
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        auto m = standard_normal(grng, cfg.feature_dim);
        for (double& x : m) x *= scale;
        g.class_means.push_back(std::move(m));
    }
    for (std::size_t c = 0; c < cfg.num_classes; ++c)
        g.shift_directions.push_back(unit_vector(grng, cfg.feature_dim));
    g.plane_u = unit_vector(grng, cfg.feature_dim);
    // Gram-Schmidt for the second plane axis.
    auto w = standard_normal(grng, cfg.feature_dim);
    double dot = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) dot += w[i] * g.plane_u[i];
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= dot * g.plane_u[i];
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : w) x /= norm;
    g.plane_v = std::move(w);
    return g;
}

// Rotate in the (u, v) plane, then translate by the class shift.
inline void apply_target_transform(const ShiftConfig& cfg, const DomainGeometry& g,
                                   std::size_t class_index, double* x) {
    const std::size_t d = cfg.feature_dim;
    if (cfg.rotation != 0.0) {
        double cu = 0.0, cv = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            cu += x[i] * g.plane_u[i];
            cv += x[i] * g.plane_v[i];
        }
        const double c = std::cos(cfg.rotation), s = std::sin(cfg.rotation);
        const double nu = c * cu - s * cv;
        const double nv = s * cu + c * cv;
        for (std::size_t i = 0; i < d; ++i)
            x[i] += (nu - cu) * g.plane_u[i] + (nv - cv) * g.plane_v[i];
    }
    const double delta = cfg.shift * cfg.sigma;
    if (delta != 0.0) {
        const auto& dir = g.shift_directions[class_index];
        for (std::size_t i = 0; i < d; ++i) x[i] += delta * dir[i];
    }
}

inline LabeledDataset draw_split(const ShiftConfig& cfg, const DomainGeometry& g,
                                 Domain domain, Split split, std::size_t per_class,
                                 SeededRng& rng) {
    const std::size_t n = per_class * cfg.num_classes;
    LabeledDataset ds;
    ds.domain = domain;
    ds.split = split;
    ds.features = Matrix(n, cfg.feature_dim);
    ds.labels.resize(n);
    std::size_t row = 0;
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        for (std::size_t s = 0; s < per_class; ++s, ++row) {
            double* x = ds.features.row(row);
            for (std::size_t i = 0; i < cfg.feature_dim; ++i)
                x[i] = g.class_means[c][i] + cfg.sigma * rng.next_normal();
            if (domain == Domain::Target) apply_target_transform(cfg, g, c, x);
            ds.labels[row] = static_cast<std::uint32_t>(c + 1);
        }
    }
    return ds;
}

inline void flip_labels(Labels& labels, std::size_t num_classes, double fraction,
                        SeededRng& rng) {
    if (fraction <= 0.0) return;
    for (auto& label : labels) {
        if (rng.next_double() < fraction) {
            // Uniform over the other classes.
            std::uint32_t repl =
                static_cast<std::uint32_t>(rng.next_below(num_classes - 1)) + 1;
            if (repl >= label) ++repl;
            label = repl;
        }
    }
}

}  // namespace detail

inline DomainPair generate_domain_pair(const ShiftConfig& cfg, SeededRng& rng) {
    validate_config(cfg);
    const auto geometry = detail::make_geometry(cfg);
    DomainPair out;

    SeededRng src_rng = rng.split(1);
    out.source.train = detail::draw_split(cfg, geometry, Domain::Source, Split::Train,
                                          cfg.source_train_per_class, src_rng);
    out.source.validation = detail::draw_split(cfg, geometry, Domain::Source,
                                               Split::Validation, cfg.val_per_class, src_rng);
    out.source.test = detail::draw_split(cfg, geometry, Domain::Source, Split::Test,
                                         cfg.test_per_class, src_rng);

    SeededRng tgt_rng = rng.split(2);
    out.target.train = detail::draw_split(cfg, geometry, Domain::Target, Split::Train,
                                          cfg.target_train_per_class, tgt_rng);
    out.target.validation = detail::draw_split(cfg, geometry, Domain::Target,
                                               Split::Validation, cfg.val_per_class, tgt_rng);
    out.target.test = detail::draw_split(cfg, geometry, Domain::Target, Split::Test,
                                         cfg.test_per_class, tgt_rng);

    // Parallel pairs share the latent class draw; only the domain transform
    // differs between the two sides.
    SeededRng par_rng = rng.split(3);
    const std::size_t pairs = cfg.target_train_per_class * cfg.num_classes;
    out.parallel.source_features = Matrix(pairs, cfg.feature_dim);
    out.parallel.target_features = Matrix(pairs, cfg.feature_dim);
    out.parallel.labels.resize(pairs);
    std::size_t row = 0;
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        for (std::size_t s = 0; s < cfg.target_train_per_class; ++s, ++row) {
            double* xs = out.parallel.source_features.row(row);
            double* xt = out.parallel.target_features.row(row);
            for (std::size_t i = 0; i < cfg.feature_dim; ++i) {
                xs[i] = geometry.class_means[c][i] + cfg.sigma * par_rng.next_normal();
                xt[i] = xs[i];
            }
            detail::apply_target_transform(cfg, geometry, c, xt);
            out.parallel.labels[row] = static_cast<std::uint32_t>(c + 1);
        }
    }

    // Label noise goes in after pairing so parallel labels stay matched.
    SeededRng noise_rng = rng.split(4);
    detail::flip_labels(out.source.train.labels, cfg.num_classes, cfg.label_noise, noise_rng);
    detail::flip_labels(out.target.train.labels, cfg.num_classes, cfg.label_noise, noise_rng);
    detail::flip_labels(out.parallel.labels, cfg.num_classes, cfg.label_noise, noise_rng);
    return out;
}

// Dataset file: magic, version, cfg echo, seed, N, d, D_C, then features
// (f64 LE row-major) and labels (u32 LE).
inline constexpr char kDatasetMagic[9] = "SSDATA01";
inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {
inline void write_shift_config(ByteWriter& w, const ShiftConfig& cfg) {
    w.u32(static_cast<std::uint32_t>(cfg.num_classes));
    w.u32(static_cast<std::uint32_t>(cfg.feature_dim));
    w.u64(cfg.source_train_per_class);
    w.u64(cfg.target_train_per_class);
    w.u64(cfg.val_per_class);
    w.u64(cfg.test_per_class);
    w.f64(cfg.shift);
    w.f64(cfg.rotation);
    w.f64(cfg.label_noise);
    w.f64(cfg.separation);
    w.f64(cfg.sigma);
    w.u64(cfg.geometry_seed);
}

inline ShiftConfig read_shift_config(ByteReader<CorruptDataset>& r) {
    ShiftConfig cfg;
    cfg.num_classes = r.u32();
    cfg.feature_dim = r.u32();
    cfg.source_train_per_class = r.u64();
    cfg.target_train_per_class = r.u64();
    cfg.val_per_class = r.u64();
    cfg.test_per_class = r.u64();
    cfg.shift = r.f64();
    cfg.rotation = r.f64();
    cfg.label_noise = r.f64();
    cfg.separation = r.f64();
    cfg.sigma = r.f64();
    cfg.geometry_seed = r.u64();
    return cfg;
}
}  // namespace detail

inline std::vector<std::uint8_t> save_dataset(const LabeledDataset& ds,
                                              const ShiftConfig& cfg, std::uint64_t seed) {
    ByteWriter w;
    w.magic(kDatasetMagic);
    w.u32(kDatasetVersion);
    detail::write_shift_config(w, cfg);
    w.u64(seed);
    w.u8(static_cast<std::uint8_t>(ds.domain));
    w.u8(static_cast<std::uint8_t>(ds.split));
    w.u64(ds.features.rows());
    w.u32(static_cast<std::uint32_t>(ds.features.cols()));
    w.u32(static_cast<std::uint32_t>(cfg.num_classes));
    for (double v : ds.features.data()) w.f64(v);
    for (std::uint32_t label : ds.labels) w.u32(label);
    return w.take();
}

struct LoadedDataset {
    LabeledDataset dataset;
    ShiftConfig config;
    std::uint64_t seed = 0;
};

inline LoadedDataset load_dataset(const std::vector<std::uint8_t>& bytes) {
    ByteReader<CorruptDataset> r(bytes);
    r.expect_magic(kDatasetMagic);
    if (r.u32() != kDatasetVersion) r.fail("unsupported dataset version");
    LoadedDataset out;
    out.config = detail::read_shift_config(r);
    out.seed = r.u64();
    const std::uint8_t domain = r.u8();
    const std::uint8_t split = r.u8();
    if (domain > 1 || split > 2) r.fail("bad domain/split tag");
    out.dataset.domain = static_cast<Domain>(domain);
    out.dataset.split = static_cast<Split>(split);
    const std::uint64_t n = r.u64();
    const std::uint32_t d = r.u32();
    const std::uint32_t num_classes = r.u32();
    out.dataset.features = Matrix(n, d);
    for (auto& v : out.dataset.features.data()) v = r.f64();
    out.dataset.labels.resize(n);
    for (auto& label : out.dataset.labels) {
        label = r.u32();
        if (label < 1 || label > num_classes) r.fail("label out of range");
    }
    if (!r.exhausted()) r.fail("trailing bytes after dataset payload");
    return out;
}

inline constexpr char kParallelMagic[9] = "SSPARA01";

inline std::vector<std::uint8_t> save_parallel(const ParallelDataset& p) {
    ByteWriter w;
    w.magic(kParallelMagic);
    w.u32(kDatasetVersion);
    w.u64(p.labels.size());
    w.u32(static_cast<std::uint32_t>(p.source_features.cols()));
    for (double v : p.source_features.data()) w.f64(v);
    for (double v : p.target_features.data()) w.f64(v);
    for (std::uint32_t label : p.labels) w.u32(label);
    return w.take();
}

inline ParallelDataset load_parallel(const std::vector<std::uint8_t>& bytes) {
    ByteReader<CorruptDataset> r(bytes);
    r.expect_magic(kParallelMagic);
    if (r.u32() != kDatasetVersion) r.fail("unsupported parallel-set version");
    const std::uint64_t n = r.u64();
    const std::uint32_t d = r.u32();
    ParallelDataset p;
    p.source_features = Matrix(n, d);
    p.target_features = Matrix(n, d);
    p.labels.resize(n);
    for (auto& v : p.source_features.data()) v = r.f64();
    for (auto& v : p.target_features.data()) v = r.f64();
    for (auto& label : p.labels) label = r.u32();
    if (!r.exhausted()) r.fail("trailing bytes after parallel payload");
    return p;
}

}  // namespace softshift
