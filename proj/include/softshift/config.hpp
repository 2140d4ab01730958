#pragma once

#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include "softshift/errors.hpp"
#include "softshift/harness.hpp"

namespace softshift {

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw InvalidConfig("bad number for " + key + ": " + v);
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long n = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw InvalidConfig("bad integer for " + key + ": " + v);
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw InvalidConfig("bad boolean for " + key + ": " + v);
}

}  // namespace detail

// Line-oriented `key = value` config with `#` comments and sections
// [data] [model] [train] [grid].
inline ExperimentConfig parse_experiment_config(const std::string& text) {
    using namespace detail;
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            if (section != "data" && section != "model" && section != "train" &&
                section != "grid")
                throw InvalidConfig("unknown section [" + section + "] at line " +
                                    std::to_string(lineno));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidConfig("expected key = value at line " + std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const std::string qkey = section + "." + key;

        if (qkey == "data.classes") cfg.data.num_classes = parse_u64(qkey, value);
        else if (qkey == "data.dim") cfg.data.feature_dim = parse_u64(qkey, value);
        else if (qkey == "data.source_train_per_class")
            cfg.data.source_train_per_class = parse_u64(qkey, value);
        else if (qkey == "data.target_train_per_class")
            cfg.data.target_train_per_class = parse_u64(qkey, value);
        else if (qkey == "data.val_per_class") cfg.data.val_per_class = parse_u64(qkey, value);
        else if (qkey == "data.test_per_class") cfg.data.test_per_class = parse_u64(qkey, value);
        else if (qkey == "data.shift") cfg.data.shift = parse_double(qkey, value);
        else if (qkey == "data.rotation") cfg.data.rotation = parse_double(qkey, value);
        else if (qkey == "data.label_noise") cfg.data.label_noise = parse_double(qkey, value);
        else if (qkey == "data.separation") cfg.data.separation = parse_double(qkey, value);
        else if (qkey == "data.sigma") cfg.data.sigma = parse_double(qkey, value);
        else if (qkey == "data.geometry_seed") cfg.data.geometry_seed = parse_u64(qkey, value);
        else if (qkey == "model.hidden") {
            cfg.hidden.clear();
            for (const auto& h : split_csv(value)) cfg.hidden.push_back(parse_u64(qkey, h));
        } else if (qkey == "model.activation")
            cfg.hidden_activation = activation_from_string(value);
        else if (qkey == "train.initial_lr") cfg.train.initial_lr = parse_double(qkey, value);
        else if (qkey == "train.halving_threshold")
            cfg.train.halving_threshold = parse_double(qkey, value);
        else if (qkey == "train.stop_ratio") cfg.train.stop_ratio = parse_double(qkey, value);
        else if (qkey == "train.batch_size") cfg.train.batch_size = parse_u64(qkey, value);
        else if (qkey == "train.max_epochs") cfg.train.max_epochs = parse_u64(qkey, value);
        else if (qkey == "grid.strategies") {
            cfg.strategies.clear();
            for (const auto& s : split_csv(value))
                cfg.strategies.push_back(strategy_from_string(s));
        } else if (qkey == "grid.temperatures") {
            cfg.temperatures.clear();
            for (const auto& t : split_csv(value))
                cfg.temperatures.push_back(parse_double(qkey, t));
        } else if (qkey == "grid.rhos") {
            cfg.rhos.clear();
            for (const auto& r : split_csv(value)) cfg.rhos.push_back(parse_double(qkey, r));
        } else if (qkey == "grid.mean_soft_soft_only")
            cfg.mean_soft_soft_only = parse_bool(qkey, value);
        else if (qkey == "grid.seeds") {
            cfg.seeds.clear();
            for (const auto& s : split_csv(value)) cfg.seeds.push_back(parse_u64(qkey, s));
        } else if (qkey == "grid.output_dir")
            cfg.output_dir = value;
        else
            throw InvalidConfig("unknown key '" + key + "' in section [" + section +
                                "] at line " + std::to_string(lineno));
    }
    // SOFTSHIFT_SEED overrides the configured seed list with a single seed.
    if (const char* env = std::getenv("SOFTSHIFT_SEED"); env && *env)
        cfg.seeds = {detail::parse_u64("SOFTSHIFT_SEED", env)};
    return cfg;
}

}  // namespace softshift
