#pragma once

// Shared helpers for the unit and acceptance suites: tiny configs, forged
// tables with chosen cell values, and forged model weights.

#include <algorithm>
#include <functional>
#include <vector>

#include "soda/ofs.hpp"
#include "soda/toy_dit.hpp"

namespace soda::testing {

inline dit::ToyDitConfig tiny_config(int total_steps = 8, int layers = 2, int tokens = 6,
                                     int dim = 8, int heads = 2, uint64_t seed = 1) {
    dit::ToyDitConfig c;
    c.total_steps = total_steps;
    c.layers = layers;
    c.token_count = tokens;
    c.hidden_dim = dim;
    c.heads = heads;
    c.seed = seed;
    c.beta_min = 1e-3;
    c.beta_max = 2e-2;
    return c;
}

inline dit::ToyDitConfig default_config(uint64_t seed = 7) {
    dit::ToyDitConfig c;
    c.seed = seed;
    return c;  // T=50, L=4, N_tok=16, d=32, heads=4
}

// Tables whose cells come from user functions; absent cells keep the
// sentinel. fc(t, l, m, n) fills caching mean, fp(t, l, m, k) pruning mean;
// stds go through fcs/fps (default 0).
struct ForgedSpec {
    std::function<double(int, int, dit::ModuleKind, int)> caching_mean;
    std::function<double(int, int, dit::ModuleKind, int)> pruning_mean;  // k = alpha index
    std::function<double(int, int, dit::ModuleKind, int)> caching_std;
    std::function<double(int, int, dit::ModuleKind, int)> pruning_std;
};

inline ofs::SensitivityTables forge_tables(const dit::ToyDitConfig& config, int n_max,
                                           std::vector<double> alpha_grid, const ForgedSpec& spec,
                                           Digest fingerprint = {}) {
    ofs::SensitivityTables t;
    t.config = config;
    t.n_max = n_max;
    t.alpha_grid = std::move(alpha_grid);
    t.sample_count = 1;
    t.model_fingerprint = fingerprint;
    t.caching_mean.assign(t.caching_cells(), ofs::SensitivityTables::kAbsentCell);
    t.caching_std.assign(t.caching_cells(), ofs::SensitivityTables::kAbsentCell);
    t.pruning_mean.assign(t.pruning_cells(), ofs::SensitivityTables::kAbsentCell);
    t.pruning_std.assign(t.pruning_cells(), ofs::SensitivityTables::kAbsentCell);
    for (int step = 1; step <= config.total_steps; ++step) {
        for (int l = 1; l <= config.layers; ++l) {
            for (dit::ModuleKind m : {dit::ModuleKind::att, dit::ModuleKind::mlp}) {
                for (int n = 1; n <= n_max; ++n) {
                    if (!t.caching_present(step, n)) continue;
                    const size_t idx = t.caching_index(step, l, m, n);
                    t.caching_mean[idx] =
                        static_cast<float>(spec.caching_mean ? spec.caching_mean(step, l, m, n) : 0.0);
                    t.caching_std[idx] =
                        static_cast<float>(spec.caching_std ? spec.caching_std(step, l, m, n) : 0.0);
                }
                for (int k = 0; k < t.alpha_count(); ++k) {
                    if (!t.pruning_present(step)) continue;
                    const size_t idx = t.pruning_index(step, l, m, k);
                    t.pruning_mean[idx] =
                        static_cast<float>(spec.pruning_mean ? spec.pruning_mean(step, l, m, k) : 0.0);
                    t.pruning_std[idx] =
                        static_cast<float>(spec.pruning_std ? spec.pruning_std(step, l, m, k) : 0.0);
                }
            }
        }
    }
    t.validate();
    return t;
}

// Constant-cost tables: every populated caching cell = c, pruning cell = p.
inline ofs::SensitivityTables constant_tables(const dit::ToyDitConfig& config, int n_max,
                                              double c, double p,
                                              std::vector<double> alpha_grid = {0.1, 0.5, 0.9}) {
    ForgedSpec spec;
    spec.caching_mean = [c](int, int, dit::ModuleKind, int) { return c; };
    spec.pruning_mean = [p](int, int, dit::ModuleKind, int) { return p; };
    return forge_tables(config, n_max, std::move(alpha_grid), spec);
}

// Model whose MLP branches are identically zero (W1 = W2 = 0); attention
// stays seeded. Useful for exercising zero-error paths.
inline dit::ToyModel zero_mlp_model(const dit::ToyDitConfig& config) {
    dit::ToyModel seeded = dit::ToyModel::build(config);
    dit::ModelWeights w = seeded.weights();
    for (dit::LayerWeights& lw : w.layers) {
        std::fill(lw.mlp.w1.begin(), lw.mlp.w1.end(), 0.0);
        std::fill(lw.mlp.w2.begin(), lw.mlp.w2.end(), 0.0);
    }
    return dit::ToyModel::from_weights(config, std::move(w));
}

inline FeatureMap filled_map(int tokens, int dim, double value) {
    FeatureMap f(tokens, dim);
    for (double& v : f.data) v = value;
    return f;
}

}  // namespace soda::testing
