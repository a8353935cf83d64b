#include "soda/ofs.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace soda::ofs {

namespace {

constexpr double kDegenerateNorm = 1e-12;

int prune_count_for(double alpha, int n_tok) {
    return static_cast<int>(std::lround(alpha * n_tok));
}

std::vector<int> complement_of(const std::vector<int>& gamma, int n_tok) {
    std::vector<int> kept;
    kept.reserve(static_cast<size_t>(n_tok) - gamma.size());
    size_t g = 0;
    for (int i = 0; i < n_tok; ++i) {
        if (g < gamma.size() && gamma[g] == i) {
            ++g;
        } else {
            kept.push_back(i);
        }
    }
    return kept;
}

}  // namespace

// ============================================================================
// Cosine distance
// ============================================================================

double cosine_distance(const FeatureMap& a, const FeatureMap& b) {
    require_same_shape(a, b, "cosine_distance");
    if (a.data == b.data) return 0.0;  // identical vectors, exactly
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        dot += a.data[i] * b.data[i];
        na += a.data[i] * a.data[i];
        nb += b.data[i] * b.data[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    const bool a_zero = na < kDegenerateNorm;
    const bool b_zero = nb < kDegenerateNorm;
    if (a_zero && b_zero) return 0.0;  // identical "nothing"
    if (a_zero || b_zero) return 1.0;  // direction entirely lost
    double d = 1.0 - dot / (na * nb);
    return std::clamp(d, 0.0, 2.0);
}

// ============================================================================
// SensitivityTables accessors & validation
// ============================================================================

size_t SensitivityTables::caching_cells() const {
    return static_cast<size_t>(config.total_steps) * config.layers * dit::kModuleKinds * n_max;
}

size_t SensitivityTables::pruning_cells() const {
    return static_cast<size_t>(config.total_steps) * config.layers * dit::kModuleKinds *
           alpha_grid.size();
}

size_t SensitivityTables::caching_index(int t, int l, dit::ModuleKind m, int n) const {
    if (t < 1 || t > config.total_steps || l < 1 || l > config.layers || n < 1 || n > n_max)
        fail(ErrorCode::range, "caching cell index out of range");
    return ((static_cast<size_t>(t - 1) * config.layers + static_cast<size_t>(l - 1)) *
                dit::kModuleKinds +
            static_cast<size_t>(m)) *
               static_cast<size_t>(n_max) +
           static_cast<size_t>(n - 1);
}

size_t SensitivityTables::pruning_index(int t, int l, dit::ModuleKind m, int alpha_idx) const {
    if (t < 1 || t > config.total_steps || l < 1 || l > config.layers || alpha_idx < 0 ||
        alpha_idx >= alpha_count())
        fail(ErrorCode::range, "pruning cell index out of range");
    return ((static_cast<size_t>(t - 1) * config.layers + static_cast<size_t>(l - 1)) *
                dit::kModuleKinds +
            static_cast<size_t>(m)) *
               alpha_grid.size() +
           static_cast<size_t>(alpha_idx);
}

bool SensitivityTables::caching_present(int t, int n) const {
    return t >= 1 && n >= 1 && t + n <= config.total_steps;
}

bool SensitivityTables::pruning_present(int t) const {
    return t >= 1 && t < config.total_steps;
}

double SensitivityTables::caching_mean_at(int t, int l, dit::ModuleKind m, int n) const {
    const size_t idx = caching_index(t, l, m, n);
    if (!caching_present(t, n))
        fail(ErrorCode::absent_cell, "caching cell absent: t+n exceeds T (t=" + std::to_string(t) +
                                         ", n=" + std::to_string(n) + ")");
    return caching_mean[idx];
}

double SensitivityTables::caching_std_at(int t, int l, dit::ModuleKind m, int n) const {
    const size_t idx = caching_index(t, l, m, n);
    if (!caching_present(t, n)) fail(ErrorCode::absent_cell, "caching cell absent");
    return caching_std[idx];
}

double SensitivityTables::pruning_mean_at(int t, int l, dit::ModuleKind m, int alpha_idx) const {
    const size_t idx = pruning_index(t, l, m, alpha_idx);
    if (!pruning_present(t))
        fail(ErrorCode::absent_cell, "pruning cell absent: no age-1 substitute at t=T");
    return pruning_mean[idx];
}

double SensitivityTables::pruning_std_at(int t, int l, dit::ModuleKind m, int alpha_idx) const {
    const size_t idx = pruning_index(t, l, m, alpha_idx);
    if (!pruning_present(t)) fail(ErrorCode::absent_cell, "pruning cell absent");
    return pruning_std[idx];
}

void SensitivityTables::validate() const {
    config.validate();
    if (n_max < 1 || n_max > config.total_steps - 1)
        fail(ErrorCode::validation, "tables: n_max must lie in [1, T-1]");
    if (alpha_grid.empty()) fail(ErrorCode::validation, "tables: alpha grid is empty");
    double prev = 0.0;
    for (double a : alpha_grid) {
        if (!(a > 0.0 && a < 1.0))
            fail(ErrorCode::validation, "tables: alpha grid values must lie in (0,1)");
        if (!(a > prev)) fail(ErrorCode::validation, "tables: alpha grid must be strictly ascending");
        prev = a;
    }
    if (sample_count < 1) fail(ErrorCode::validation, "tables: sample_count must be >= 1");
    if (caching_mean.size() != caching_cells() || caching_std.size() != caching_cells() ||
        pruning_mean.size() != pruning_cells() || pruning_std.size() != pruning_cells())
        fail(ErrorCode::validation, "tables: tensor sizes do not match declared dimensions");

    for (int t = 1; t <= config.total_steps; ++t) {
        for (int l = 1; l <= config.layers; ++l) {
            for (dit::ModuleKind m : {dit::ModuleKind::att, dit::ModuleKind::mlp}) {
                for (int n = 1; n <= n_max; ++n) {
                    const size_t idx = caching_index(t, l, m, n);
                    const float mean = caching_mean[idx];
                    const float sd = caching_std[idx];
                    if (caching_present(t, n)) {
                        if (!(mean >= 0.0f && mean <= 2.0f))
                            fail(ErrorCode::validation, "tables: caching mean outside [0,2]");
                        if (!(sd >= 0.0f))
                            fail(ErrorCode::validation, "tables: caching std negative");
                    } else {
                        if (mean != kAbsentCell || sd != kAbsentCell)
                            fail(ErrorCode::validation,
                                 "tables: cell with t+n > T must hold the absent sentinel");
                    }
                }
                for (int k = 0; k < alpha_count(); ++k) {
                    const size_t idx = pruning_index(t, l, m, k);
                    const float mean = pruning_mean[idx];
                    const float sd = pruning_std[idx];
                    if (pruning_present(t)) {
                        if (!(mean >= 0.0f && mean <= 2.0f))
                            fail(ErrorCode::validation, "tables: pruning mean outside [0,2]");
                        if (!(sd >= 0.0f))
                            fail(ErrorCode::validation, "tables: pruning std negative");
                    } else {
                        if (mean != kAbsentCell || sd != kAbsentCell)
                            fail(ErrorCode::validation,
                                 "tables: pruning row at t=T must hold the absent sentinel");
                    }
                }
            }
        }
    }
}

void SensitivityTables::validate_fingerprint(const dit::ToyModel& model) const {
    if (model_fingerprint != model.fingerprint())
        fail(ErrorCode::validation,
             "tables were built from a different model (fingerprint mismatch)");
}

// ============================================================================
// Single-cell evaluations
// ============================================================================

double caching_error_single(const dit::ToyDitConfig& config, const dit::Trajectory& traj, int t,
                            int l, dit::ModuleKind m, int n) {
    if (n < 1) fail(ErrorCode::range, "caching_error_single: n must be >= 1");
    if (t < 1 || t > config.total_steps) fail(ErrorCode::range, "caching_error_single: t out of range");
    if (t + n > config.total_steps)
        fail(ErrorCode::absent_cell, "caching_error_single: t+n exceeds T");
    const FeatureMap& reused = traj.output(config, t + n, l, m);
    const FeatureMap& target = traj.output(config, t, l, m);
    return cosine_distance(reused, target);
}

FeatureMap reconstruct_module_input(const dit::ToyDitConfig& config, const dit::Trajectory& traj,
                                    int t, int l, dit::ModuleKind m) {
    if (t < 1 || t > config.total_steps) fail(ErrorCode::range, "module input: t out of range");
    // Same additions in the same order as the captured run, so the
    // reconstruction is bit-exact.
    FeatureMap stream = traj.states[static_cast<size_t>(t)];
    for (int ll = 1; ll <= config.layers; ++ll) {
        for (dit::ModuleKind mm : {dit::ModuleKind::att, dit::ModuleKind::mlp}) {
            if (ll == l && mm == m) return stream;
            stream.add_inplace(traj.output(config, t, ll, mm));
        }
    }
    fail(ErrorCode::range, "module input: layer index out of range");
}

double pruning_error_with_gamma(const dit::ToyModel& model, const dit::Trajectory& traj, int t,
                                int l, dit::ModuleKind m, const std::vector<int>& gamma,
                                PruningBasis basis) {
    const dit::ToyDitConfig& config = model.config();
    const int n_tok = config.token_count;
    if (t < 1 || t > config.total_steps) fail(ErrorCode::range, "pruning error: t out of range");
    if (t + 1 > config.total_steps)
        fail(ErrorCode::absent_cell, "pruning error: no age-1 substitute exists at t=T");
    if (static_cast<int>(gamma.size()) > n_tok)
        fail(ErrorCode::invalid_argument, "pruning error: gamma larger than token count");

    const FeatureMap& target = traj.output(config, t, l, m);
    const FeatureMap& substitute = traj.output(config, t + 1, l, m);
    const std::vector<int> kept = complement_of(gamma, n_tok);

    FeatureMap assembled(n_tok, config.hidden_dim);
    if (!kept.empty()) {
        const FeatureMap input = reconstruct_module_input(config, traj, t, l, m);
        const std::vector<double> cond = model.condition(t);
        const FeatureMap fresh = model.forward_module(l, m, input, cond, &kept);
        for (int r : kept)
            std::copy(fresh.row(r), fresh.row(r) + config.hidden_dim, assembled.row(r));
    }
    for (int r : gamma)
        std::copy(substitute.row(r), substitute.row(r) + config.hidden_dim, assembled.row(r));

    if (basis == PruningBasis::kept_rows_only) {
        FeatureMap a(static_cast<int>(kept.size()), config.hidden_dim);
        FeatureMap b(static_cast<int>(kept.size()), config.hidden_dim);
        for (size_t i = 0; i < kept.size(); ++i) {
            std::copy(assembled.row(kept[i]), assembled.row(kept[i]) + config.hidden_dim,
                      a.row(static_cast<int>(i)));
            std::copy(target.row(kept[i]), target.row(kept[i]) + config.hidden_dim,
                      b.row(static_cast<int>(i)));
        }
        return cosine_distance(a, b);
    }
    return cosine_distance(assembled, target);
}

double pruning_error_single(const dit::ToyModel& model, const dit::Trajectory& traj, int t, int l,
                            dit::ModuleKind m, double alpha, Rng& rng, PruningBasis basis) {
    if (!(alpha > 0.0 && alpha < 1.0))
        fail(ErrorCode::range, "pruning error: alpha must lie in (0,1)");
    const int n_tok = model.config().token_count;
    const int count = prune_count_for(alpha, n_tok);
    const std::vector<int> gamma = rng.sample_without_replacement(n_tok, count);
    return pruning_error_with_gamma(model, traj, t, l, m, gamma, basis);
}

// ============================================================================
// Table building
// ============================================================================

std::vector<double> default_alpha_grid() {
    return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}

namespace {

// Per-sample cell values: caching cells first, pruning cells second, in the
// same flat index order as the tensors. Absent cells never appear here.
struct SampleValues {
    std::vector<double> caching;
    std::vector<double> pruning;
};

SampleValues profile_sample(const dit::ToyModel& model, const BuildOptions& options,
                            const FeatureMap& x_T) {
    const dit::ToyDitConfig& config = model.config();
    const int T = config.total_steps;
    const int L = config.layers;
    const int A = static_cast<int>(options.alpha_grid.size());

    dit::Trajectory traj = model.run_full_trajectory(x_T, /*capture=*/true);

    SampleValues values;
    values.caching.assign(static_cast<size_t>(T) * L * dit::kModuleKinds * options.n_max, 0.0);
    values.pruning.assign(static_cast<size_t>(T) * L * dit::kModuleKinds * A, 0.0);

    auto cidx = [&](int t, int l, dit::ModuleKind m, int n) {
        return ((static_cast<size_t>(t - 1) * L + static_cast<size_t>(l - 1)) * dit::kModuleKinds +
                static_cast<size_t>(m)) *
                   static_cast<size_t>(options.n_max) +
               static_cast<size_t>(n - 1);
    };
    auto pidx = [&](int t, int l, dit::ModuleKind m, int k) {
        return ((static_cast<size_t>(t - 1) * L + static_cast<size_t>(l - 1)) * dit::kModuleKinds +
                static_cast<size_t>(m)) *
                   static_cast<size_t>(A) +
               static_cast<size_t>(k);
    };

    for (int t = 1; t <= T; ++t) {
        for (int l = 1; l <= L; ++l) {
            for (dit::ModuleKind m : {dit::ModuleKind::att, dit::ModuleKind::mlp}) {
                for (int n = 1; n <= options.n_max && t + n <= T; ++n)
                    values.caching[cidx(t, l, m, n)] =
                        caching_error_single(config, traj, t, l, m, n);
            }
        }
    }

    // Pruning cells walk the within-step stream once per (t), reusing the
    // reconstruction across modules.
    for (int t = 1; t < T; ++t) {
        const std::vector<double> cond = model.condition(t);
        FeatureMap stream = traj.states[static_cast<size_t>(t)];
        for (int l = 1; l <= L; ++l) {
            for (dit::ModuleKind m : {dit::ModuleKind::att, dit::ModuleKind::mlp}) {
                const FeatureMap& target = traj.output(config, t, l, m);
                const FeatureMap& substitute = traj.output(config, t + 1, l, m);
                for (int k = 0; k < A; ++k) {
                    const double alpha = options.alpha_grid[static_cast<size_t>(k)];
                    const int count = prune_count_for(alpha, config.token_count);
                    Rng gamma_rng(derive_seed(options.master_seed, 0x67616d6d61ull /*gamma*/,
                                              /*sample=*/0, static_cast<uint64_t>(t),
                                              static_cast<uint64_t>(l), static_cast<uint64_t>(m),
                                              static_cast<uint64_t>(k)));
                    const std::vector<int> gamma =
                        gamma_rng.sample_without_replacement(config.token_count, count);
                    const std::vector<int> kept = complement_of(gamma, config.token_count);

                    FeatureMap assembled(config.token_count, config.hidden_dim);
                    if (!kept.empty()) {
                        const FeatureMap fresh = model.forward_module(l, m, stream, cond, &kept);
                        for (int r : kept)
                            std::copy(fresh.row(r), fresh.row(r) + config.hidden_dim,
                                      assembled.row(r));
                    }
                    for (int r : gamma)
                        std::copy(substitute.row(r), substitute.row(r) + config.hidden_dim,
                                  assembled.row(r));

                    double err;
                    if (options.pruning_basis == PruningBasis::kept_rows_only) {
                        FeatureMap a(static_cast<int>(kept.size()), config.hidden_dim);
                        FeatureMap b(static_cast<int>(kept.size()), config.hidden_dim);
                        for (size_t i = 0; i < kept.size(); ++i) {
                            std::copy(assembled.row(kept[i]),
                                      assembled.row(kept[i]) + config.hidden_dim,
                                      a.row(static_cast<int>(i)));
                            std::copy(target.row(kept[i]),
                                      target.row(kept[i]) + config.hidden_dim,
                                      b.row(static_cast<int>(i)));
                        }
                        err = cosine_distance(a, b);
                    } else {
                        err = cosine_distance(assembled, target);
                    }
                    values.pruning[pidx(t, l, m, k)] = err;
                }
                stream.add_inplace(traj.output(config, t, l, m));
            }
        }
    }
    return values;
}

}  // namespace

SensitivityTables build_tables(const dit::ToyModel& model, const BuildOptions& options) {
    const dit::ToyDitConfig& config = model.config();
    if (options.samples < 1) fail(ErrorCode::invalid_config, "build_tables: samples must be >= 1");
    if (options.n_max < 1) fail(ErrorCode::invalid_config, "build_tables: n_max must be >= 1");
    if (options.n_max >= config.total_steps)
        fail(ErrorCode::invalid_config, "build_tables: n_max must be <= T-1");
    if (options.alpha_grid.empty())
        fail(ErrorCode::invalid_config, "build_tables: alpha grid is empty");
    double prev = 0.0;
    for (double a : options.alpha_grid) {
        if (!(a > 0.0 && a < 1.0))
            fail(ErrorCode::invalid_config, "build_tables: alpha values must lie in (0,1)");
        if (!(a > prev))
            fail(ErrorCode::invalid_config, "build_tables: alpha grid must be strictly ascending");
        prev = a;
    }
    if (options.forced_initial_states != nullptr &&
        options.forced_initial_states->size() != options.samples)
        fail(ErrorCode::invalid_config,
             "build_tables: forced initial states must match sample count");

    const uint32_t S = options.samples;
    std::vector<SampleValues> per_sample(S);

    auto initial_state = [&](uint32_t i) -> FeatureMap {
        if (options.forced_initial_states != nullptr) return (*options.forced_initial_states)[i];
        return dit::gaussian_feature_map(config.token_count, config.hidden_dim,
                                         derive_seed(stream_seed(options.master_seed, "x_T"), i));
    };

    // Gamma draws are keyed by (master, sample, t, l, m, alpha-index); bake the
    // sample index into a per-sample copy of the options.
    auto profile_one = [&](uint32_t i) {
        BuildOptions per = options;
        per.forced_initial_states = nullptr;
        per.master_seed = derive_seed(options.master_seed, 0x73616d706c65ull /*sample*/, i);
        per_sample[i] = profile_sample(model, per, initial_state(i));
    };

    const int workers = std::max(1, options.workers);
    if (workers == 1 || S == 1) {
        for (uint32_t i = 0; i < S; ++i) profile_one(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<uint32_t> next{0};
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&]() {
                for (;;) {
                    const uint32_t i = next.fetch_add(1);
                    if (i >= S) return;
                    profile_one(i);
                }
            });
        }
        for (std::thread& th : pool) th.join();
    }

    SensitivityTables tables;
    tables.config = config;
    tables.n_max = options.n_max;
    tables.alpha_grid = options.alpha_grid;
    tables.sample_count = S;
    tables.model_fingerprint = model.fingerprint();
    tables.caching_mean.assign(tables.caching_cells(), SensitivityTables::kAbsentCell);
    tables.caching_std.assign(tables.caching_cells(), SensitivityTables::kAbsentCell);
    tables.pruning_mean.assign(tables.pruning_cells(), SensitivityTables::kAbsentCell);
    tables.pruning_std.assign(tables.pruning_cells(), SensitivityTables::kAbsentCell);

    // Welford accumulation in ascending sample order: the reduction order is
    // fixed regardless of how the samples were computed.
    auto reduce = [&](auto cell_of, std::vector<float>& mean_out, std::vector<float>& std_out,
                      size_t cells) {
        std::vector<double> mean(cells, 0.0), m2(cells, 0.0);
        for (uint32_t s = 0; s < S; ++s) {
            for (size_t c = 0; c < cells; ++c) {
                const double x = cell_of(s, c);
                const double delta = x - mean[c];
                mean[c] += delta / static_cast<double>(s + 1);
                m2[c] += delta * (x - mean[c]);
            }
        }
        for (size_t c = 0; c < cells; ++c) {
            mean_out[c] = static_cast<float>(mean[c]);
            std_out[c] = static_cast<float>(std::sqrt(std::max(0.0, m2[c] / S)));
        }
    };

    // Only populate measurable cells; the rest keep the sentinel.
    const int T = config.total_steps;
    const int L = config.layers;
    const int A = tables.alpha_count();

    {
        std::vector<size_t> present;
        for (int t = 1; t <= T; ++t)
            for (int l = 1; l <= L; ++l)
                for (dit::ModuleKind m : {dit::ModuleKind::att, dit::ModuleKind::mlp})
                    for (int n = 1; n <= options.n_max; ++n)
                        if (tables.caching_present(t, n))
                            present.push_back(tables.caching_index(t, l, m, n));
        std::vector<float> mean(present.size()), sd(present.size());
        reduce([&](uint32_t s, size_t c) { return per_sample[s].caching[present[c]]; }, mean, sd,
               present.size());
        for (size_t c = 0; c < present.size(); ++c) {
            tables.caching_mean[present[c]] = mean[c];
            tables.caching_std[present[c]] = sd[c];
        }
    }
    {
        std::vector<size_t> present;
        for (int t = 1; t < T; ++t)
            for (int l = 1; l <= L; ++l)
                for (dit::ModuleKind m : {dit::ModuleKind::att, dit::ModuleKind::mlp})
                    for (int k = 0; k < A; ++k)
                        present.push_back(tables.pruning_index(t, l, m, k));
        std::vector<float> mean(present.size()), sd(present.size());
        reduce([&](uint32_t s, size_t c) { return per_sample[s].pruning[present[c]]; }, mean, sd,
               present.size());
        for (size_t c = 0; c < present.size(); ++c) {
            tables.pruning_mean[present[c]] = mean[c];
            tables.pruning_std[present[c]] = sd[c];
        }
    }

    tables.validate();
    return tables;
}

SensitivityTables build_tables(const dit::ToyModel& model, uint32_t samples, int n_max,
                               const std::vector<double>& alpha_grid, uint64_t master_seed) {
    BuildOptions options;
    options.samples = samples;
    options.n_max = n_max;
    options.alpha_grid = alpha_grid;
    options.master_seed = master_seed;
    return build_tables(model, options);
}

}  // namespace soda::ofs
