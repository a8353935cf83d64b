#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "soda/digest.hpp"
#include "soda/rng.hpp"
#include "soda/toy_dit.hpp"

namespace soda::ofs {

// Cosine distance over the flattened token x dim vectors, in [0, 2].
// Degenerate norms: both below 1e-12 -> 0, exactly one below -> 1.
double cosine_distance(const FeatureMap& a, const FeatureMap& b);

// Comparison basis for the pruning error. The default substitutes pruned
// output rows from the step-(t+1) ground truth (what the pipeline would use);
// the kept-rows-only basis is experimental.
enum class PruningBasis { substituted_rows, kept_rows_only };

// ============================================================================
// Sensitivity tables
// ============================================================================

struct SensitivityTables {
    dit::ToyDitConfig config;  // snapshot of the profiled model's config
    int n_max = 0;
    std::vector<double> alpha_grid;  // strictly ascending, inside (0, 1)
    uint32_t sample_count = 0;
    Digest model_fingerprint;

    // Tensors indexed [t][l][m][k], t-major, stored float32 so the on-disk
    // layout round-trips bit-exactly. Cells that cannot be measured hold
    // kAbsentCell: caching cells with t + n > T, pruning rows at t = T.
    std::vector<float> caching_mean;
    std::vector<float> caching_std;
    std::vector<float> pruning_mean;
    std::vector<float> pruning_std;

    static constexpr float kAbsentCell = -1.0f;

    int total_steps() const { return config.total_steps; }
    int layers() const { return config.layers; }
    int alpha_count() const { return static_cast<int>(alpha_grid.size()); }

    size_t caching_cells() const;
    size_t pruning_cells() const;

    size_t caching_index(int t, int l, dit::ModuleKind m, int n) const;
    size_t pruning_index(int t, int l, dit::ModuleKind m, int alpha_idx) const;

    bool caching_present(int t, int n) const;
    bool pruning_present(int t) const;

    // Bounds- and presence-checked accessors; absent cells raise absent_cell.
    double caching_mean_at(int t, int l, dit::ModuleKind m, int n) const;
    double caching_std_at(int t, int l, dit::ModuleKind m, int n) const;
    double pruning_mean_at(int t, int l, dit::ModuleKind m, int alpha_idx) const;
    double pruning_std_at(int t, int l, dit::ModuleKind m, int alpha_idx) const;

    // Full invariant recheck: value ranges, absent-cell placement, grid shape.
    void validate() const;
    // Binding check against the model the tables were built from.
    void validate_fingerprint(const dit::ToyModel& model) const;
};

// ============================================================================
// Single-cell evaluations
// ============================================================================

// E_c(t, l, m, n): cosine distance between the module output at t+n and at t,
// both read from the same captured trajectory.
double caching_error_single(const dit::ToyDitConfig& config, const dit::Trajectory& traj, int t,
                            int l, dit::ModuleKind m, int n);

// E_p with an explicit pruned set gamma: recompute the module at (t, l, m)
// restricted to the complement of gamma, substitute pruned rows from the
// (t+1) ground-truth output, compare against the (t) ground-truth output.
double pruning_error_with_gamma(const dit::ToyModel& model, const dit::Trajectory& traj, int t,
                                int l, dit::ModuleKind m, const std::vector<int>& gamma,
                                PruningBasis basis = PruningBasis::substituted_rows);

// E_p(t, l, m, alpha) with gamma drawn uniformly (|gamma| = round(alpha * N)).
double pruning_error_single(const dit::ToyModel& model, const dit::Trajectory& traj, int t, int l,
                            dit::ModuleKind m, double alpha, Rng& rng,
                            PruningBasis basis = PruningBasis::substituted_rows);

// Rebuilds the input a module saw during the captured run: x_t plus the
// captured residual branches that precede (l, m) in execution order.
FeatureMap reconstruct_module_input(const dit::ToyDitConfig& config, const dit::Trajectory& traj,
                                    int t, int l, dit::ModuleKind m);

// ============================================================================
// Table building
// ============================================================================

std::vector<double> default_alpha_grid();  // 0.1 .. 0.9, step 0.1

struct BuildOptions {
    uint32_t samples = 32;
    int n_max = 6;
    std::vector<double> alpha_grid = default_alpha_grid();
    uint64_t master_seed = 0;
    int workers = 1;
    PruningBasis pruning_basis = PruningBasis::substituted_rows;
    // Test hook: overrides the seeded Gaussian draws (size must equal samples).
    const std::vector<FeatureMap>* forced_initial_states = nullptr;
};

// Profiles `samples` seeded random generations and accumulates per-cell mean
// and population std in ascending sample order (bit-identical for any worker
// count).
SensitivityTables build_tables(const dit::ToyModel& model, const BuildOptions& options);

SensitivityTables build_tables(const dit::ToyModel& model, uint32_t samples, int n_max,
                               const std::vector<double>& alpha_grid, uint64_t master_seed);

}  // namespace soda::ofs
