#pragma once

#include <vector>

#include "soda/dcs.hpp"
#include "soda/ofs.hpp"

namespace soda::uas {

struct UasParams {
    double lambda = 0.3;     // scaling coefficient on the caching error
    double beta = 0.4;       // base pruning rate
    double alpha_max = 0.95; // clamp ceiling; keeps at least one token at toy scale

    void validate() const;
};

enum class ImportanceMetric {
    abs_mean,     // |mean over hidden dim| per token (default)
    signed_mean,  // raw mean, available behind a flag
};

// Which caching cell indexes the rate and the decision comparison.
// effective_age charges the decision step's actual reuse age (cell
// (t', opening - t')); full_interval is the literal written form (lower
// anchor, full span), which overstates the reuse error early in an interval
// and measurably over-fires pruning at desk scale.
enum class RateIndexMode { effective_age, full_interval };

// alpha = clamp(lambda * E_c(t, l, m, n) + beta, 0, alpha_max)
double pruning_rate(const ofs::SensitivityTables& tables, int t, int l, dit::ModuleKind m, int n,
                    const UasParams& params);

// Piecewise-linear interpolation of E_p over the alpha grid augmented with
// the (0, 0) anchor; clamps to the top grid value above it.
double pruning_error_lookup(const ofs::SensitivityTables& tables, int t, int l, dit::ModuleKind m,
                            double alpha);

// Same interpolation applied to the std tensor (offline band lookups).
double pruning_std_lookup(const ofs::SensitivityTables& tables, int t, int l, dit::ModuleKind m,
                          double alpha);

// Keep the k tokens with the highest importance score; ties keep the lower
// position index. Returns sorted ascending positions.
std::vector<int> select_positions(const FeatureMap& features, int keep_count,
                                  ImportanceMetric metric = ImportanceMetric::abs_mean);

struct PruneDecision {
    enum class Action { reuse_all, prune };
    Action action = Action::reuse_all;
    double rate = 0.0;         // computed alpha, recorded for both actions
    double delta = 0.0;        // E_p(t', l, m, rate)
    double cache_error = 0.0;  // E_c cell the decision compared against
    std::vector<int> kept;     // empty for reuse_all
    bool keep_zero_fallback = false;
};

// Evaluates the prune-vs-reuse rule at step t_step inside the interval
// (t_low, n): prune only when its error is below the caching error.
PruneDecision decide(const ofs::SensitivityTables& tables, int t_step, int t_low, int l,
                     dit::ModuleKind m, int n, const UasParams& params, const FeatureMap& features,
                     ImportanceMetric metric = ImportanceMetric::abs_mean,
                     RateIndexMode index_mode = RateIndexMode::effective_age);

// Mean computed rate over the pruned-step (t', l, m) triples the schedule
// induces, for a given beta, using the same cell indexing the decision rule
// would. Monotone nondecreasing in beta.
double mean_rate_for_beta(const ofs::SensitivityTables& tables, const dcs::CacheSchedule& schedule,
                          double lambda, double beta, double alpha_max,
                          RateIndexMode index_mode = RateIndexMode::effective_age);

struct BetaSolution {
    double beta = 0.0;
    double achieved_mean = 0.0;
};

// Bisection over beta in [-1, 1] so the induced mean rate meets the target
// within 1e-6; on flat regions the largest such beta is returned. Raises
// saturation with the achievable range when the target cannot be met.
BetaSolution solve_beta(const ofs::SensitivityTables& tables, const dcs::CacheSchedule& schedule,
                        double lambda, double target_mean_rate, double alpha_max = 0.95,
                        RateIndexMode index_mode = RateIndexMode::effective_age);

}  // namespace soda::uas
