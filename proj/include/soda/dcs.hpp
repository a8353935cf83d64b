#pragma once

#include <cstdint>
#include <vector>

#include "soda/ofs.hpp"

namespace soda::dcs {

// Interval weighting for the DP cost. Linear charges an interval in
// proportion to the steps it covers and is the default.
enum class XiMode { linear, constant, quadratic };

// Experimental alternative that sums the per-step reuse errors across the
// interval instead of charging the terminal full-span cell once. Never the
// default.
enum class CostMode { terminal_cell, per_step_sum };

struct DcsOptions {
    XiMode xi = XiMode::linear;
    CostMode cost = CostMode::terminal_cell;
};

double xi_weight(XiMode mode, int n);

// E_dp(t, n) = xi(n) * mean over (l, m) of E_c(t, l, m, n). Raises
// absent_cell when t + n > T.
double step_cost(const ofs::SensitivityTables& tables, int t, int n, const DcsOptions& options = {});

// ============================================================================
// CacheSchedule
// ============================================================================

struct CacheSchedule {
    int total_steps = 0;
    std::vector<int> anchors;    // a_0 = T > a_1 > ... > a_Ns = 1
    std::vector<int> intervals;  // n_j = a_{j-1} - a_j, top-first
    double total_cost = 0.0;
    std::vector<int> candidates;  // sorted unique
    bool phase_constrained = false;

    int interval_count() const { return static_cast<int>(intervals.size()); }

    // Type invariants: anchor bounds and ordering, gap/interval agreement,
    // interval sum and candidate membership.
    void validate() const;

    bool is_anchor(int t) const;
    // For a non-anchor step: the enclosing interval's (lower anchor, length).
    struct IntervalRef {
        int lower = 0;
        int length = 0;
        int opening() const { return lower + length; }
    };
    IntervalRef interval_at(int t) const;
};

// ============================================================================
// Optimization
// ============================================================================

// Median-guided subset used inside the special phase: n <= median(candidates).
std::vector<int> constrained_subset(const std::vector<int>& candidates);

// Lower-median candidate, used as the reference interval for phase detection.
int reference_interval(const std::vector<int>& candidates);

// Timesteps where the smoothed layer/module-averaged caching error decreases
// along the denoising direction (from t+1 to t). Smoothing is a centered
// moving average of window 5, truncated at the domain boundaries.
std::vector<int> detect_special_phase(const ofs::SensitivityTables& tables,
                                      const std::vector<int>& candidates);

// Minimum-cumulative-cost composition of T-1 into ns intervals drawn from the
// candidate set; exact DP with backtracking. Ties break toward the smaller
// interval at the lower anchor (lexicographic from the final anchor upward).
CacheSchedule optimize(const ofs::SensitivityTables& tables, int ns, std::vector<int> candidates,
                       bool phase_constrained, const DcsOptions& options = {});

// Exhaustive oracle for optimize(); same cost accumulation and tie-break.
CacheSchedule brute_force_schedule(const ofs::SensitivityTables& tables, int ns,
                                   std::vector<int> candidates,
                                   uint64_t enumeration_limit = 10'000'000,
                                   const DcsOptions& options = {});

// Recomputes the schedule's cumulative cost from the tables, independently of
// the stored total_cost. Validates the schedule first.
double schedule_cost(const ofs::SensitivityTables& tables, const CacheSchedule& schedule,
                     const DcsOptions& options = {});

// Equal-as-possible baseline; the remainder goes to the earliest intervals.
CacheSchedule uniform_schedule(int total_steps, int ns);

}  // namespace soda::dcs
