#include "soda/dcs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace soda::dcs {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<int> normalize_candidates(std::vector<int> candidates, const ofs::SensitivityTables& tables) {
    if (candidates.empty()) fail(ErrorCode::invalid_config, "candidate set is empty");
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    for (int n : candidates) {
        if (n < 1) fail(ErrorCode::invalid_config, "candidate intervals must be >= 1");
        if (n > tables.n_max)
            fail(ErrorCode::invalid_config, "candidate interval " + std::to_string(n) +
                                                " exceeds the profiled n_max " +
                                                std::to_string(tables.n_max));
    }
    return candidates;
}

void check_feasibility(int ns, const std::vector<int>& candidates, int total_steps) {
    if (ns < 1) fail(ErrorCode::infeasible, "N_s must be >= 1");
    const long long need = total_steps - 1;
    const long long lo = static_cast<long long>(ns) * candidates.front();
    const long long hi = static_cast<long long>(ns) * candidates.back();
    if (lo > need)
        fail(ErrorCode::infeasible, "infeasible: N_s*min(candidates) = " + std::to_string(lo) +
                                        " exceeds T-1 = " + std::to_string(need));
    if (hi < need)
        fail(ErrorCode::infeasible, "infeasible: N_s*max(candidates) = " + std::to_string(hi) +
                                        " is below T-1 = " + std::to_string(need));
}

// Canonical cumulative cost: left fold over intervals from the top anchor
// down. The DP, the oracle, and schedule_cost all use this association so
// equal schedules produce bit-equal costs.
double fold_cost(const ofs::SensitivityTables& tables, const std::vector<int>& anchors,
                 const std::vector<int>& intervals, const DcsOptions& options) {
    double acc = 0.0;
    for (size_t j = 0; j < intervals.size(); ++j)
        acc += step_cost(tables, anchors[j + 1], intervals[j], options);
    return acc;
}

std::vector<int> anchors_from_intervals(int total_steps, const std::vector<int>& intervals) {
    std::vector<int> anchors;
    anchors.reserve(intervals.size() + 1);
    anchors.push_back(total_steps);
    int t = total_steps;
    for (int n : intervals) {
        t -= n;
        anchors.push_back(t);
    }
    return anchors;
}

}  // namespace

// ============================================================================
// Cost
// ============================================================================

double xi_weight(XiMode mode, int n) {
    switch (mode) {
        case XiMode::linear: return static_cast<double>(n);
        case XiMode::constant: return 1.0;
        case XiMode::quadratic: return static_cast<double>(n) * static_cast<double>(n);
    }
    return static_cast<double>(n);
}

double step_cost(const ofs::SensitivityTables& tables, int t, int n, const DcsOptions& options) {
    const int L = tables.layers();
    if (options.cost == CostMode::per_step_sum) {
        // Experimental: sum the age-indexed reuse errors over the interval's
        // interior steps; no xi weighting (the sum is already extensive in n).
        double acc = 0.0;
        for (int age = 1; age <= n - 1; ++age) {
            const int step = t + n - age;
            double mean = 0.0;
            for (int l = 1; l <= L; ++l)
                for (dit::ModuleKind m : {dit::ModuleKind::att, dit::ModuleKind::mlp})
                    mean += tables.caching_mean_at(step, l, m, age);
            acc += mean / (L * dit::kModuleKinds);
        }
        // Presence check mirrors the terminal mode's contract.
        if (!tables.caching_present(t, n))
            fail(ErrorCode::absent_cell, "step_cost: cell (t, n) absent");
        return acc;
    }
    double sum = 0.0;
    for (int l = 1; l <= L; ++l)
        for (dit::ModuleKind m : {dit::ModuleKind::att, dit::ModuleKind::mlp})
            sum += tables.caching_mean_at(t, l, m, n);
    return xi_weight(options.xi, n) * (sum / (L * dit::kModuleKinds));
}

// ============================================================================
// CacheSchedule
// ============================================================================

void CacheSchedule::validate() const {
    if (total_steps < 2) fail(ErrorCode::validation, "schedule: total_steps must be >= 2");
    if (anchors.size() != intervals.size() + 1)
        fail(ErrorCode::validation, "schedule: anchor count must be interval count + 1");
    if (anchors.empty() || anchors.front() != total_steps)
        fail(ErrorCode::validation, "schedule: first anchor must be T");
    if (anchors.back() != 1) fail(ErrorCode::validation, "schedule: last anchor must be 1");
    int sum = 0;
    for (size_t j = 0; j < intervals.size(); ++j) {
        if (anchors[j + 1] >= anchors[j])
            fail(ErrorCode::validation, "schedule: anchors must be strictly decreasing");
        if (anchors[j] - anchors[j + 1] != intervals[j])
            fail(ErrorCode::validation, "schedule: anchor gap does not equal the interval");
        if (anchors[j + 1] < 1 || anchors[j + 1] > total_steps)
            fail(ErrorCode::validation, "schedule: anchor out of [1, T]");
        sum += intervals[j];
        if (!candidates.empty() &&
            !std::binary_search(candidates.begin(), candidates.end(), intervals[j]))
            fail(ErrorCode::validation, "schedule: interval not in the candidate set");
    }
    if (sum != total_steps - 1)
        fail(ErrorCode::validation, "schedule: intervals must sum to T-1");
}

bool CacheSchedule::is_anchor(int t) const {
    return std::binary_search(anchors.rbegin(), anchors.rend(), t);
}

CacheSchedule::IntervalRef CacheSchedule::interval_at(int t) const {
    for (size_t j = 0; j < intervals.size(); ++j) {
        if (anchors[j + 1] < t && t < anchors[j])
            return IntervalRef{anchors[j + 1], intervals[j]};
    }
    fail(ErrorCode::range, "interval_at: step " + std::to_string(t) + " is an anchor or out of range");
}

// ============================================================================
// Phase detection
// ============================================================================

std::vector<int> constrained_subset(const std::vector<int>& candidates) {
    std::vector<int> sorted = candidates;
    std::sort(sorted.begin(), sorted.end());
    const size_t k = sorted.size();
    const double median = (k % 2 == 1)
                              ? static_cast<double>(sorted[k / 2])
                              : 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]);
    std::vector<int> out;
    for (int n : sorted)
        if (static_cast<double>(n) <= median) out.push_back(n);
    return out;
}

int reference_interval(const std::vector<int>& candidates) {
    std::vector<int> sorted = candidates;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.empty()) fail(ErrorCode::invalid_config, "candidate set is empty");
    return sorted[(sorted.size() - 1) / 2];  // lower median
}

std::vector<int> detect_special_phase(const ofs::SensitivityTables& tables,
                                      const std::vector<int>& candidates) {
    const int n_ref = reference_interval(candidates);
    const int t_max = tables.total_steps() - n_ref;  // cells above this are absent
    if (t_max < 2) return {};

    std::vector<double> c(static_cast<size_t>(t_max) + 1, 0.0);
    const int L = tables.layers();
    for (int t = 1; t <= t_max; ++t) {
        double sum = 0.0;
        for (int l = 1; l <= L; ++l)
            for (dit::ModuleKind m : {dit::ModuleKind::att, dit::ModuleKind::mlp})
                sum += tables.caching_mean_at(t, l, m, n_ref);
        c[static_cast<size_t>(t)] = sum / (L * dit::kModuleKinds);
    }

    // Centered moving average, window 5, truncated at the domain edges.
    std::vector<double> smooth(static_cast<size_t>(t_max) + 1, 0.0);
    for (int t = 1; t <= t_max; ++t) {
        const int lo = std::max(1, t - 2);
        const int hi = std::min(t_max, t + 2);
        double sum = 0.0;
        for (int u = lo; u <= hi; ++u) sum += c[static_cast<size_t>(u)];
        smooth[static_cast<size_t>(t)] = sum / (hi - lo + 1);
    }

    std::vector<int> phase;
    for (int t = 1; t < t_max; ++t) {
        // Negative difference along the denoising direction (t+1 -> t).
        if (smooth[static_cast<size_t>(t)] < smooth[static_cast<size_t>(t + 1)]) phase.push_back(t);
    }
    return phase;
}

// ============================================================================
// DP optimizer
// ============================================================================

CacheSchedule optimize(const ofs::SensitivityTables& tables, int ns, std::vector<int> candidates,
                       bool phase_constrained, const DcsOptions& options) {
    candidates = normalize_candidates(std::move(candidates), tables);
    const int T = tables.total_steps();
    check_feasibility(ns, candidates, T);

    std::vector<bool> in_phase;
    std::vector<int> constrained;
    if (phase_constrained) {
        in_phase.assign(static_cast<size_t>(T) + 1, false);
        for (int t : detect_special_phase(tables, candidates))
            in_phase[static_cast<size_t>(t)] = true;
        constrained = constrained_subset(candidates);
    }

    // dp[t][i]: minimal cumulative cost of anchoring from T down to t with
    // exactly i intervals; every interval's cost is charged at its lower
    // anchor with its full span.
    std::vector<std::vector<double>> dp(static_cast<size_t>(T) + 1,
                                        std::vector<double>(static_cast<size_t>(ns) + 1, kInf));
    std::vector<std::vector<int>> choice(static_cast<size_t>(T) + 1,
                                         std::vector<int>(static_cast<size_t>(ns) + 1, 0));
    dp[static_cast<size_t>(T)][0] = 0.0;

    for (int i = 1; i <= ns; ++i) {
        for (int t = T - 1; t >= 1; --t) {
            const std::vector<int>& cand =
                (phase_constrained && in_phase[static_cast<size_t>(t)]) ? constrained : candidates;
            double best = kInf;
            int best_n = 0;
            for (int n : cand) {  // ascending: ties keep the smaller interval
                const int u = t + n;
                if (u > T) break;
                const double up = dp[static_cast<size_t>(u)][static_cast<size_t>(i - 1)];
                if (!std::isfinite(up)) continue;
                const double cost = up + step_cost(tables, t, n, options);
                if (cost < best) {
                    best = cost;
                    best_n = n;
                }
            }
            dp[static_cast<size_t>(t)][static_cast<size_t>(i)] = best;
            choice[static_cast<size_t>(t)][static_cast<size_t>(i)] = best_n;
        }
    }

    if (!std::isfinite(dp[1][static_cast<size_t>(ns)])) {
        if (phase_constrained)
            fail(ErrorCode::constrained_infeasible,
                 "no feasible composition under the phase-constrained candidate subset");
        fail(ErrorCode::infeasible,
             "no composition of T-1 into N_s intervals exists for this candidate set");
    }

    // Backtrack from the bottom anchor; each step takes the smallest interval
    // among exact minimizers, so the result is lexicographically smallest read
    // from the final anchor upward.
    std::vector<int> intervals_bottom_up;
    int t = 1;
    for (int i = ns; i >= 1; --i) {
        const int n = choice[static_cast<size_t>(t)][static_cast<size_t>(i)];
        intervals_bottom_up.push_back(n);
        t += n;
    }
    if (t != T) fail(ErrorCode::validation, "optimize: backtracking did not land on T");

    CacheSchedule schedule;
    schedule.total_steps = T;
    schedule.intervals.assign(intervals_bottom_up.rbegin(), intervals_bottom_up.rend());
    schedule.anchors = anchors_from_intervals(T, schedule.intervals);
    schedule.candidates = candidates;
    schedule.phase_constrained = phase_constrained;
    schedule.total_cost = dp[1][static_cast<size_t>(ns)];
    schedule.validate();
    return schedule;
}

// ============================================================================
// Brute-force oracle
// ============================================================================

CacheSchedule brute_force_schedule(const ofs::SensitivityTables& tables, int ns,
                                   std::vector<int> candidates, uint64_t enumeration_limit,
                                   const DcsOptions& options) {
    candidates = normalize_candidates(std::move(candidates), tables);
    const int T = tables.total_steps();
    check_feasibility(ns, candidates, T);

    const double count = std::pow(static_cast<double>(candidates.size()), ns);
    if (count > static_cast<double>(enumeration_limit))
        fail(ErrorCode::resource_limit,
             "enumeration count |candidates|^N_s = " + std::to_string(count) +
                 " exceeds the limit " + std::to_string(enumeration_limit));

    const int min_c = candidates.front();
    const int max_c = candidates.back();

    double best = kInf;
    std::vector<int> best_bottom_up;
    std::vector<int> partial;  // intervals from the bottom anchor upward

    // DFS over compositions choosing the bottom interval first, candidates in
    // ascending order: the first minimum found is the tie-break winner.
    auto dfs = [&](auto&& self, int placed_sum, int remaining) -> void {
        if (remaining == 0) {
            if (placed_sum != T - 1) return;
            std::vector<int> intervals(partial.rbegin(), partial.rend());
            const std::vector<int> anchors = anchors_from_intervals(T, intervals);
            const double cost = fold_cost(tables, anchors, intervals, options);
            if (cost < best) {
                best = cost;
                best_bottom_up = partial;
            }
            return;
        }
        const int left = T - 1 - placed_sum;
        for (int n : candidates) {
            const int after = left - n;
            if (after < (remaining - 1) * min_c) break;
            if (after > (remaining - 1) * max_c) continue;
            partial.push_back(n);
            self(self, placed_sum + n, remaining - 1);
            partial.pop_back();
        }
    };
    dfs(dfs, 0, ns);

    if (!std::isfinite(best))
        fail(ErrorCode::infeasible,
             "no composition of T-1 into N_s intervals exists for this candidate set");

    CacheSchedule schedule;
    schedule.total_steps = T;
    schedule.intervals.assign(best_bottom_up.rbegin(), best_bottom_up.rend());
    schedule.anchors = anchors_from_intervals(T, schedule.intervals);
    schedule.candidates = candidates;
    schedule.phase_constrained = false;
    schedule.total_cost = best;
    schedule.validate();
    return schedule;
}

// ============================================================================
// Cost recomputation & baseline
// ============================================================================

double schedule_cost(const ofs::SensitivityTables& tables, const CacheSchedule& schedule,
                     const DcsOptions& options) {
    schedule.validate();
    if (schedule.total_steps != tables.total_steps())
        fail(ErrorCode::validation, "schedule_cost: schedule T does not match the tables");
    return fold_cost(tables, schedule.anchors, schedule.intervals, options);
}

CacheSchedule uniform_schedule(int total_steps, int ns) {
    if (total_steps < 2) fail(ErrorCode::invalid_config, "uniform_schedule: T must be >= 2");
    if (ns < 1 || ns > total_steps - 1)
        fail(ErrorCode::infeasible, "uniform_schedule: N_s must lie in [1, T-1]");
    const int base = (total_steps - 1) / ns;
    const int rem = (total_steps - 1) % ns;
    CacheSchedule schedule;
    schedule.total_steps = total_steps;
    schedule.intervals.resize(static_cast<size_t>(ns));
    for (int j = 0; j < ns; ++j) schedule.intervals[static_cast<size_t>(j)] = base + (j < rem ? 1 : 0);
    schedule.anchors = anchors_from_intervals(total_steps, schedule.intervals);
    std::vector<int> cand = schedule.intervals;
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    schedule.candidates = cand;
    schedule.total_cost = 0.0;
    schedule.validate();
    return schedule;
}

}  // namespace soda::dcs
