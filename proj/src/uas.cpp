#include "soda/uas.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace soda::uas {

namespace {

double interp_over_grid(const ofs::SensitivityTables& tables, int t, int l, dit::ModuleKind m,
                        double alpha, bool use_std) {
    if (alpha < 0.0) fail(ErrorCode::range, "pruning lookup: alpha must be >= 0");
    if (!tables.pruning_present(t))
        fail(ErrorCode::absent_cell, "pruning lookup: row at t=T is absent");
    auto cell = [&](int k) {
        return use_std ? tables.pruning_std_at(t, l, m, k) : tables.pruning_mean_at(t, l, m, k);
    };
    const std::vector<double>& grid = tables.alpha_grid;
    // (0, 0) anchor: zero pruning provably introduces zero error.
    if (alpha <= 0.0) return 0.0;
    if (alpha <= grid.front()) {
        const double f = alpha / grid.front();
        return f * cell(0);
    }
    for (size_t k = 1; k < grid.size(); ++k) {
        if (alpha <= grid[k]) {
            const double f = (alpha - grid[k - 1]) / (grid[k] - grid[k - 1]);
            return (1.0 - f) * cell(static_cast<int>(k - 1)) + f * cell(static_cast<int>(k));
        }
    }
    return cell(static_cast<int>(grid.size()) - 1);  // clamp above the grid
}

}  // namespace

void UasParams::validate() const {
    if (!(lambda >= 0.0)) fail(ErrorCode::range, "lambda must be >= 0");
    if (!(alpha_max > 0.0 && alpha_max <= 1.0))
        fail(ErrorCode::range, "alpha_max must lie in (0, 1]");
}

double pruning_rate(const ofs::SensitivityTables& tables, int t, int l, dit::ModuleKind m, int n,
                    const UasParams& params) {
    params.validate();
    const double cell = tables.caching_mean_at(t, l, m, n);
    return std::clamp(params.lambda * cell + params.beta, 0.0, params.alpha_max);
}

double pruning_error_lookup(const ofs::SensitivityTables& tables, int t, int l, dit::ModuleKind m,
                            double alpha) {
    return interp_over_grid(tables, t, l, m, alpha, /*use_std=*/false);
}

double pruning_std_lookup(const ofs::SensitivityTables& tables, int t, int l, dit::ModuleKind m,
                          double alpha) {
    return interp_over_grid(tables, t, l, m, alpha, /*use_std=*/true);
}

std::vector<int> select_positions(const FeatureMap& features, int keep_count,
                                  ImportanceMetric metric) {
    const int n_tok = features.tokens;
    if (keep_count < 1 || keep_count > n_tok)
        fail(ErrorCode::range, "select_positions: keep count must lie in [1, N_tok]");
    std::vector<double> score(static_cast<size_t>(n_tok));
    for (int r = 0; r < n_tok; ++r) {
        double mean = 0.0;
        for (int j = 0; j < features.dim; ++j) mean += features.at(r, j);
        mean /= features.dim;
        score[static_cast<size_t>(r)] = (metric == ImportanceMetric::abs_mean) ? std::fabs(mean) : mean;
    }
    std::vector<int> order(static_cast<size_t>(n_tok));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (score[static_cast<size_t>(a)] != score[static_cast<size_t>(b)])
            return score[static_cast<size_t>(a)] > score[static_cast<size_t>(b)];
        return a < b;  // ties keep the lower index
    });
    order.resize(static_cast<size_t>(keep_count));
    std::sort(order.begin(), order.end());
    return order;
}

PruneDecision decide(const ofs::SensitivityTables& tables, int t_step, int t_low, int l,
                     dit::ModuleKind m, int n, const UasParams& params, const FeatureMap& features,
                     ImportanceMetric metric, RateIndexMode index_mode) {
    if (!(t_low < t_step && t_step < t_low + n))
        fail(ErrorCode::invalid_argument, "decide: step must lie strictly inside the interval");

    int cell_t = t_low;
    int cell_n = n;
    if (index_mode == RateIndexMode::effective_age) {
        cell_t = t_step;
        cell_n = t_low + n - t_step;
    }

    PruneDecision d;
    d.rate = pruning_rate(tables, cell_t, l, m, cell_n, params);
    d.cache_error = tables.caching_mean_at(cell_t, l, m, cell_n);
    d.delta = pruning_error_lookup(tables, t_step, l, m, d.rate);

    if (d.delta >= d.cache_error) {
        d.action = PruneDecision::Action::reuse_all;
        return d;
    }

    const int n_tok = features.tokens;
    const int keep = n_tok - static_cast<int>(std::lround(d.rate * n_tok));
    if (keep < 1) {
        // Never prune everything; fall back to wholesale reuse and flag it.
        d.action = PruneDecision::Action::reuse_all;
        d.keep_zero_fallback = true;
        return d;
    }
    d.action = PruneDecision::Action::prune;
    d.kept = select_positions(features, keep, metric);
    return d;
}

double mean_rate_for_beta(const ofs::SensitivityTables& tables, const dcs::CacheSchedule& schedule,
                          double lambda, double beta, double alpha_max,
                          RateIndexMode index_mode) {
    schedule.validate();
    double weighted = 0.0;
    double weight = 0.0;
    const int L = tables.layers();
    for (size_t j = 0; j < schedule.intervals.size(); ++j) {
        const int n = schedule.intervals[j];
        if (n < 2) continue;  // no pruned steps inside
        const int t_low = schedule.anchors[j + 1];
        const int opening = t_low + n;
        for (int t_step = t_low + 1; t_step < opening; ++t_step) {
            const int cell_t = index_mode == RateIndexMode::effective_age ? t_step : t_low;
            const int cell_n = index_mode == RateIndexMode::effective_age ? opening - t_step : n;
            for (int l = 1; l <= L; ++l) {
                for (dit::ModuleKind m : {dit::ModuleKind::att, dit::ModuleKind::mlp}) {
                    const double cell = tables.caching_mean_at(cell_t, l, m, cell_n);
                    weighted += std::clamp(lambda * cell + beta, 0.0, alpha_max);
                    weight += 1.0;
                }
            }
        }
    }
    if (weight == 0.0)
        fail(ErrorCode::invalid_argument,
             "mean_rate_for_beta: schedule has no pruned steps (all intervals are 1)");
    return weighted / weight;
}

BetaSolution solve_beta(const ofs::SensitivityTables& tables, const dcs::CacheSchedule& schedule,
                        double lambda, double target_mean_rate, double alpha_max,
                        RateIndexMode index_mode) {
    if (!(lambda >= 0.0)) fail(ErrorCode::range, "solve_beta: lambda must be >= 0");
    if (!(target_mean_rate >= 0.0 && target_mean_rate <= alpha_max))
        fail(ErrorCode::range, "solve_beta: target must lie in [0, alpha_max]");

    constexpr double kTol = 1e-6;
    const auto mean_at = [&](double beta) {
        return mean_rate_for_beta(tables, schedule, lambda, beta, alpha_max, index_mode);
    };
    const double lo_mean = mean_at(-1.0);
    const double hi_mean = mean_at(1.0);
    if (target_mean_rate < lo_mean - kTol || target_mean_rate > hi_mean + kTol)
        fail(ErrorCode::saturation,
             "solve_beta: target " + std::to_string(target_mean_rate) +
                 " is outside the achievable mean-rate range [" + std::to_string(lo_mean) + ", " +
                 std::to_string(hi_mean) + "] for beta in [-1, 1]");

    // The mean is continuous and nondecreasing in beta; bisect on the
    // predicate mean(beta) <= target so flat regions resolve to the largest
    // satisfying beta.
    double lo = -1.0, hi = 1.0;
    if (mean_at(lo) > target_mean_rate) {
        // Entire range is above the target but within tolerance at -1.
        return BetaSolution{lo, lo_mean};
    }
    for (int iter = 0; iter < 200 && (hi - lo) > 1e-15; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (mean_at(mid) <= target_mean_rate)
            lo = mid;
        else
            hi = mid;
    }
    return BetaSolution{lo, mean_at(lo)};
}

}  // namespace soda::uas
