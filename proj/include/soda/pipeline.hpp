#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "soda/dcs.hpp"
#include "soda/ofs.hpp"
#include "soda/uas.hpp"

namespace soda::pipeline {

// Matmul-dominant operation count for one module evaluation over k tokens.
// ATT: 4kd^2 + 2k^2 d; MLP: 8kd^2. Wholesale reuse contributes k = 0.
uint64_t flops_proxy(int n_tok, int d, dit::ModuleKind m, int kept);

struct Comparison {
    double cosine_distance = 0.0;
    double relative_l2 = 0.0;
};

// Cosine distance plus relative L2 = ||a - b|| / max(||b||, 1e-12).
Comparison compare(const FeatureMap& a, const FeatureMap& b);

// ============================================================================
// Run report
// ============================================================================

enum class ModuleDecision { full, reuse, prune };
const char* module_decision_name(ModuleDecision d);

struct ModuleRecord {
    int layer = 0;
    dit::ModuleKind kind = dit::ModuleKind::att;
    ModuleDecision decision = ModuleDecision::full;
    double rate = 0.0;           // computed alpha (0 at anchors)
    int kept_count = 0;          // tokens computed fresh
    double kept_fraction = 1.0;  // kept_count / N_tok
    bool keep_zero_fallback = false;
    double delta = 0.0;        // decision inputs at pruned steps
    double cache_error = 0.0;
    int lower_anchor = 0;  // interval bookkeeping (0 at anchors)
    int interval = 0;
    int cache_origin = 0;              // opening anchor of the substituted content
    int max_substituted_refresh = -1;  // newest refresh among substituted tokens
    uint64_t flops = 0;
    bool has_measured_error = false;
    double measured_error = 0.0;  // vs the full module output on the same stream
};

struct StepRecord {
    int t = 0;
    bool anchor = false;
    std::vector<ModuleRecord> modules;
};

struct RunTotals {
    uint64_t flops_proxy_total = 0;
    uint64_t flops_proxy_full_run = 0;
    double speedup_ratio = 1.0;  // full / accelerated, >= 1
};

struct RunAggregates {
    int prunable_records = 0;  // module records at pruned steps
    int prune_records = 0;
    int reuse_records = 0;
    int keep_zero_fallbacks = 0;
    double mean_decided_rate = 0.0;  // computed alpha over all prunable records
    double mean_prune_rate = 0.0;    // computed alpha over Prune records only
    double mean_kept_fraction = 0.0; // over prunable records
};

struct RunReport {
    std::vector<StepRecord> steps;  // exactly T records, t = T..1
    RunTotals totals;
    RunAggregates aggregates;
    bool has_comparison = false;
    Comparison comparison;  // vs the full-run oracle, filled by the caller
    // config echo
    dcs::CacheSchedule schedule;
    uas::UasParams params;
    uint64_t x_seed = 0;
    bool uas_enabled = true;
    bool measured_online = false;
};

// ============================================================================
// Accelerated execution
// ============================================================================

struct RunOptions {
    bool uas_enabled = true;  // false: wholesale cache reuse at pruned steps
    bool measure_online_errors = false;
    uas::ImportanceMetric metric = uas::ImportanceMetric::abs_mean;
    uas::RateIndexMode rate_index = uas::RateIndexMode::effective_age;
    bool stale_attention_context = false;  // research flag
};

struct RunResult {
    FeatureMap final_state;
    RunReport report;
};

// Executes the schedule: full computation at anchors, UAS-governed prune or
// reuse decisions in between; deterministic given all inputs. Measurement
// (when enabled) never feeds back into decisions or state.
RunResult run_accelerated(const dit::ToyModel& model, const dcs::CacheSchedule& schedule,
                          const ofs::SensitivityTables& tables, const uas::UasParams& params,
                          const FeatureMap& x_T, const RunOptions& options = {});

void finalize_comparison(RunReport& report, const FeatureMap& final_state,
                         const FeatureMap& oracle_final);

// ============================================================================
// Offline/online consistency
// ============================================================================

struct ConsistencyResult {
    double fraction = 1.0;
    int checked = 0;
    int inside = 0;
    bool vacuous = true;
};

// Fraction of measured online errors falling within mean +- k_sigma * std of
// the matching offline cell (effective-age caching cell for reuse,
// interpolated pruning cell for prune).
ConsistencyResult online_consistency_check(const RunReport& report,
                                           const ofs::SensitivityTables& tables, double k_sigma);

// ============================================================================
// Sweep
// ============================================================================

enum class SweepVariant { soda_uas = 0, soda_cache = 1, uniform_uas = 2, uniform_cache = 3 };
const char* sweep_variant_name(SweepVariant v);

struct SweepRecord {
    int ns = 0;
    SweepVariant variant = SweepVariant::soda_uas;
    uint64_t seed = 0;
    double schedule_cost = 0.0;
    double flops_ratio = 0.0;  // accelerated / full, in (0, 1]
    double cos_dist = 0.0;
    double rel_l2 = 0.0;
};

struct SweepOptions {
    std::vector<int> ns_list;
    std::vector<uint64_t> seeds;  // x_T seeds
    uas::UasParams params;
    std::vector<int> candidates;  // for the optimized schedules
    bool phase_constrained = false;
    int jobs = 1;
};

struct SweepResult {
    std::vector<SweepRecord> records;   // deterministic (ns, variant, seed) order
    std::vector<std::string> skipped;   // human-readable reasons, never silent
};

SweepResult sweep(const dit::ToyModel& model, const ofs::SensitivityTables& tables,
                  const SweepOptions& options);

// CSV: header `ns,variant,seed,schedule_cost,flops_ratio,cos_dist,rel_l2`,
// one row per run, decimal-point floats.
void write_sweep_csv(const SweepResult& result, std::ostream& out);

}  // namespace soda::pipeline
