#include "soda/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <ostream>
#include <sstream>
#include <thread>

namespace soda::pipeline {

namespace {

std::string format_double(double v) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

uint64_t flops_proxy(int n_tok, int d, dit::ModuleKind m, int kept) {
    if (kept < 0 || kept > n_tok) fail(ErrorCode::range, "flops_proxy: kept out of [0, N_tok]");
    const uint64_t k = static_cast<uint64_t>(kept);
    const uint64_t dd = static_cast<uint64_t>(d);
    if (m == dit::ModuleKind::att) return 4 * k * dd * dd + 2 * k * k * dd;
    return 8 * k * dd * dd;
}

Comparison compare(const FeatureMap& a, const FeatureMap& b) {
    require_same_shape(a, b, "compare");
    double diff2 = 0.0, nb2 = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        diff2 += d * d;
        nb2 += b.data[i] * b.data[i];
    }
    Comparison c;
    c.cosine_distance = ofs::cosine_distance(a, b);
    c.relative_l2 = std::sqrt(diff2) / std::max(std::sqrt(nb2), 1e-12);
    return c;
}

const char* module_decision_name(ModuleDecision d) {
    switch (d) {
        case ModuleDecision::full: return "full";
        case ModuleDecision::reuse: return "reuse";
        case ModuleDecision::prune: return "prune";
    }
    return "unknown";
}

// ============================================================================
// run_accelerated
// ============================================================================

namespace {

struct ModuleCache {
    FeatureMap values;         // residual-branch output
    int origin_anchor = 0;     // anchor that opened the current interval
    std::vector<int> refresh;  // per-token last-refresh timestep
};

}  // namespace

RunResult run_accelerated(const dit::ToyModel& model, const dcs::CacheSchedule& schedule,
                          const ofs::SensitivityTables& tables, const uas::UasParams& params,
                          const FeatureMap& x_T, const RunOptions& options) {
    const dit::ToyDitConfig& config = model.config();
    const int T = config.total_steps;
    const int L = config.layers;
    const int n_tok = config.token_count;

    schedule.validate();
    if (schedule.total_steps != T)
        fail(ErrorCode::validation, "run: schedule total_steps does not match the model");
    tables.validate_fingerprint(model);
    params.validate();
    if (x_T.tokens != n_tok || x_T.dim != config.hidden_dim)
        fail(ErrorCode::shape, "run: x_T shape does not match config");
    if (!x_T.all_finite()) fail(ErrorCode::invalid_argument, "run: x_T contains non-finite values");

    const dit::AttentionContext att_ctx = options.stale_attention_context
                                              ? dit::AttentionContext::full_input
                                              : dit::AttentionContext::kept_only;

    RunReport report;
    report.schedule = schedule;
    report.params = params;
    report.uas_enabled = options.uas_enabled;
    report.measured_online = options.measure_online_errors;
    report.steps.reserve(static_cast<size_t>(T));

    std::vector<ModuleCache> cache(static_cast<size_t>(L) * dit::kModuleKinds);
    auto cache_at = [&](int l, dit::ModuleKind m) -> ModuleCache& {
        return cache[static_cast<size_t>(l - 1) * dit::kModuleKinds + static_cast<size_t>(m)];
    };
    // Measure mode keeps the previous step's true branch outputs around: the
    // measured prune error substitutes pruned rows from them, mirroring the
    // age-1 convention the offline pruning table is built with.
    std::vector<FeatureMap> prev_truth;
    if (options.measure_online_errors)
        prev_truth.resize(static_cast<size_t>(L) * dit::kModuleKinds);
    auto prev_truth_at = [&](int l, dit::ModuleKind m) -> FeatureMap& {
        return prev_truth[static_cast<size_t>(l - 1) * dit::kModuleKinds + static_cast<size_t>(m)];
    };

    uint64_t flops_total = 0;
    FeatureMap x = x_T;

    for (int t = T; t >= 1; --t) {
        const bool anchor = schedule.is_anchor(t);
        dcs::CacheSchedule::IntervalRef iv{};
        if (!anchor) iv = schedule.interval_at(t);

        StepRecord step;
        step.t = t;
        step.anchor = anchor;

        const std::vector<double> cond = model.condition(t);
        FeatureMap stream = x;

        for (int l = 1; l <= L; ++l) {
            for (dit::ModuleKind m : {dit::ModuleKind::att, dit::ModuleKind::mlp}) {
                ModuleRecord rec;
                rec.layer = l;
                rec.kind = m;
                FeatureMap branch;

                if (anchor) {
                    branch = model.forward_module(l, m, stream, cond);
                    ModuleCache& mc = cache_at(l, m);
                    mc.values = branch;
                    mc.origin_anchor = t;
                    mc.refresh.assign(static_cast<size_t>(n_tok), t);
                    rec.decision = ModuleDecision::full;
                    rec.kept_count = n_tok;
                    rec.kept_fraction = 1.0;
                    rec.rate = 0.0;
                    if (options.measure_online_errors) prev_truth_at(l, m) = branch;
                } else {
                    ModuleCache& mc = cache_at(l, m);
                    rec.lower_anchor = iv.lower;
                    rec.interval = iv.length;
                    rec.cache_origin = mc.origin_anchor;

                    uas::PruneDecision decision;
                    if (options.uas_enabled) {
                        decision = uas::decide(tables, t, iv.lower, l, m, iv.length, params,
                                               stream, options.metric, options.rate_index);
                    }  // default-initialized decision == wholesale reuse

                    rec.rate = decision.rate;
                    rec.delta = decision.delta;
                    rec.cache_error = decision.cache_error;
                    rec.keep_zero_fallback = decision.keep_zero_fallback;

                    if (decision.action == uas::PruneDecision::Action::prune) {
                        const std::vector<int>& kept = decision.kept;
                        FeatureMap fresh =
                            model.forward_module(l, m, stream, cond, &kept, att_ctx);
                        branch = mc.values;
                        int max_refresh = -1;
                        {
                            // Substituted rows are the complement of kept.
                            size_t ki = 0;
                            for (int r = 0; r < n_tok; ++r) {
                                if (ki < kept.size() && kept[ki] == r) {
                                    ++ki;
                                    continue;
                                }
                                max_refresh =
                                    std::max(max_refresh, mc.refresh[static_cast<size_t>(r)]);
                            }
                        }
                        for (int r : kept) {
                            std::copy(fresh.row(r), fresh.row(r) + config.hidden_dim,
                                      branch.row(r));
                            std::copy(fresh.row(r), fresh.row(r) + config.hidden_dim,
                                      mc.values.row(r));
                            mc.refresh[static_cast<size_t>(r)] = t;
                        }
                        rec.decision = ModuleDecision::prune;
                        rec.kept_count = static_cast<int>(kept.size());
                        rec.kept_fraction =
                            static_cast<double>(kept.size()) / static_cast<double>(n_tok);
                        rec.max_substituted_refresh = max_refresh;
                    } else {
                        branch = mc.values;
                        rec.decision = ModuleDecision::reuse;
                        rec.kept_count = 0;
                        rec.kept_fraction = 0.0;
                        int max_refresh = -1;
                        for (int r : mc.refresh) max_refresh = std::max(max_refresh, r);
                        rec.max_substituted_refresh = max_refresh;
                    }

                    if (options.measure_online_errors) {
                        // GT-on-the-side: the full module output on the same
                        // accelerated stream; observation only. Reuse records
                        // measure the substitution as used; prune records
                        // measure the pruning operator itself, substituting
                        // pruned rows from the previous step's truth exactly
                        // as the offline table defines the error.
                        FeatureMap truth = model.forward_module(l, m, stream, cond);
                        rec.has_measured_error = true;
                        if (rec.decision == ModuleDecision::prune) {
                            FeatureMap assembled = branch;
                            const FeatureMap& older = prev_truth_at(l, m);
                            size_t ki = 0;
                            const std::vector<int>& kept = decision.kept;
                            for (int row = 0; row < n_tok; ++row) {
                                if (ki < kept.size() && kept[ki] == row) {
                                    ++ki;
                                    continue;
                                }
                                std::copy(older.row(row), older.row(row) + config.hidden_dim,
                                          assembled.row(row));
                            }
                            rec.measured_error = ofs::cosine_distance(assembled, truth);
                        } else {
                            rec.measured_error = ofs::cosine_distance(branch, truth);
                        }
                        prev_truth_at(l, m) = std::move(truth);
                    }
                }

                rec.flops = flops_proxy(n_tok, config.hidden_dim, m, rec.kept_count);
                flops_total += rec.flops;
                stream.add_inplace(branch);
                step.modules.push_back(std::move(rec));
            }
        }

        if (!stream.all_finite())
            fail(ErrorCode::numeric_overflow, "non-finite activations at step " + std::to_string(t));
        const FeatureMap eps = model.predict_noise(stream);
        x = model.denoise_update(x, eps, t);
        if (!x.all_finite())
            fail(ErrorCode::numeric_overflow, "non-finite state produced at step " + std::to_string(t));
        report.steps.push_back(std::move(step));
    }

    const uint64_t full_module_cost =
        flops_proxy(n_tok, config.hidden_dim, dit::ModuleKind::att, n_tok) +
        flops_proxy(n_tok, config.hidden_dim, dit::ModuleKind::mlp, n_tok);
    report.totals.flops_proxy_total = flops_total;
    report.totals.flops_proxy_full_run = static_cast<uint64_t>(T) * L * full_module_cost;
    report.totals.speedup_ratio = static_cast<double>(report.totals.flops_proxy_full_run) /
                                  static_cast<double>(std::max<uint64_t>(flops_total, 1));

    RunAggregates& agg = report.aggregates;
    double rate_sum = 0.0, prune_rate_sum = 0.0, kept_sum = 0.0;
    for (const StepRecord& s : report.steps) {
        if (s.anchor) continue;
        for (const ModuleRecord& r : s.modules) {
            agg.prunable_records += 1;
            rate_sum += r.rate;
            kept_sum += r.kept_fraction;
            if (r.decision == ModuleDecision::prune) {
                agg.prune_records += 1;
                prune_rate_sum += r.rate;
            } else {
                agg.reuse_records += 1;
            }
            if (r.keep_zero_fallback) agg.keep_zero_fallbacks += 1;
        }
    }
    if (agg.prunable_records > 0) {
        agg.mean_decided_rate = rate_sum / agg.prunable_records;
        agg.mean_kept_fraction = kept_sum / agg.prunable_records;
    }
    if (agg.prune_records > 0) agg.mean_prune_rate = prune_rate_sum / agg.prune_records;

    return RunResult{std::move(x), std::move(report)};
}

void finalize_comparison(RunReport& report, const FeatureMap& final_state,
                         const FeatureMap& oracle_final) {
    report.comparison = compare(final_state, oracle_final);
    report.has_comparison = true;
}

// ============================================================================
// Offline/online consistency
// ============================================================================

ConsistencyResult online_consistency_check(const RunReport& report,
                                           const ofs::SensitivityTables& tables, double k_sigma) {
    if (!report.measured_online)
        fail(ErrorCode::missing_data,
             "consistency check requires a run with measure_online_errors set");

    ConsistencyResult result;
    for (const StepRecord& s : report.steps) {
        if (s.anchor) continue;
        for (const ModuleRecord& r : s.modules) {
            if (!r.has_measured_error) continue;
            double mean = 0.0, sd = 0.0;
            if (r.decision == ModuleDecision::reuse) {
                // Effective reuse age at this step: content from the opening
                // anchor gets reused at t.
                const int age = r.cache_origin - s.t;
                mean = tables.caching_mean_at(s.t, r.layer, r.kind, age);
                sd = tables.caching_std_at(s.t, r.layer, r.kind, age);
            } else {
                mean = uas::pruning_error_lookup(tables, s.t, r.layer, r.kind, r.rate);
                sd = uas::pruning_std_lookup(tables, s.t, r.layer, r.kind, r.rate);
            }
            result.checked += 1;
            if (r.measured_error >= mean - k_sigma * sd && r.measured_error <= mean + k_sigma * sd)
                result.inside += 1;
        }
    }
    result.vacuous = result.checked == 0;
    result.fraction =
        result.vacuous ? 1.0 : static_cast<double>(result.inside) / result.checked;
    return result;
}

// ============================================================================
// Sweep
// ============================================================================

const char* sweep_variant_name(SweepVariant v) {
    switch (v) {
        case SweepVariant::soda_uas: return "soda_uas";
        case SweepVariant::soda_cache: return "soda_cache";
        case SweepVariant::uniform_uas: return "uniform_uas";
        case SweepVariant::uniform_cache: return "uniform_cache";
    }
    return "unknown";
}

SweepResult sweep(const dit::ToyModel& model, const ofs::SensitivityTables& tables,
                  const SweepOptions& options) {
    const dit::ToyDitConfig& config = model.config();
    if (options.ns_list.empty()) fail(ErrorCode::invalid_config, "sweep: ns_list is empty");
    if (options.seeds.empty()) fail(ErrorCode::invalid_config, "sweep: seed list is empty");

    std::vector<int> candidates = options.candidates;
    if (candidates.empty()) {
        for (int n = 1; n <= tables.n_max; ++n) candidates.push_back(n);
    }

    SweepResult result;

    // Oracle finals, one per seed.
    std::vector<FeatureMap> initial(options.seeds.size());
    std::vector<FeatureMap> oracle(options.seeds.size());
    for (size_t i = 0; i < options.seeds.size(); ++i) {
        initial[i] = dit::gaussian_feature_map(config.token_count, config.hidden_dim,
                                               options.seeds[i]);
        oracle[i] = model.run_full_trajectory(initial[i], /*capture=*/false).states[0];
    }

    struct PlannedRun {
        int ns;
        SweepVariant variant;
        size_t seed_idx;
        const dcs::CacheSchedule* schedule;
        double schedule_cost;
        bool uas;
    };

    // Schedules per ns; failures are recorded, never silently dropped.
    std::vector<std::pair<int, dcs::CacheSchedule>> soda_schedules, uniform_schedules;
    std::vector<std::pair<int, double>> soda_costs, uniform_costs;
    for (int ns : options.ns_list) {
        try {
            dcs::CacheSchedule s =
                dcs::optimize(tables, ns, candidates, options.phase_constrained);
            const double cost = dcs::schedule_cost(tables, s);
            soda_schedules.emplace_back(ns, std::move(s));
            soda_costs.emplace_back(ns, cost);
        } catch (const SodaError& e) {
            result.skipped.push_back("ns=" + std::to_string(ns) + " soda: " + e.what());
        }
        try {
            dcs::CacheSchedule u = dcs::uniform_schedule(config.total_steps, ns);
            const double cost = dcs::schedule_cost(tables, u);  // throws if n > n_max
            uniform_schedules.emplace_back(ns, std::move(u));
            uniform_costs.emplace_back(ns, cost);
        } catch (const SodaError& e) {
            result.skipped.push_back("ns=" + std::to_string(ns) + " uniform: " + e.what());
        }
    }

    auto find_schedule = [](const std::vector<std::pair<int, dcs::CacheSchedule>>& v,
                            int ns) -> const dcs::CacheSchedule* {
        for (const auto& p : v)
            if (p.first == ns) return &p.second;
        return nullptr;
    };
    auto find_cost = [](const std::vector<std::pair<int, double>>& v, int ns) {
        for (const auto& p : v)
            if (p.first == ns) return p.second;
        return 0.0;
    };

    std::vector<PlannedRun> plan;
    for (int ns : options.ns_list) {
        for (SweepVariant variant : {SweepVariant::soda_uas, SweepVariant::soda_cache,
                                     SweepVariant::uniform_uas, SweepVariant::uniform_cache}) {
            const bool is_soda =
                variant == SweepVariant::soda_uas || variant == SweepVariant::soda_cache;
            const dcs::CacheSchedule* schedule =
                is_soda ? find_schedule(soda_schedules, ns) : find_schedule(uniform_schedules, ns);
            if (schedule == nullptr) continue;  // already logged in skipped
            const double cost = is_soda ? find_cost(soda_costs, ns) : find_cost(uniform_costs, ns);
            const bool uas =
                variant == SweepVariant::soda_uas || variant == SweepVariant::uniform_uas;
            for (size_t i = 0; i < options.seeds.size(); ++i)
                plan.push_back(PlannedRun{ns, variant, i, schedule, cost, uas});
        }
    }

    std::vector<SweepRecord> records(plan.size());
    auto run_one = [&](size_t idx) {
        const PlannedRun& p = plan[idx];
        RunOptions ro;
        ro.uas_enabled = p.uas;
        RunResult rr = run_accelerated(model, *p.schedule, tables, options.params,
                                       initial[p.seed_idx], ro);
        const Comparison c = compare(rr.final_state, oracle[p.seed_idx]);
        SweepRecord rec;
        rec.ns = p.ns;
        rec.variant = p.variant;
        rec.seed = options.seeds[p.seed_idx];
        rec.schedule_cost = p.schedule_cost;
        rec.flops_ratio = static_cast<double>(rr.report.totals.flops_proxy_total) /
                          static_cast<double>(rr.report.totals.flops_proxy_full_run);
        rec.cos_dist = c.cosine_distance;
        rec.rel_l2 = c.relative_l2;
        records[idx] = rec;
    };

    const int jobs = std::max(1, options.jobs);
    if (jobs == 1) {
        for (size_t i = 0; i < plan.size(); ++i) run_one(i);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < jobs; ++w) {
            pool.emplace_back([&]() {
                for (;;) {
                    const size_t i = next.fetch_add(1);
                    if (i >= plan.size()) return;
                    run_one(i);
                }
            });
        }
        for (std::thread& th : pool) th.join();
    }

    result.records = std::move(records);
    return result;
}

void write_sweep_csv(const SweepResult& result, std::ostream& out) {
    out << "ns,variant,seed,schedule_cost,flops_ratio,cos_dist,rel_l2\n";
    for (const SweepRecord& r : result.records) {
        out << r.ns << ',' << sweep_variant_name(r.variant) << ',' << r.seed << ','
            << format_double(r.schedule_cost) << ',' << format_double(r.flops_ratio) << ','
            << format_double(r.cos_dist) << ',' << format_double(r.rel_l2) << '\n';
    }
}

}  // namespace soda::pipeline
