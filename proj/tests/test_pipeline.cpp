#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "soda/pipeline.hpp"
#include "test_support.hpp"

using namespace soda;
using namespace soda::testing;

namespace {

struct Fixture {
    dit::ToyDitConfig config;
    dit::ToyModel model;
    ofs::SensitivityTables tables;
    FeatureMap x_T;
    FeatureMap oracle_final;

    explicit Fixture(int total_steps = 12, int layers = 2, uint32_t samples = 2, int n_max = 4)
        : config(tiny_config(total_steps, layers)),
          model(dit::ToyModel::build(config)),
          tables(ofs::build_tables(model, samples, n_max, ofs::default_alpha_grid(), 11)),
          x_T(dit::gaussian_feature_map(config.token_count, config.hidden_dim, 23)) {
        oracle_final = model.run_full_trajectory(x_T, false).states[0];
    }
};

}  // namespace

TEST_CASE("flops_proxy formulas") {
    CHECK(pipeline::flops_proxy(16, 32, dit::ModuleKind::att, 0) == 0);
    CHECK(pipeline::flops_proxy(16, 32, dit::ModuleKind::mlp, 0) == 0);
    CHECK(pipeline::flops_proxy(16, 32, dit::ModuleKind::att, 8) == 36864);
    CHECK(pipeline::flops_proxy(16, 32, dit::ModuleKind::mlp, 16) == 8ull * 16 * 32 * 32);
    CHECK_THROWS_AS(pipeline::flops_proxy(16, 32, dit::ModuleKind::att, 17), SodaError);
}

TEST_CASE("compare: identity, collinear scaling, single-direction bump") {
    FeatureMap b(2, 3);
    b.at(0, 0) = 3.0;
    b.at(1, 2) = 4.0;

    const pipeline::Comparison same = pipeline::compare(b, b);
    CHECK(same.cosine_distance == 0.0);
    CHECK(same.relative_l2 == 0.0);

    FeatureMap a2 = b;
    for (double& v : a2.data) v *= 2.0;
    const pipeline::Comparison doubled = pipeline::compare(a2, b);
    CHECK(doubled.cosine_distance == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(doubled.relative_l2 == doctest::Approx(1.0).epsilon(1e-12));

    // a = b + e0 * ||b||: relative L2 must be exactly ||e0 * ||b|| || / ||b|| = 1.
    const double norm_b = 5.0;  // 3-4-5
    FeatureMap a3 = b;
    a3.at(0, 0) += norm_b;
    const pipeline::Comparison bumped = pipeline::compare(a3, b);
    CHECK(bumped.relative_l2 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("anchors-everywhere schedule reproduces the full run bit-exactly") {
    Fixture f;
    const dcs::CacheSchedule all = dcs::optimize(f.tables, f.config.total_steps - 1, {1}, false);
    uas::UasParams params;  // defaults; no pruned steps exist anyway

    const pipeline::RunResult result =
        pipeline::run_accelerated(f.model, all, f.tables, params, f.x_T);
    CHECK(result.final_state == f.oracle_final);

    const pipeline::Comparison c = pipeline::compare(result.final_state, f.oracle_final);
    CHECK(c.relative_l2 <= 1e-12);
    CHECK(result.report.totals.speedup_ratio == doctest::Approx(1.0));
    CHECK(result.report.totals.flops_proxy_total == result.report.totals.flops_proxy_full_run);
}

TEST_CASE("zero-rate pruning reproduces the full run") {
    Fixture f;
    const dcs::CacheSchedule schedule = dcs::optimize(f.tables, 4, {1, 2, 3, 4}, false);
    uas::UasParams params;
    params.lambda = 0.0;
    params.beta = 0.0;  // rate 0 -> delta = E_p(0) = 0 < E_c -> prune nothing

    const pipeline::RunResult result =
        pipeline::run_accelerated(f.model, schedule, f.tables, params, f.x_T);
    const pipeline::Comparison c = pipeline::compare(result.final_state, f.oracle_final);
    CHECK(c.relative_l2 <= 1e-9);

    for (const pipeline::StepRecord& s : result.report.steps) {
        if (s.anchor) continue;
        for (const pipeline::ModuleRecord& r : s.modules) {
            CHECK(r.decision == pipeline::ModuleDecision::prune);
            CHECK(r.kept_count == f.config.token_count);
        }
    }
}

TEST_CASE("report structure: record counts, anchor records, trace completeness, flops") {
    Fixture f;
    const dcs::CacheSchedule schedule = dcs::optimize(f.tables, 4, {1, 2, 3, 4}, false);
    uas::UasParams params;  // lambda 0.3, beta 0.4

    const pipeline::RunResult result =
        pipeline::run_accelerated(f.model, schedule, f.tables, params, f.x_T);
    const pipeline::RunReport& report = result.report;

    CHECK(static_cast<int>(report.steps.size()) == f.config.total_steps);

    std::set<std::tuple<int, int, int>> seen;
    uint64_t flops = 0;
    for (const pipeline::StepRecord& s : report.steps) {
        CHECK(static_cast<int>(s.modules.size()) == f.config.layers * dit::kModuleKinds);
        for (const pipeline::ModuleRecord& r : s.modules) {
            seen.insert({s.t, r.layer, static_cast<int>(r.kind)});
            flops += r.flops;
            if (s.anchor) {
                CHECK(r.decision == pipeline::ModuleDecision::full);
                CHECK(r.rate == 0.0);
                CHECK(r.kept_fraction == 1.0);
            } else {
                // Cache freshness: nothing substituted can predate the
                // interval's opening anchor.
                CHECK(r.cache_origin == r.lower_anchor + r.interval);
                CHECK(r.max_substituted_refresh <= r.lower_anchor + r.interval);
            }
        }
    }
    CHECK(seen.size() ==
          static_cast<size_t>(f.config.total_steps) * f.config.layers * dit::kModuleKinds);
    CHECK(flops == report.totals.flops_proxy_total);
    CHECK(report.totals.speedup_ratio >= 1.0);
}

TEST_CASE("measurement is observation-only and decisions are sound") {
    Fixture f;
    const dcs::CacheSchedule schedule = dcs::optimize(f.tables, 4, {1, 2, 3, 4}, false);
    uas::UasParams params;

    pipeline::RunOptions plain;
    pipeline::RunOptions measured;
    measured.measure_online_errors = true;

    const pipeline::RunResult a =
        pipeline::run_accelerated(f.model, schedule, f.tables, params, f.x_T, plain);
    const pipeline::RunResult b =
        pipeline::run_accelerated(f.model, schedule, f.tables, params, f.x_T, measured);
    CHECK(a.final_state == b.final_state);  // bit-identical

    int measured_count = 0;
    for (const pipeline::StepRecord& s : b.report.steps) {
        if (s.anchor) continue;
        for (const pipeline::ModuleRecord& r : s.modules) {
            CHECK(r.has_measured_error);
            ++measured_count;
            if (r.decision == pipeline::ModuleDecision::prune) {
                CHECK(r.delta < r.cache_error);
            } else {
                CHECK((r.delta >= r.cache_error || r.keep_zero_fallback));
            }
        }
    }
    CHECK(measured_count > 0);
}

TEST_CASE("fingerprint mismatch and shape errors are rejected") {
    Fixture f;
    const dcs::CacheSchedule schedule = dcs::optimize(f.tables, 4, {1, 2, 3, 4}, false);
    uas::UasParams params;

    dit::ToyDitConfig other_cfg = f.config;
    other_cfg.seed = f.config.seed + 100;
    const dit::ToyModel other = dit::ToyModel::build(other_cfg);
    try {
        pipeline::run_accelerated(other, schedule, f.tables, params, f.x_T);
        FAIL("expected validation error");
    } catch (const SodaError& e) {
        CHECK(e.code() == ErrorCode::validation);
    }

    FeatureMap bad(f.config.token_count + 1, f.config.hidden_dim);
    CHECK_THROWS_AS(pipeline::run_accelerated(f.model, schedule, f.tables, params, bad),
                    SodaError);
}

TEST_CASE("online_consistency_check: missing data, vacuous, exact-mean run") {
    Fixture f;
    const dcs::CacheSchedule anchors_everywhere =
        dcs::optimize(f.tables, f.config.total_steps - 1, {1}, false);
    uas::UasParams params;

    // Run without measurements -> missing_data.
    const pipeline::RunResult plain =
        pipeline::run_accelerated(f.model, anchors_everywhere, f.tables, params, f.x_T);
    try {
        pipeline::online_consistency_check(plain.report, f.tables, 4.0);
        FAIL("expected missing_data");
    } catch (const SodaError& e) {
        CHECK(e.code() == ErrorCode::missing_data);
    }

    // Anchors everywhere with measurement: no pruned steps -> vacuous 1.0.
    pipeline::RunOptions measured;
    measured.measure_online_errors = true;
    const pipeline::RunResult vac =
        pipeline::run_accelerated(f.model, anchors_everywhere, f.tables, params, f.x_T, measured);
    const pipeline::ConsistencyResult vr =
        pipeline::online_consistency_check(vac.report, f.tables, 4.0);
    CHECK(vr.vacuous);
    CHECK(vr.fraction == 1.0);

    // S=1 tables built from the exact same trajectory the run reproduces, a
    // zero-rate run: every measured prune error is exactly the offline mean.
    const std::vector<FeatureMap> forced = {f.x_T};
    ofs::BuildOptions bo;
    bo.samples = 1;
    bo.n_max = 4;
    bo.forced_initial_states = &forced;
    const ofs::SensitivityTables exact = ofs::build_tables(f.model, bo);
    uas::UasParams zero;
    zero.lambda = 0.0;
    zero.beta = 0.0;
    const dcs::CacheSchedule schedule = dcs::optimize(exact, 4, {1, 2, 3, 4}, false);
    const pipeline::RunResult run =
        pipeline::run_accelerated(f.model, schedule, exact, zero, f.x_T, measured);
    const pipeline::ConsistencyResult cr = pipeline::online_consistency_check(run.report, exact, 4.0);
    CHECK_FALSE(cr.vacuous);
    CHECK(cr.fraction == 1.0);
}

TEST_CASE("sweep: degenerate budget, cost dominance, CSV shape") {
    Fixture f;
    pipeline::SweepOptions options;
    options.ns_list = {f.config.total_steps - 1, 4};
    options.seeds = {501, 502, 503};
    options.candidates = {1, 2, 3, 4};

    const pipeline::SweepResult result = pipeline::sweep(f.model, f.tables, options);
    CHECK(result.skipped.empty());
    CHECK(result.records.size() == 2 * 4 * 3);

    for (const pipeline::SweepRecord& r : result.records) {
        if (r.ns == f.config.total_steps - 1) {
            CHECK(r.flops_ratio == doctest::Approx(1.0));
            CHECK(r.cos_dist <= 1e-12);
        }
        CHECK(r.flops_ratio > 0.0);
        CHECK(r.flops_ratio <= 1.0);
    }

    // SODA schedule cost <= uniform baseline cost at equal budget.
    for (int ns : options.ns_list) {
        double soda_cost = -1, uniform_cost = -1;
        for (const pipeline::SweepRecord& r : result.records) {
            if (r.ns != ns) continue;
            if (r.variant == pipeline::SweepVariant::soda_uas) soda_cost = r.schedule_cost;
            if (r.variant == pipeline::SweepVariant::uniform_uas) uniform_cost = r.schedule_cost;
        }
        CHECK(soda_cost <= uniform_cost);
    }

    // Deterministic ordering and parallel equivalence.
    pipeline::SweepOptions jobs2 = options;
    jobs2.jobs = 2;
    const pipeline::SweepResult parallel = pipeline::sweep(f.model, f.tables, jobs2);
    REQUIRE(parallel.records.size() == result.records.size());
    for (size_t i = 0; i < result.records.size(); ++i) {
        CHECK(parallel.records[i].ns == result.records[i].ns);
        CHECK(parallel.records[i].variant == result.records[i].variant);
        CHECK(parallel.records[i].seed == result.records[i].seed);
        CHECK(parallel.records[i].cos_dist == result.records[i].cos_dist);
    }

    std::ostringstream csv;
    pipeline::write_sweep_csv(result, csv);
    const std::string text = csv.str();
    CHECK(text.rfind("ns,variant,seed,schedule_cost,flops_ratio,cos_dist,rel_l2\n", 0) == 0);
    size_t lines = 0;
    for (char c : text)
        if (c == '\n') ++lines;
    CHECK(lines == result.records.size() + 1);
}

TEST_CASE("sweep: infeasible budgets are skipped with a reason") {
    Fixture f;
    pipeline::SweepOptions options;
    options.ns_list = {1};  // 1 * 4 < 11: soda infeasible; uniform needs n=11 > n_max
    options.seeds = {7};
    options.candidates = {1, 2, 3, 4};
    const pipeline::SweepResult result = pipeline::sweep(f.model, f.tables, options);
    CHECK(result.records.empty());
    CHECK(result.skipped.size() == 2);
}

TEST_CASE("no-UAS variant reuses wholesale at every pruned step") {
    Fixture f;
    const dcs::CacheSchedule schedule = dcs::optimize(f.tables, 4, {1, 2, 3, 4}, false);
    uas::UasParams params;
    pipeline::RunOptions options;
    options.uas_enabled = false;

    const pipeline::RunResult result =
        pipeline::run_accelerated(f.model, schedule, f.tables, params, f.x_T, options);
    for (const pipeline::StepRecord& s : result.report.steps) {
        if (s.anchor) continue;
        for (const pipeline::ModuleRecord& r : s.modules) {
            CHECK(r.decision == pipeline::ModuleDecision::reuse);
            CHECK(r.flops == 0);
        }
    }
}

TEST_CASE("stale-attention-context research flag changes pruned ATT outputs") {
    Fixture f;
    // Forged tables that force pruning at rate 0.5 everywhere.
    ForgedSpec spec;
    spec.caching_mean = [](int, int, dit::ModuleKind, int) { return 0.5; };
    spec.pruning_mean = [](int, int, dit::ModuleKind, int) { return 0.0; };
    const ofs::SensitivityTables forced =
        forge_tables(f.config, 4, ofs::default_alpha_grid(), spec, f.model.fingerprint());
    const dcs::CacheSchedule schedule = dcs::optimize(forced, 4, {1, 2, 3, 4}, false);
    uas::UasParams params;
    params.lambda = 0.0;
    params.beta = 0.5;

    pipeline::RunOptions kept_only;
    pipeline::RunOptions stale;
    stale.stale_attention_context = true;

    const pipeline::RunResult a =
        pipeline::run_accelerated(f.model, schedule, forced, params, f.x_T, kept_only);
    const pipeline::RunResult b =
        pipeline::run_accelerated(f.model, schedule, forced, params, f.x_T, stale);
    // Same decisions, different attention context: the trajectories diverge.
    CHECK(a.final_state != b.final_state);
}
