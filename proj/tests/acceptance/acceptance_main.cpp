// Acceptance suite: one criterion per section, one PASS/FAIL line each.
// Exit status is nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "soda/dcs.hpp"
#include "soda/ofs.hpp"
#include "soda/pipeline.hpp"
#include "soda/store.hpp"
#include "soda/toy_dit.hpp"
#include "soda/uas.hpp"

using namespace soda;
namespace fs = std::filesystem;

namespace {

struct CriterionResult {
    bool pass = true;
    std::ostringstream detail;
};

#define REQUIRE_THAT(result, cond, text)                                   \
    do {                                                                   \
        if (!(cond)) {                                                     \
            (result).pass = false;                                         \
            (result).detail << " [failed: " << (text) << "]";              \
        }                                                                  \
    } while (0)

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Shared fixtures. The desk-scale toy config is the spec default; the
// acceptance tables profile the full n in [1, 9] grid.
struct Fixtures {
    dit::ToyDitConfig config50;
    dit::ToyModel model50;
    ofs::SensitivityTables tables50;

    dit::ToyDitConfig config21;
    dit::ToyModel model21;
    ofs::SensitivityTables tables21;

    Fixtures()
        : config50(make_config(50)),
          model50(dit::ToyModel::build(config50)),
          tables50(build50(model50)),
          config21(make_config(21)),
          model21(dit::ToyModel::build(config21)),
          tables21(build21(model21)) {}

    static dit::ToyDitConfig make_config(int total_steps) {
        dit::ToyDitConfig c;  // T=50, L=4, N_tok=16, d=32, heads=4
        c.total_steps = total_steps;
        c.seed = 20260810;
        return c;
    }

    static ofs::SensitivityTables build50(const dit::ToyModel& model) {
        ofs::BuildOptions options;
        options.samples = 32;
        options.n_max = 9;
        options.master_seed = 1;
        options.workers = 2;
        return ofs::build_tables(model, options);
    }

    static ofs::SensitivityTables build21(const dit::ToyModel& model) {
        ofs::BuildOptions options;
        options.samples = 8;
        options.n_max = 6;
        options.master_seed = 2;
        options.workers = 2;
        return ofs::build_tables(model, options);
    }
};

FeatureMap x_for(const dit::ToyDitConfig& config, uint64_t seed) {
    return dit::gaussian_feature_map(config.token_count, config.hidden_dim, seed);
}

// ---------------------------------------------------------------------------
// 1. DP optimality vs the exhaustive oracle
// ---------------------------------------------------------------------------

CriterionResult criterion_dp_optimality(const Fixtures& fx) {
    CriterionResult r;
    const auto start = std::chrono::steady_clock::now();
    const std::vector<int> candidates = {1, 2, 3, 4};
    int checked = 0;
    for (int ns = 5; ns <= 10; ++ns) {
        const dcs::CacheSchedule fast = dcs::optimize(fx.tables21, ns, candidates, false);
        const dcs::CacheSchedule slow = dcs::brute_force_schedule(fx.tables21, ns, candidates);
        const double rel = std::fabs(fast.total_cost - slow.total_cost) /
                           std::max(1e-300, std::fabs(slow.total_cost));
        REQUIRE_THAT(r, rel <= 1e-9, "cost mismatch at N_s=" + std::to_string(ns));
        REQUIRE_THAT(r, fast.intervals == slow.intervals,
                     "schedule mismatch at N_s=" + std::to_string(ns));
        REQUIRE_THAT(r, fast.anchors == slow.anchors,
                     "anchor mismatch at N_s=" + std::to_string(ns));
        ++checked;
    }
    const double elapsed = seconds_since(start);
    REQUIRE_THAT(r, elapsed < 10.0, "runtime over 10 s");
    r.detail << "N_s in {5..10} (" << checked << " budgets), T=21, candidates {1,2,3,4}; "
             << elapsed << " s";
    return r;
}

// ---------------------------------------------------------------------------
// 2. Degenerate-schedule equivalence
// ---------------------------------------------------------------------------

CriterionResult criterion_degenerate(const Fixtures& fx) {
    CriterionResult r;
    const auto start = std::chrono::steady_clock::now();
    const FeatureMap x_T = x_for(fx.config50, 1001);
    const FeatureMap oracle = fx.model50.run_full_trajectory(x_T, false).states[0];

    const dcs::CacheSchedule anchors_everywhere = dcs::optimize(fx.tables50, 49, {1}, false);
    const pipeline::RunResult all =
        pipeline::run_accelerated(fx.model50, anchors_everywhere, fx.tables50, uas::UasParams{},
                                  x_T);
    const double rel_all = pipeline::compare(all.final_state, oracle).relative_l2;
    REQUIRE_THAT(r, rel_all <= 1e-12, "anchors-everywhere deviates");

    uas::UasParams zero;
    zero.lambda = 0.0;
    zero.beta = 0.0;
    std::vector<int> candidates;
    for (int n = 1; n <= 9; ++n) candidates.push_back(n);
    const dcs::CacheSchedule soda18 = dcs::optimize(fx.tables50, 18, candidates, false);
    const pipeline::RunResult zr =
        pipeline::run_accelerated(fx.model50, soda18, fx.tables50, zero, x_T);
    const double rel_zero = pipeline::compare(zr.final_state, oracle).relative_l2;
    REQUIRE_THAT(r, rel_zero <= 1e-9, "zero-rate pruning deviates");

    const double elapsed = seconds_since(start);
    REQUIRE_THAT(r, elapsed < 5.0, "runtime over 5 s");
    r.detail << "anchors-everywhere rel_l2=" << rel_all << ", zero-rate rel_l2=" << rel_zero
             << "; " << elapsed << " s";
    return r;
}

// ---------------------------------------------------------------------------
// 3. Decision soundness across a full instrumented run
// ---------------------------------------------------------------------------

CriterionResult criterion_decision_soundness(const Fixtures& fx) {
    CriterionResult r;
    const auto start = std::chrono::steady_clock::now();
    std::vector<int> candidates;
    for (int n = 1; n <= 9; ++n) candidates.push_back(n);
    const dcs::CacheSchedule schedule = dcs::optimize(fx.tables50, 18, candidates, false);

    pipeline::RunOptions options;
    options.measure_online_errors = true;
    const pipeline::RunResult run = pipeline::run_accelerated(
        fx.model50, schedule, fx.tables50, uas::UasParams{}, x_for(fx.config50, 1002), options);

    int prune = 0, reuse = 0, bad_prune = 0, bad_reuse = 0;
    for (const pipeline::StepRecord& s : run.report.steps) {
        if (s.anchor) continue;
        for (const pipeline::ModuleRecord& m : s.modules) {
            if (m.decision == pipeline::ModuleDecision::prune) {
                ++prune;
                if (!(m.delta < m.cache_error)) ++bad_prune;
            } else {
                ++reuse;
                if (!(m.delta >= m.cache_error || m.keep_zero_fallback)) ++bad_reuse;
            }
        }
    }
    REQUIRE_THAT(r, prune + reuse > 0, "no prunable records");
    REQUIRE_THAT(r, bad_prune == 0, "prune records violating delta < cache_error");
    REQUIRE_THAT(r, bad_reuse == 0, "reuse records violating delta >= cache_error");

    const double elapsed = seconds_since(start);
    REQUIRE_THAT(r, elapsed < 5.0, "runtime over 5 s");
    r.detail << prune << " prune + " << reuse << " reuse records, all sound; " << elapsed << " s";
    return r;
}

// ---------------------------------------------------------------------------
// 4. Schedule-cost and fidelity analogues
// ---------------------------------------------------------------------------

CriterionResult criterion_sweep(const Fixtures& fx) {
    CriterionResult r;
    const auto start = std::chrono::steady_clock::now();

    pipeline::SweepOptions options;
    options.ns_list = {8, 12, 18, 25};
    for (int i = 0; i < 20; ++i)
        options.seeds.push_back(derive_seed(stream_seed(4242, "x_T"), static_cast<uint64_t>(i)));
    for (int n = 1; n <= 9; ++n) options.candidates.push_back(n);
    options.jobs = 2;

    const pipeline::SweepResult sweep = pipeline::sweep(fx.model50, fx.tables50, options);
    REQUIRE_THAT(r, sweep.skipped.empty(), "sweep skipped budgets unexpectedly");

    // Cost: SODA <= uniform for every budget (exact, by optimality).
    for (int ns : options.ns_list) {
        double soda_cost = -1.0, uniform_cost = -1.0;
        for (const pipeline::SweepRecord& rec : sweep.records) {
            if (rec.ns != ns) continue;
            if (rec.variant == pipeline::SweepVariant::soda_uas) soda_cost = rec.schedule_cost;
            if (rec.variant == pipeline::SweepVariant::uniform_uas)
                uniform_cost = rec.schedule_cost;
        }
        REQUIRE_THAT(r, soda_cost >= 0.0 && uniform_cost >= 0.0, "missing sweep rows");
        REQUIRE_THAT(r, soda_cost <= uniform_cost,
                     "SODA cost above uniform at N_s=" + std::to_string(ns));
    }

    // Fidelity (a): at N_s=18, SODA beats the uniform baseline on >= 16/20 seeds.
    int soda_wins = 0;
    for (uint64_t seed : options.seeds) {
        double soda = -1.0, uniform = -1.0;
        for (const pipeline::SweepRecord& rec : sweep.records) {
            if (rec.ns != 18 || rec.seed != seed) continue;
            if (rec.variant == pipeline::SweepVariant::soda_uas) soda = rec.cos_dist;
            if (rec.variant == pipeline::SweepVariant::uniform_uas) uniform = rec.cos_dist;
        }
        if (soda >= 0.0 && soda <= uniform) ++soda_wins;
        // Accelerated runs must actually deviate from the oracle.
        if (soda <= 0.0) {
            REQUIRE_THAT(r, soda > 0.0, "accelerated run unexpectedly exact at N_s=18");
        }
    }
    REQUIRE_THAT(r, soda_wins >= 16, "SODA beat uniform on only " + std::to_string(soda_wins) +
                                         "/20 seeds at N_s=18");

    // Fidelity (b): UAS improves on pure caching for >= 60% of rows.
    int uas_rows = 0, uas_wins = 0;
    for (int ns : options.ns_list) {
        for (uint64_t seed : options.seeds) {
            double with_uas = -1.0, without = -1.0;
            for (const pipeline::SweepRecord& rec : sweep.records) {
                if (rec.ns != ns || rec.seed != seed) continue;
                if (rec.variant == pipeline::SweepVariant::soda_uas) with_uas = rec.cos_dist;
                if (rec.variant == pipeline::SweepVariant::soda_cache) without = rec.cos_dist;
            }
            if (with_uas < 0.0 || without < 0.0) continue;
            ++uas_rows;
            if (with_uas <= without) ++uas_wins;
        }
    }
    REQUIRE_THAT(r, uas_rows == 80, "expected 80 comparable rows");
    REQUIRE_THAT(r, uas_wins * 100 >= uas_rows * 60,
                 "UAS improved only " + std::to_string(uas_wins) + "/" + std::to_string(uas_rows) +
                     " rows");

    const double elapsed = seconds_since(start);
    REQUIRE_THAT(r, elapsed < 180.0, "runtime over 3 min");
    r.detail << "cost: SODA <= uniform on all 4 budgets; fidelity: " << soda_wins
             << "/20 seed wins at N_s=18, UAS wins " << uas_wins << "/" << uas_rows << " rows; "
             << elapsed << " s";
    return r;
}

// ---------------------------------------------------------------------------
// 5. Offline/online consistency band
// ---------------------------------------------------------------------------

CriterionResult criterion_consistency(const Fixtures& fx) {
    CriterionResult r;
    const auto start = std::chrono::steady_clock::now();
    std::vector<int> candidates;
    for (int n = 1; n <= 9; ++n) candidates.push_back(n);
    const dcs::CacheSchedule schedule = dcs::optimize(fx.tables50, 18, candidates, false);

    pipeline::RunOptions options;
    options.measure_online_errors = true;
    const pipeline::RunResult run = pipeline::run_accelerated(
        fx.model50, schedule, fx.tables50, uas::UasParams{}, x_for(fx.config50, 1003), options);
    const pipeline::ConsistencyResult consistency =
        pipeline::online_consistency_check(run.report, fx.tables50, 4.0);

    REQUIRE_THAT(r, !consistency.vacuous, "no measured records");
    REQUIRE_THAT(r, consistency.fraction >= 0.90,
                 "in-band fraction " + std::to_string(consistency.fraction) + " below 0.90");

    const double elapsed = seconds_since(start);
    REQUIRE_THAT(r, elapsed < 60.0, "runtime over 1 min");
    r.detail << consistency.inside << "/" << consistency.checked
             << " measured errors inside mean +- 4 sigma (fraction " << consistency.fraction
             << "); " << elapsed << " s";
    return r;
}

// ---------------------------------------------------------------------------
// 6. Beta-solver closed loop
// ---------------------------------------------------------------------------

CriterionResult criterion_beta_loop(const Fixtures& fx) {
    CriterionResult r;
    const auto start = std::chrono::steady_clock::now();
    std::vector<int> candidates;
    for (int n = 1; n <= 9; ++n) candidates.push_back(n);
    const dcs::CacheSchedule schedule = dcs::optimize(fx.tables50, 18, candidates, false);
    const FeatureMap x_T = x_for(fx.config50, 1004);

    for (double target : {0.3, 0.5, 0.7}) {
        const uas::BetaSolution solution =
            uas::solve_beta(fx.tables50, schedule, 0.3, target, 0.95);
        uas::UasParams params;
        params.lambda = 0.3;
        params.beta = solution.beta;
        const pipeline::RunResult run =
            pipeline::run_accelerated(fx.model50, schedule, fx.tables50, params, x_T);
        const double empirical = run.report.aggregates.mean_prune_rate;
        r.detail << "target " << target << ": beta=" << solution.beta << ", empirical mean rate "
                 << empirical << " (reuse fallbacks "
                 << run.report.aggregates.reuse_records << "/"
                 << run.report.aggregates.prunable_records << "); ";
        REQUIRE_THAT(r, std::fabs(empirical - target) <= 0.02,
                     "empirical rate off target " + std::to_string(target));
    }

    const double elapsed = seconds_since(start);
    REQUIRE_THAT(r, elapsed < 60.0, "runtime over 1 min");
    r.detail << elapsed << " s";
    return r;
}

// ---------------------------------------------------------------------------
// 7. Table-5 scaling law for the stored priors
// ---------------------------------------------------------------------------

CriterionResult criterion_storage_scaling(const Fixtures& fx) {
    CriterionResult r;
    const auto start = std::chrono::steady_clock::now();

    const fs::path dir =
        fs::temp_directory_path() / ("soda-accept-" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    const std::string path = (dir / "t50.soda").string();
    store::save_tables(fx.tables50, path);

    // Serialized tensor bytes are exactly 4 x (populated + sentinel cells).
    const size_t cells = 2 * fx.tables50.caching_cells() + 2 * fx.tables50.pruning_cells();
    const size_t actual = fs::file_size(path);
    REQUIRE_THAT(r, actual == store::kTableHeaderBytes + 4 * cells,
                 "file size deviates from the layout formula");

    // Hypothetical DiT-XL/2-scale grid: T=50, L=28, M=2, n in [1,9], 9 alpha
    // points. The stored-prior payload (the mean tensors) must land within 2x
    // of 0.16 MB.
    const double prior_bytes = static_cast<double>(store::table_prior_bytes(50, 28, 9, 9));
    const double reference = 0.16e6;
    const double ratio = prior_bytes / reference;
    REQUIRE_THAT(r, ratio <= 2.0 && ratio >= 0.5,
                 "prior payload " + std::to_string(prior_bytes) + " B not within 2x of 0.16 MB");

    std::error_code ec;
    fs::remove_all(dir, ec);

    const double elapsed = seconds_since(start);
    REQUIRE_THAT(r, elapsed < 1.0, "runtime over 1 s");
    r.detail << "file " << actual << " B matches header+4*cells (cells=" << cells
             << "); hypothetical prior " << prior_bytes / 1e6 << " MB vs 0.16 MB (ratio " << ratio
             << "); " << elapsed << " s";
    return r;
}

// ---------------------------------------------------------------------------
// 8. Determinism and round-trips
// ---------------------------------------------------------------------------

ofs::SensitivityTables random_tables(Rng& rng) {
    dit::ToyDitConfig config;
    config.total_steps = 3 + static_cast<int>(rng.next_below(6));
    config.layers = 1 + static_cast<int>(rng.next_below(3));
    config.token_count = 2 + static_cast<int>(rng.next_below(4));
    config.hidden_dim = 4;
    config.heads = 2;
    config.seed = rng.next_u64();
    config.beta_min = 1e-3;
    config.beta_max = 2e-2;

    ofs::SensitivityTables t;
    t.config = config;
    t.n_max = 1 + static_cast<int>(rng.next_below(static_cast<uint32_t>(config.total_steps - 1)));
    const int alpha_count = 1 + static_cast<int>(rng.next_below(5));
    double a = 0.0;
    for (int k = 0; k < alpha_count; ++k) {
        a += 0.9 / (alpha_count + 1) * (0.5 + rng.next_unit() * 0.5);
        t.alpha_grid.push_back(a);
    }
    t.sample_count = 1 + rng.next_below(40);
    for (auto& byte : t.model_fingerprint.bytes) byte = static_cast<uint8_t>(rng.next_below(256));
    t.caching_mean.assign(t.caching_cells(), ofs::SensitivityTables::kAbsentCell);
    t.caching_std.assign(t.caching_cells(), ofs::SensitivityTables::kAbsentCell);
    t.pruning_mean.assign(t.pruning_cells(), ofs::SensitivityTables::kAbsentCell);
    t.pruning_std.assign(t.pruning_cells(), ofs::SensitivityTables::kAbsentCell);
    for (int step = 1; step <= config.total_steps; ++step) {
        for (int l = 1; l <= config.layers; ++l) {
            for (dit::ModuleKind m : {dit::ModuleKind::att, dit::ModuleKind::mlp}) {
                for (int n = 1; n <= t.n_max; ++n) {
                    if (!t.caching_present(step, n)) continue;
                    t.caching_mean[t.caching_index(step, l, m, n)] =
                        static_cast<float>(2.0 * rng.next_unit());
                    t.caching_std[t.caching_index(step, l, m, n)] =
                        static_cast<float>(rng.next_unit());
                }
                if (!t.pruning_present(step)) continue;
                for (int k = 0; k < t.alpha_count(); ++k) {
                    t.pruning_mean[t.pruning_index(step, l, m, k)] =
                        static_cast<float>(2.0 * rng.next_unit());
                    t.pruning_std[t.pruning_index(step, l, m, k)] =
                        static_cast<float>(rng.next_unit());
                }
            }
        }
    }
    t.validate();
    return t;
}

CriterionResult criterion_determinism(const Fixtures& fx) {
    CriterionResult r;
    const auto start = std::chrono::steady_clock::now();

    const fs::path dir =
        fs::temp_directory_path() / ("soda-accept8-" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    const auto p = [&](const std::string& name) { return (dir / name).string(); };

    // Repeated invocations, byte-identical artifacts.
    dit::ToyDitConfig small = Fixtures::make_config(12);
    const dit::ToyModel model = dit::ToyModel::build(small);
    const ofs::SensitivityTables ta = ofs::build_tables(model, 3, 4, ofs::default_alpha_grid(), 9);
    const ofs::SensitivityTables tb = ofs::build_tables(model, 3, 4, ofs::default_alpha_grid(), 9);
    store::save_tables(ta, p("a.soda"));
    store::save_tables(tb, p("b.soda"));
    REQUIRE_THAT(r, slurp(p("a.soda")) == slurp(p("b.soda")), "table build not byte-deterministic");

    const dcs::CacheSchedule sa = dcs::optimize(ta, 4, {1, 2, 3, 4}, false);
    const dcs::CacheSchedule sb = dcs::optimize(tb, 4, {1, 2, 3, 4}, false);
    store::save_schedule(sa, p("sa.json"));
    store::save_schedule(sb, p("sb.json"));
    REQUIRE_THAT(r, slurp(p("sa.json")) == slurp(p("sb.json")), "optimize not byte-deterministic");

    const FeatureMap x_T = x_for(small, 77);
    pipeline::RunResult ra =
        pipeline::run_accelerated(model, sa, ta, uas::UasParams{}, x_T);
    pipeline::RunResult rb =
        pipeline::run_accelerated(model, sb, tb, uas::UasParams{}, x_T);
    REQUIRE_THAT(r, ra.final_state == rb.final_state, "run not bit-deterministic");
    store::save_report(ra.report, p("ra.json"));
    store::save_report(rb.report, p("rb.json"));
    REQUIRE_THAT(r, slurp(p("ra.json")) == slurp(p("rb.json")), "report not byte-deterministic");

    // 100 randomized round-trip instances: 50 tables + 50 schedules.
    Rng rng(271828);
    int round_trips = 0;
    for (int i = 0; i < 50; ++i) {
        const ofs::SensitivityTables t = random_tables(rng);
        const std::string path = p("rt" + std::to_string(i) + ".soda");
        store::save_tables(t, path);
        const ofs::SensitivityTables back = store::load_tables(path);
        const bool same = t.config == back.config && t.n_max == back.n_max &&
                          t.alpha_grid == back.alpha_grid && t.sample_count == back.sample_count &&
                          t.model_fingerprint == back.model_fingerprint &&
                          t.caching_mean == back.caching_mean &&
                          t.caching_std == back.caching_std &&
                          t.pruning_mean == back.pruning_mean &&
                          t.pruning_std == back.pruning_std;
        if (same) ++round_trips;
    }
    for (int i = 0; i < 50; ++i) {
        const int T = 5 + static_cast<int>(rng.next_below(20));
        dcs::CacheSchedule s;
        s.total_steps = T;
        int left = T - 1;
        while (left > 0) {
            const int n =
                1 + static_cast<int>(rng.next_below(static_cast<uint32_t>(std::min(4, left))));
            s.intervals.push_back(n);
            left -= n;
        }
        s.anchors = {T};
        int t = T;
        for (int n : s.intervals) s.anchors.push_back(t -= n);
        s.candidates = {1, 2, 3, 4};
        s.total_cost = rng.next_unit() * 7;
        s.phase_constrained = rng.next_below(2) == 1;
        const std::string path = p("rs" + std::to_string(i) + ".json");
        store::save_schedule(s, path);
        const dcs::CacheSchedule back = store::load_schedule(path);
        if (back.anchors == s.anchors && back.intervals == s.intervals &&
            back.total_cost == s.total_cost && back.candidates == s.candidates &&
            back.phase_constrained == s.phase_constrained)
            ++round_trips;
    }
    REQUIRE_THAT(r, round_trips == 100,
                 "round-trips passed: " + std::to_string(round_trips) + "/100");

    // The acceptance fixture itself must be reproducible.
    REQUIRE_THAT(r, fx.tables50.model_fingerprint == fx.model50.fingerprint(),
                 "fixture fingerprint mismatch");

    std::error_code ec;
    fs::remove_all(dir, ec);

    const double elapsed = seconds_since(start);
    REQUIRE_THAT(r, elapsed < 30.0, "runtime over 30 s");
    r.detail << "byte-identical rebuilds; 100/100 randomized round-trips; " << elapsed << " s";
    return r;
}

}  // namespace

int main() {
    std::printf("building fixtures (T=50 S=32 n_max=9 and T=21 S=8 n_max=6)...\n");
    const auto fixture_start = std::chrono::steady_clock::now();
    const Fixtures fx;
    std::printf("fixtures ready in %.1f s\n\n", seconds_since(fixture_start));

    struct Entry {
        const char* name;
        std::function<CriterionResult(const Fixtures&)> body;
    };
    const std::vector<Entry> criteria = {
        {"DP optimality vs brute-force oracle", criterion_dp_optimality},
        {"degenerate-schedule equivalence", criterion_degenerate},
        {"decision soundness (prune iff delta < cache error)", criterion_decision_soundness},
        {"schedule cost and fidelity vs uniform baseline", criterion_sweep},
        {"offline/online error-band consistency", criterion_consistency},
        {"beta-solver closed loop", criterion_beta_loop},
        {"stored-prior scaling law", criterion_storage_scaling},
        {"determinism and round-trips", criterion_determinism},
    };

    int failures = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        CriterionResult result = criteria[i].body(fx);
        std::printf("[%s] criterion %zu: %s — %s\n", result.pass ? "PASS" : "FAIL", i + 1,
                    criteria[i].name, result.detail.str().c_str());
        if (!result.pass) ++failures;
    }

    if (failures == 0) {
        std::printf("\nacceptance: 8/8 criteria passed\n");
        return 0;
    }
    std::printf("\nacceptance: %d criteria FAILED\n", failures);
    return 1;
}
