// soda: operator entry point for the sensitivity-oriented acceleration
// pipeline. Subcommands cover offline table building, DP scheduling and its
// brute-force oracle, accelerated runs, sweeps, and file inspection.

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "soda/dcs.hpp"
#include "soda/ofs.hpp"
#include "soda/pipeline.hpp"
#include "soda/store.hpp"
#include "soda/toy_dit.hpp"
#include "soda/uas.hpp"

namespace {

using namespace soda;

int exit_code_for(ErrorCategory category) {
    switch (category) {
        case ErrorCategory::config: return 2;
        case ErrorCategory::infeasible: return 3;
        case ErrorCategory::corruption: return 4;
        case ErrorCategory::numeric: return 5;
        case ErrorCategory::resource: return 6;
    }
    return 1;
}

std::vector<int> parse_int_list(const std::string& text, const char* what) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            fail(ErrorCode::invalid_config, std::string(what) + ": cannot parse '" + item + "'");
        }
    }
    if (out.empty()) fail(ErrorCode::invalid_config, std::string(what) + ": empty list");
    return out;
}

int default_jobs() {
    if (const char* env = std::getenv("SODA_SCHED_JOBS")) {
        try {
            return std::max(1, std::stoi(env));
        } catch (const std::exception&) {
            return 1;
        }
    }
    return 1;
}

std::vector<int> candidates_or_default(const std::string& text, const ofs::SensitivityTables& tables) {
    if (!text.empty()) return parse_int_list(text, "--candidates");
    std::vector<int> out;
    for (int n = 1; n <= tables.n_max; ++n) out.push_back(n);
    return out;
}

struct CommonArgs {
    bool verbose = false;
};

void print_schedule(const dcs::CacheSchedule& s) {
    std::cout << "anchors:";
    for (int a : s.anchors) std::cout << ' ' << a;
    std::cout << "\nintervals:";
    for (int n : s.intervals) std::cout << ' ' << n;
    std::cout << "\nN_s: " << s.interval_count() << "\ntotal_cost: " << s.total_cost << "\n";
}

// ---------------------------------------------------------------------------
// ofs-build
// ---------------------------------------------------------------------------

int cmd_ofs_build(const std::string& config_path, uint32_t samples, int n_max,
                  const std::string& alpha_text, const std::string& out_path, uint64_t seed,
                  int jobs, bool verbose) {
    const dit::ToyDitConfig config = dit::ToyDitConfig::from_json_file(config_path);
    if (verbose) std::cout << "config: " << config.to_json().dump() << "\n";
    const dit::ToyModel model = dit::ToyModel::build(config);

    ofs::BuildOptions options;
    options.samples = samples;
    options.n_max = n_max;
    options.master_seed = seed;
    options.workers = jobs;
    if (!alpha_text.empty()) {
        options.alpha_grid.clear();
        for (int v : parse_int_list(alpha_text, "--alpha-grid-percent"))
            options.alpha_grid.push_back(v / 100.0);
    }

    const auto start = std::chrono::steady_clock::now();
    const ofs::SensitivityTables tables = ofs::build_tables(model, options);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    store::save_tables(tables, out_path);

    size_t absent = 0;
    for (float v : tables.caching_mean)
        if (v == ofs::SensitivityTables::kAbsentCell) ++absent;
    for (float v : tables.pruning_mean)
        if (v == ofs::SensitivityTables::kAbsentCell) ++absent;
    const size_t total = tables.caching_cells() + tables.pruning_cells();

    std::cout << "model_fingerprint: " << model.fingerprint().hex() << "\n"
              << "cells: " << total << " (populated " << (total - absent) << ", absent " << absent
              << ")\n"
              << "file_bytes: "
              << store::table_file_bytes(tables.total_steps(), tables.layers(), tables.n_max,
                                         tables.alpha_count())
              << "\n"
              << "elapsed_s: " << elapsed << "\n"
              << "wrote " << out_path << " (+ " << store::table_sidecar_path(out_path) << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// dcs-schedule / dcs-oracle
// ---------------------------------------------------------------------------

int cmd_dcs_schedule(const std::string& tables_path, int ns, const std::string& cand_text,
                     bool phase_constraint, const std::string& xi_name,
                     const std::string& out_path) {
    const ofs::SensitivityTables tables = store::load_tables(tables_path);
    dcs::DcsOptions options;
    if (xi_name == "linear") options.xi = dcs::XiMode::linear;
    else if (xi_name == "constant") options.xi = dcs::XiMode::constant;
    else if (xi_name == "quadratic") options.xi = dcs::XiMode::quadratic;
    else fail(ErrorCode::invalid_config, "--xi must be linear|constant|quadratic");

    const std::vector<int> candidates = candidates_or_default(cand_text, tables);
    const dcs::CacheSchedule schedule =
        dcs::optimize(tables, ns, candidates, phase_constraint, options);
    if (!out_path.empty()) store::save_schedule(schedule, out_path);
    print_schedule(schedule);
    if (!out_path.empty()) std::cout << "wrote " << out_path << "\n";
    return 0;
}

int cmd_dcs_oracle(const std::string& tables_path, int ns, const std::string& cand_text,
                   uint64_t limit) {
    const ofs::SensitivityTables tables = store::load_tables(tables_path);
    const std::vector<int> candidates = candidates_or_default(cand_text, tables);

    const dcs::CacheSchedule exhaustive =
        dcs::brute_force_schedule(tables, ns, candidates, limit);
    const dcs::CacheSchedule optimized = dcs::optimize(tables, ns, candidates, false);

    std::cout << "oracle_cost: " << exhaustive.total_cost << "\n";
    std::cout << "optimize_cost: " << optimized.total_cost << "\n";
    const double rel = std::abs(exhaustive.total_cost - optimized.total_cost) /
                       std::max(1e-300, std::abs(exhaustive.total_cost));
    const bool match = rel <= 1e-9 && exhaustive.intervals == optimized.intervals;
    std::cout << "match: " << (match ? "yes" : "NO") << "\n";
    print_schedule(exhaustive);
    return match ? 0 : 1;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

int cmd_run(const std::string& config_path, const std::string& tables_path,
            const std::string& schedule_path, double lambda, double beta, bool beta_set,
            double solve_target, bool solve_target_set, double solve_speedup,
            bool solve_speedup_set, const std::string& convention, double alpha_max, uint64_t seed,
            bool measure_online, bool no_uas, const std::string& rate_index,
            const std::string& report_path, bool verbose) {
    const dit::ToyDitConfig config = dit::ToyDitConfig::from_json_file(config_path);
    const dit::ToyModel model = dit::ToyModel::build(config);
    const ofs::SensitivityTables tables = store::load_tables(tables_path);
    const dcs::CacheSchedule schedule = store::load_schedule(schedule_path);

    uas::RateIndexMode index_mode;
    if (rate_index == "effective-age") index_mode = uas::RateIndexMode::effective_age;
    else if (rate_index == "full-interval") index_mode = uas::RateIndexMode::full_interval;
    else fail(ErrorCode::invalid_config, "--rate-index must be effective-age|full-interval");

    uas::UasParams params;
    params.lambda = lambda;
    params.alpha_max = alpha_max;

    const int exclusive = (beta_set ? 1 : 0) + (solve_target_set ? 1 : 0) + (solve_speedup_set ? 1 : 0);
    if (exclusive > 1)
        fail(ErrorCode::invalid_config,
             "--beta, --solve-beta-target and --solve-beta-speedup are mutually exclusive");

    if (solve_target_set || solve_speedup_set) {
        double target = solve_target;
        if (solve_speedup_set) {
            if (!(solve_speedup > 1.0))
                fail(ErrorCode::invalid_config, "--solve-beta-speedup must be > 1");
            if (convention == "inverse") target = 1.0 / solve_speedup;
            else if (convention == "complement") target = 1.0 - 1.0 / solve_speedup;
            else fail(ErrorCode::invalid_config, "--beta-convention must be inverse|complement");
            std::cout << "beta_convention: " << convention << " (target mean rate " << target
                      << ")\n";
        }
        const uas::BetaSolution solution =
            uas::solve_beta(tables, schedule, lambda, target, alpha_max, index_mode);
        params.beta = solution.beta;
        std::cout << "solved_beta: " << solution.beta
                  << " (achieved mean rate " << solution.achieved_mean << ")\n";
    } else {
        params.beta = beta;
    }

    pipeline::RunOptions options;
    options.uas_enabled = !no_uas;
    options.measure_online_errors = measure_online;
    options.rate_index = index_mode;

    const uint64_t x_seed = derive_seed(stream_seed(seed, "x_T"), 0);
    const FeatureMap x_T =
        dit::gaussian_feature_map(config.token_count, config.hidden_dim, x_seed);
    if (verbose)
        std::cout << "x_T stream seed: " << x_seed << "\nschedule: N_s=" << schedule.interval_count()
                  << "\n";

    pipeline::RunResult result =
        pipeline::run_accelerated(model, schedule, tables, params, x_T, options);
    const FeatureMap oracle = model.run_full_trajectory(x_T, false).states[0];
    pipeline::finalize_comparison(result.report, result.final_state, oracle);
    result.report.x_seed = x_seed;

    if (!report_path.empty()) store::save_report(result.report, report_path);

    std::cout << "speedup_ratio: " << result.report.totals.speedup_ratio << "\n"
              << "flops_ratio: "
              << static_cast<double>(result.report.totals.flops_proxy_total) /
                     static_cast<double>(result.report.totals.flops_proxy_full_run)
              << "\n"
              << "cos_dist: " << result.report.comparison.cosine_distance << "\n"
              << "rel_l2: " << result.report.comparison.relative_l2 << "\n"
              << "mean_decided_rate: " << result.report.aggregates.mean_decided_rate << "\n"
              << "mean_prune_rate: " << result.report.aggregates.mean_prune_rate << "\n"
              << "reuse_records: " << result.report.aggregates.reuse_records << "/"
              << result.report.aggregates.prunable_records << "\n";
    if (measure_online) {
        const pipeline::ConsistencyResult consistency =
            pipeline::online_consistency_check(result.report, tables, 4.0);
        std::cout << "online_in_band_fraction(k=4): " << consistency.fraction
                  << (consistency.vacuous ? " (vacuous)" : "") << "\n";
    }
    if (!report_path.empty()) std::cout << "wrote " << report_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

int cmd_sweep(const std::string& config_path, const std::string& tables_path,
              const std::string& ns_text, int seed_count, uint64_t seed, double lambda,
              double beta, double alpha_max, const std::string& cand_text,
              const std::string& out_path, int jobs) {
    const dit::ToyDitConfig config = dit::ToyDitConfig::from_json_file(config_path);
    const dit::ToyModel model = dit::ToyModel::build(config);
    const ofs::SensitivityTables tables = store::load_tables(tables_path);

    pipeline::SweepOptions options;
    options.ns_list = parse_int_list(ns_text, "--ns-list");
    if (seed_count < 1) fail(ErrorCode::invalid_config, "--seeds must be >= 1");
    for (int i = 0; i < seed_count; ++i)
        options.seeds.push_back(derive_seed(stream_seed(seed, "x_T"), static_cast<uint64_t>(i)));
    options.params.lambda = lambda;
    options.params.beta = beta;
    options.params.alpha_max = alpha_max;
    if (!cand_text.empty()) options.candidates = parse_int_list(cand_text, "--candidates");
    options.jobs = jobs;

    const pipeline::SweepResult result = pipeline::sweep(model, tables, options);
    for (const std::string& reason : result.skipped) std::cerr << "skipped: " << reason << "\n";

    std::ostringstream csv;
    pipeline::write_sweep_csv(result, csv);
    store::atomic_write_file(out_path, csv.str());

    std::cout << "rows: " << result.records.size() << " (skipped " << result.skipped.size()
              << ")\nwrote " << out_path << "\n";
    // Per-ns summary of the fidelity columns.
    for (int ns : options.ns_list) {
        double soda = 0, uniform = 0;
        int n_soda = 0, n_uniform = 0;
        for (const pipeline::SweepRecord& r : result.records) {
            if (r.ns != ns) continue;
            if (r.variant == pipeline::SweepVariant::soda_uas) soda += r.cos_dist, ++n_soda;
            if (r.variant == pipeline::SweepVariant::uniform_uas) uniform += r.cos_dist, ++n_uniform;
        }
        if (n_soda > 0 && n_uniform > 0)
            std::cout << "ns=" << ns << " mean cos_dist: soda_uas " << soda / n_soda
                      << " vs uniform_uas " << uniform / n_uniform << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

int cmd_inspect(const std::string& path) {
    namespace fs = std::filesystem;
    if (!fs::exists(path)) fail(ErrorCode::io, "no such file: " + path);

    // Table files carry a magic; everything else here is JSON.
    {
        std::ifstream probe(path, std::ios::binary);
        char magic[8] = {};
        probe.read(magic, 8);
        if (probe.gcount() == 8 && std::memcmp(magic, store::kTableMagic, 8) == 0) {
            const ofs::SensitivityTables tables = store::load_tables(path);
            std::cout << "kind: sensitivity tables\n"
                      << "T=" << tables.total_steps() << " L=" << tables.layers()
                      << " M=" << dit::kModuleKinds << " n_max=" << tables.n_max
                      << " alpha_count=" << tables.alpha_count() << " S=" << tables.sample_count
                      << "\nfingerprint: " << tables.model_fingerprint.hex() << "\nfile_bytes: "
                      << fs::file_size(path) << "\n";
            return 0;
        }
    }
    const nlohmann::json j = [&] {
        std::ifstream in(path);
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::exception&) {
            fail(ErrorCode::corruption, "unrecognized file (neither table nor JSON): " + path);
        }
        return doc;
    }();
    const std::string kind = j.contains("kind") ? j.at("kind").get<std::string>()
                              : (j.contains("total_steps") && j.contains("hidden_dim"))
                                  ? "toy-dit-config"
                                  : "unknown";
    std::cout << "kind: " << kind << "\n";
    if (kind == "soda-cache-schedule") {
        const dcs::CacheSchedule s = store::load_schedule(path);
        print_schedule(s);
    } else if (kind == "soda-run-report") {
        std::cout << "steps: " << j.at("steps").size() << "\n"
                  << "totals: " << j.at("totals").dump() << "\n"
                  << "aggregates: " << j.at("aggregates").dump() << "\n";
    } else {
        std::cout << j.dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "soda: sensitivity-oriented acceleration for a deterministic toy diffusion "
        "transformer"};
    app.require_subcommand(1);
    app.footer(
        "Exit codes: 0 ok, 1 unexpected, 2 config, 3 infeasible, 4 corruption, 5 numeric, "
        "6 resource.\nEnvironment: SODA_SCHED_JOBS sets the default for --jobs.");

    bool verbose = false;
    app.add_flag("--verbose", verbose, "print effective configuration while running");

    // ofs-build
    auto* ofs_build = app.add_subcommand("ofs-build", "build sensitivity tables offline");
    std::string ob_config, ob_out, ob_alpha;
    uint32_t ob_samples = 32;
    int ob_nmax = 6;
    uint64_t ob_seed = 0;
    int ob_jobs = default_jobs();
    ofs_build->add_option("--config", ob_config, "toy model config JSON")->required();
    ofs_build->add_option("--samples", ob_samples, "number of random generations (default 32)");
    ofs_build->add_option("--n-max", ob_nmax, "largest profiled cache interval (default 6)");
    ofs_build->add_option("--alpha-grid-percent", ob_alpha,
                          "comma list of pruning rates in percent (default 10..90)");
    ofs_build->add_option("--out", ob_out, "output table file")->required();
    ofs_build->add_option("--seed", ob_seed, "master seed for sample and gamma streams");
    ofs_build->add_option("--jobs", ob_jobs, "worker threads (result is order-independent)");

    // dcs-schedule
    auto* dcs_schedule = app.add_subcommand("dcs-schedule", "optimize a cache schedule");
    std::string ds_tables, ds_cand, ds_out, ds_xi = "linear";
    int ds_ns = 0;
    bool ds_phase = false;
    dcs_schedule->add_option("--tables", ds_tables, "sensitivity table file")->required();
    dcs_schedule->add_option("--ns", ds_ns, "number of cache intervals")->required();
    dcs_schedule->add_option("--candidates", ds_cand, "comma list of intervals (default 1..n_max)");
    dcs_schedule->add_flag("--phase-constraint", ds_phase,
                           "restrict intervals inside the detected special phase");
    dcs_schedule->add_option("--xi", ds_xi, "interval weighting: linear|constant|quadratic");
    dcs_schedule->add_option("--out", ds_out, "output schedule JSON");

    // dcs-oracle
    auto* dcs_oracle = app.add_subcommand("dcs-oracle", "brute-force schedule oracle");
    std::string do_tables, do_cand;
    int do_ns = 0;
    uint64_t do_limit = 10'000'000;
    dcs_oracle->add_option("--tables", do_tables, "sensitivity table file")->required();
    dcs_oracle->add_option("--ns", do_ns, "number of cache intervals")->required();
    dcs_oracle->add_option("--candidates", do_cand, "comma list of intervals (default 1..n_max)");
    dcs_oracle->add_option("--limit", do_limit, "enumeration limit (default 1e7)");

    // run
    auto* run = app.add_subcommand("run", "execute an accelerated generation");
    std::string r_config, r_tables, r_schedule, r_report, r_convention = "complement";
    double r_lambda = 0.3, r_beta = 0.4, r_target = 0.0, r_speedup = 0.0, r_alpha_max = 0.95;
    uint64_t r_seed = 0;
    bool r_measure = false, r_no_uas = false;
    run->add_option("--config", r_config, "toy model config JSON")->required();
    run->add_option("--tables", r_tables, "sensitivity table file")->required();
    run->add_option("--schedule", r_schedule, "schedule JSON")->required();
    run->add_option("--lambda", r_lambda, "rate scaling coefficient (default 0.3)");
    auto* beta_opt = run->add_option("--beta", r_beta, "base pruning rate (default 0.4)");
    auto* target_opt = run->add_option("--solve-beta-target", r_target,
                                       "solve beta for this mean pruning rate");
    auto* speedup_opt = run->add_option("--solve-beta-speedup", r_speedup,
                                        "solve beta from a speed-up factor r > 1");
    run->add_option("--beta-convention", r_convention,
                    "speed-up reading: 'inverse' (rate = 1/r) or 'complement' (rate = 1 - 1/r)");
    run->add_option("--alpha-max", r_alpha_max, "pruning rate ceiling (default 0.95)");
    run->add_option("--seed", r_seed, "seed for the x_T stream");
    std::string r_rate_index = "effective-age";
    run->add_option("--rate-index", r_rate_index,
                    "caching cell for Eq.-style decisions: effective-age (default) or "
                    "full-interval (the literal written form)");
    run->add_flag("--measure-online", r_measure,
                  "record true per-module errors on the side (observation only)");
    run->add_flag("--no-uas", r_no_uas, "disable pruning decisions (pure cache reuse)");
    run->add_option("--report", r_report, "output report JSON");

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "schedule/fidelity sweep to CSV");
    std::string s_config, s_tables, s_ns, s_cand, s_out;
    int s_seeds = 20;
    uint64_t s_seed = 0;
    double s_lambda = 0.3, s_beta = 0.4, s_alpha_max = 0.95;
    int s_jobs = default_jobs();
    sweep_cmd->add_option("--config", s_config, "toy model config JSON")->required();
    sweep_cmd->add_option("--tables", s_tables, "sensitivity table file")->required();
    sweep_cmd->add_option("--ns-list", s_ns, "comma list of N_s values")->required();
    sweep_cmd->add_option("--seeds", s_seeds, "number of x_T seeds (default 20)");
    sweep_cmd->add_option("--seed", s_seed, "master seed for the x_T stream");
    sweep_cmd->add_option("--lambda", s_lambda, "rate scaling coefficient");
    sweep_cmd->add_option("--beta", s_beta, "base pruning rate");
    sweep_cmd->add_option("--alpha-max", s_alpha_max, "pruning rate ceiling");
    sweep_cmd->add_option("--candidates", s_cand, "comma list of intervals (default 1..n_max)");
    sweep_cmd->add_option("--out", s_out, "output CSV")->required();
    sweep_cmd->add_option("--jobs", s_jobs, "worker threads (output order is fixed)");

    // inspect
    auto* inspect = app.add_subcommand("inspect", "print metadata of a soda file");
    std::string i_path;
    inspect->add_option("--file", i_path, "table/schedule/report/config file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ofs_build)
            return cmd_ofs_build(ob_config, ob_samples, ob_nmax, ob_alpha, ob_out, ob_seed,
                                 ob_jobs, verbose);
        if (*dcs_schedule)
            return cmd_dcs_schedule(ds_tables, ds_ns, ds_cand, ds_phase, ds_xi, ds_out);
        if (*dcs_oracle) return cmd_dcs_oracle(do_tables, do_ns, do_cand, do_limit);
        if (*run)
            return cmd_run(r_config, r_tables, r_schedule, r_lambda, r_beta,
                           beta_opt->count() > 0, r_target, target_opt->count() > 0, r_speedup,
                           speedup_opt->count() > 0, r_convention, r_alpha_max, r_seed, r_measure,
                           r_no_uas, r_rate_index, r_report, verbose);
        if (*sweep_cmd)
            return cmd_sweep(s_config, s_tables, s_ns, s_seeds, s_seed, s_lambda, s_beta,
                             s_alpha_max, s_cand, s_out, s_jobs);
        if (*inspect) return cmd_inspect(i_path);
    } catch (const SodaError& e) {
        std::cerr << "error [" << error_category_name(e.category()) << "/"
                  << error_code_name(e.code()) << "]: " << e.what() << "\n";
        return exit_code_for(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
