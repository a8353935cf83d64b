#include "soda/store.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace soda::store {

namespace {

namespace fs = std::filesystem;

void append_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f32(std::string& out, float v) { append_u32(out, std::bit_cast<uint32_t>(v)); }

class Reader {
public:
    Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

    uint32_t read_u32() {
        require(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    float read_f32() { return std::bit_cast<float>(read_u32()); }

    void read_raw(void* dst, size_t n) {
        require(n);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    size_t remaining() const { return bytes_.size() - pos_; }

private:
    void require(size_t n) {
        if (pos_ + n > bytes_.size())
            fail(ErrorCode::corruption, "table file truncated: " + path_);
    }
    const std::string& bytes_;
    std::string path_;
    size_t pos_ = 0;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot open file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::corruption, path + " is not valid JSON: " + std::string(e.what()));
    }
    return j;
}

}  // namespace

void atomic_write_file(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::io, "cannot open file for writing: " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) fail(ErrorCode::io, "write failed: " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) fail(ErrorCode::io, "rename failed for " + path + ": " + ec.message());
}

// ============================================================================
// Tables
// ============================================================================

size_t table_tensor_bytes(int total_steps, int layers, int n_max, int alpha_count) {
    const size_t cells = static_cast<size_t>(total_steps) * layers * dit::kModuleKinds;
    return 4 * (2 * cells * static_cast<size_t>(n_max) + 2 * cells * static_cast<size_t>(alpha_count));
}

size_t table_file_bytes(int total_steps, int layers, int n_max, int alpha_count) {
    return kTableHeaderBytes + table_tensor_bytes(total_steps, layers, n_max, alpha_count);
}

size_t table_prior_bytes(int total_steps, int layers, int n_max, int alpha_count) {
    const size_t cells = static_cast<size_t>(total_steps) * layers * dit::kModuleKinds;
    return 4 * (cells * static_cast<size_t>(n_max) + cells * static_cast<size_t>(alpha_count));
}

std::string table_sidecar_path(const std::string& path) { return path + ".meta.json"; }

void save_tables(const ofs::SensitivityTables& tables, const std::string& path) {
    tables.validate();

    std::string bytes;
    bytes.reserve(table_file_bytes(tables.total_steps(), tables.layers(), tables.n_max,
                                   tables.alpha_count()));
    bytes.append(kTableMagic, sizeof(kTableMagic));
    append_u32(bytes, kTableFormatVersion);
    append_u32(bytes, static_cast<uint32_t>(tables.total_steps()));
    append_u32(bytes, static_cast<uint32_t>(tables.layers()));
    append_u32(bytes, static_cast<uint32_t>(dit::kModuleKinds));
    append_u32(bytes, static_cast<uint32_t>(tables.n_max));
    append_u32(bytes, static_cast<uint32_t>(tables.alpha_count()));
    append_u32(bytes, tables.sample_count);
    bytes.append(reinterpret_cast<const char*>(tables.model_fingerprint.bytes.data()), 32);
    for (const std::vector<float>* tensor :
         {&tables.caching_mean, &tables.caching_std, &tables.pruning_mean, &tables.pruning_std})
        for (float v : *tensor) append_f32(bytes, v);

    nlohmann::json meta{
        {"format_version", kTableFormatVersion},
        {"kind", "soda-sensitivity-tables"},
        {"model_fingerprint", tables.model_fingerprint.hex()},
        {"sample_count", tables.sample_count},
        {"n_max", tables.n_max},
        {"alpha_grid", tables.alpha_grid},
        {"absent_sentinel", ofs::SensitivityTables::kAbsentCell},
        {"config", tables.config.to_json()},
    };

    atomic_write_file(path, bytes);
    atomic_write_file(table_sidecar_path(path), meta.dump(2) + "\n");
}

ofs::SensitivityTables load_tables(const std::string& path) {
    const std::string bytes = read_file(path);
    Reader r(bytes, path);

    char magic[8];
    r.read_raw(magic, 8);
    if (std::memcmp(magic, kTableMagic, 8) != 0)
        fail(ErrorCode::corruption, "not a table file (bad magic): " + path);
    const uint32_t version = r.read_u32();
    if (version != kTableFormatVersion)
        fail(ErrorCode::version_mismatch,
             "table file version " + std::to_string(version) + " requires an upgrade (expected " +
                 std::to_string(kTableFormatVersion) + ")");
    const uint32_t T = r.read_u32();
    const uint32_t L = r.read_u32();
    const uint32_t M = r.read_u32();
    const uint32_t n_max = r.read_u32();
    const uint32_t alpha_count = r.read_u32();
    const uint32_t samples = r.read_u32();
    if (M != dit::kModuleKinds)
        fail(ErrorCode::corruption, "table file declares an unsupported module-kind count");

    Digest fingerprint;
    r.read_raw(fingerprint.bytes.data(), 32);

    if (bytes.size() != table_file_bytes(static_cast<int>(T), static_cast<int>(L),
                                         static_cast<int>(n_max), static_cast<int>(alpha_count)))
        fail(ErrorCode::corruption,
             "table file length does not match its declared dimensions: " + path);

    const nlohmann::json meta = read_json_file(table_sidecar_path(path));
    ofs::SensitivityTables tables;
    try {
        if (meta.at("format_version").get<uint32_t>() != kTableFormatVersion)
            fail(ErrorCode::version_mismatch, "table sidecar version requires an upgrade");
        tables.config = dit::ToyDitConfig::from_json(meta.at("config"));
        tables.alpha_grid = meta.at("alpha_grid").get<std::vector<double>>();
        tables.n_max = meta.at("n_max").get<int>();
        tables.sample_count = meta.at("sample_count").get<uint32_t>();
        tables.model_fingerprint = Digest::from_hex(meta.at("model_fingerprint").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::corruption, "table sidecar is malformed: " + std::string(e.what()));
    }

    // Cross-check binary header against the sidecar.
    if (tables.config.total_steps != static_cast<int>(T) ||
        tables.config.layers != static_cast<int>(L) || tables.n_max != static_cast<int>(n_max) ||
        tables.alpha_grid.size() != alpha_count || tables.sample_count != samples)
        fail(ErrorCode::corruption, "table sidecar disagrees with the binary header: " + path);
    if (tables.model_fingerprint != fingerprint)
        fail(ErrorCode::corruption, "table sidecar fingerprint disagrees with the binary header");

    const size_t cc = tables.caching_cells();
    const size_t pc = tables.pruning_cells();
    tables.caching_mean.resize(cc);
    tables.caching_std.resize(cc);
    tables.pruning_mean.resize(pc);
    tables.pruning_std.resize(pc);
    for (std::vector<float>* tensor :
         {&tables.caching_mean, &tables.caching_std, &tables.pruning_mean, &tables.pruning_std})
        for (float& v : *tensor) v = r.read_f32();
    if (r.remaining() != 0)
        fail(ErrorCode::corruption, "table file has trailing bytes: " + path);

    tables.validate();
    return tables;
}

// ============================================================================
// Schedules
// ============================================================================

void save_schedule(const dcs::CacheSchedule& schedule, const std::string& path) {
    schedule.validate();
    nlohmann::json j{
        {"format_version", kScheduleFormatVersion},
        {"kind", "soda-cache-schedule"},
        {"total_steps", schedule.total_steps},
        {"anchors", schedule.anchors},
        {"intervals", schedule.intervals},
        {"total_cost", schedule.total_cost},
        {"candidates", schedule.candidates},
        {"phase_constrained", schedule.phase_constrained},
    };
    atomic_write_file(path, j.dump(2) + "\n");
}

dcs::CacheSchedule load_schedule(const std::string& path) {
    const nlohmann::json j = read_json_file(path);
    dcs::CacheSchedule s;
    try {
        if (j.at("format_version").get<uint32_t>() != kScheduleFormatVersion)
            fail(ErrorCode::version_mismatch, "schedule file version requires an upgrade");
        s.total_steps = j.at("total_steps").get<int>();
        s.anchors = j.at("anchors").get<std::vector<int>>();
        s.intervals = j.at("intervals").get<std::vector<int>>();
        s.total_cost = j.at("total_cost").get<double>();
        s.candidates = j.at("candidates").get<std::vector<int>>();
        s.phase_constrained = j.at("phase_constrained").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::corruption, "schedule file is malformed: " + std::string(e.what()));
    }
    s.validate();
    return s;
}

// ============================================================================
// Reports
// ============================================================================

nlohmann::json report_to_json(const pipeline::RunReport& report) {
    nlohmann::json steps = nlohmann::json::array();
    for (const pipeline::StepRecord& s : report.steps) {
        nlohmann::json modules = nlohmann::json::array();
        for (const pipeline::ModuleRecord& r : s.modules) {
            nlohmann::json m{
                {"layer", r.layer},
                {"module", dit::module_kind_name(r.kind)},
                {"decision", pipeline::module_decision_name(r.decision)},
                {"rate", r.rate},
                {"kept_count", r.kept_count},
                {"kept_fraction", r.kept_fraction},
                {"flops", r.flops},
            };
            if (!s.anchor) {
                m["lower_anchor"] = r.lower_anchor;
                m["interval"] = r.interval;
                m["cache_origin"] = r.cache_origin;
                m["max_substituted_refresh"] = r.max_substituted_refresh;
                m["delta"] = r.delta;
                m["cache_error"] = r.cache_error;
                m["keep_zero_fallback"] = r.keep_zero_fallback;
            }
            if (r.has_measured_error) m["measured_error"] = r.measured_error;
            modules.push_back(std::move(m));
        }
        steps.push_back(nlohmann::json{
            {"t", s.t}, {"kind", s.anchor ? "anchor" : "pruned"}, {"modules", std::move(modules)}});
    }

    nlohmann::json j{
        {"format_version", kReportFormatVersion},
        {"kind", "soda-run-report"},
        {"schedule",
         {{"total_steps", report.schedule.total_steps},
          {"anchors", report.schedule.anchors},
          {"intervals", report.schedule.intervals},
          {"total_cost", report.schedule.total_cost},
          {"candidates", report.schedule.candidates},
          {"phase_constrained", report.schedule.phase_constrained}}},
        {"params",
         {{"lambda", report.params.lambda},
          {"beta", report.params.beta},
          {"alpha_max", report.params.alpha_max}}},
        {"x_seed", report.x_seed},
        {"uas_enabled", report.uas_enabled},
        {"measured_online", report.measured_online},
        {"totals",
         {{"flops_proxy_total", report.totals.flops_proxy_total},
          {"flops_proxy_full_run", report.totals.flops_proxy_full_run},
          {"speedup_ratio", report.totals.speedup_ratio}}},
        {"aggregates",
         {{"prunable_records", report.aggregates.prunable_records},
          {"prune_records", report.aggregates.prune_records},
          {"reuse_records", report.aggregates.reuse_records},
          {"keep_zero_fallbacks", report.aggregates.keep_zero_fallbacks},
          {"mean_decided_rate", report.aggregates.mean_decided_rate},
          {"mean_prune_rate", report.aggregates.mean_prune_rate},
          {"mean_kept_fraction", report.aggregates.mean_kept_fraction}}},
        {"steps", std::move(steps)},
    };
    if (report.has_comparison) {
        j["comparison"] = {{"cos_dist", report.comparison.cosine_distance},
                           {"rel_l2", report.comparison.relative_l2}};
    }
    return j;
}

void save_report(const pipeline::RunReport& report, const std::string& path) {
    atomic_write_file(path, report_to_json(report).dump(2) + "\n");
}

}  // namespace soda::store
