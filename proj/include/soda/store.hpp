#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "soda/dcs.hpp"
#include "soda/ofs.hpp"
#include "soda/pipeline.hpp"

namespace soda::store {

inline constexpr uint32_t kTableFormatVersion = 1;
inline constexpr uint32_t kScheduleFormatVersion = 1;
inline constexpr uint32_t kReportFormatVersion = 1;
inline constexpr char kTableMagic[8] = {'S', 'O', 'D', 'A', 'T', 'B', 'L', '1'};

// Binary table layout (see docs/FORMATS.md): magic, version u32, T u32,
// L u32, M u32, n_max u32, alpha_count u32, S u32, fingerprint 32 bytes,
// then caching_mean, caching_std, pruning_mean, pruning_std as little-endian
// float32 in t-major (t, l, m, k) order. Absent cells hold -1.0f.
inline constexpr size_t kTableHeaderBytes = 8 + 7 * 4 + 32;

size_t table_file_bytes(int total_steps, int layers, int n_max, int alpha_count);
size_t table_tensor_bytes(int total_steps, int layers, int n_max, int alpha_count);
// The paper-analogue stored-prior payload: the two mean tensors.
size_t table_prior_bytes(int total_steps, int layers, int n_max, int alpha_count);

std::string table_sidecar_path(const std::string& path);

// load(save(x)) reproduces x bit-identically, std tensors and metadata
// included. Every load re-validates all type invariants.
void save_tables(const ofs::SensitivityTables& tables, const std::string& path);
ofs::SensitivityTables load_tables(const std::string& path);

void save_schedule(const dcs::CacheSchedule& schedule, const std::string& path);
dcs::CacheSchedule load_schedule(const std::string& path);

nlohmann::json report_to_json(const pipeline::RunReport& report);
void save_report(const pipeline::RunReport& report, const std::string& path);

// Write-temp-then-rename; readers never observe partial files.
void atomic_write_file(const std::string& path, const std::string& bytes);

}  // namespace soda::store
