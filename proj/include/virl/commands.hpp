// SPDX-License-Identifier: Apache-2.0
#pragma once

// Subcommand bodies behind the `virl` executable. Each returns a process exit
// status and writes all outputs atomically under `out_dir`. Failures print a
// one-line JSON error record ({"error": code, "message": ...}) to `err`.

#include <filesystem>
#include <iosfwd>
#include <vector>

#include <json.hpp>

#include "virl/config.hpp"
#include "virl/trace.hpp"

namespace virl::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  ///< malformed input, I/O or runtime failure
inline constexpr int kExitUsage = 2;    ///< bad flags or invalid config

/// Scores every trace against its task: scores.jsonl, report.json, report.csv.
/// Traces sharing a task_id form one group for advantage computation.
int cmd_score(const RunConfig& cfg, const fs::path& traces, const fs::path& tasks, const fs::path& out_dir,
              std::ostream& out, std::ostream& err);

/// One run per configured reward mode: train_<mode>.csv, manifest.json and,
/// when sim.dump_last_iterations > 0, traces_<mode>.jsonl + tasks_<mode>.jsonl.
int cmd_train_sim(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out, std::ostream& err);

/// Curation pipeline over region records: tasks.jsonl + manifest.json.
int cmd_curate(const RunConfig& cfg, const fs::path& records, const fs::path& out_dir, std::ostream& out,
               std::ostream& err);

/// Merges training logs into <metric>.csv files with one column per log.
int cmd_report(const std::vector<fs::path>& logs, const fs::path& out_dir, std::ostream& out, std::ostream& err);

/// Writes `n` synthetic region records as JSON-lines.
int cmd_make_records(std::size_t n, std::uint64_t seed, const fs::path& out_file, std::ostream& out,
                     std::ostream& err);

/// JSON-lines trace record: {task_id, raw_text, parsed: {steps}, verdict}.
nlohmann::ordered_json trace_record(const std::string& task_id, const std::string& raw, const ParsedTrace& parsed);

/// Column names of a training-log CSV, in order.
const std::vector<std::string>& training_log_columns();

void print_error(std::ostream& err, const std::string& code, const std::string& message);

}  // namespace virl::cli
