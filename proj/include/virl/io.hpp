// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "virl/geom.hpp"
#include "virl/task.hpp"

namespace virl::io {

using nlohmann::json;

/// Boxes are stored as [x1, y1, x2, y2].
json box_to_json(const Box& b);
/// Throws virl::Error("bad-box") unless `j` is an array of 4 finite numbers.
Box box_from_json(const json& j);

json task_to_json(const Task& t);
/// Throws virl::Error("bad-task") naming the offending field.
Task task_from_json(const json& j);

/// Throws virl::Error("io") if the file cannot be read.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file, then renames over `path`. Parent
/// directories are created. Throws virl::Error("io").
void write_atomic(const std::filesystem::path& path, std::string_view content);

/// One JSON value per non-blank line. Throws virl::Error("malformed-jsonl")
/// with "path:line" in the message on the first unparsable line.
std::vector<json> read_jsonl(const std::filesystem::path& path);
std::vector<json> parse_jsonl(std::string_view text, std::string_view source = "<input>");
std::string to_jsonl(const std::vector<json>& rows);

/// Shortest round-trip decimal form.
std::string format_double(double v);
/// Quotes a CSV field only when it contains a comma, quote or newline.
std::string csv_field(std::string_view s);

/// Minimal CSV table: header row plus rows of equal width.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string str() const;
};

/// Parses the subset written by CsvTable::str (RFC 4180 quoting, no embedded newlines).
/// Throws virl::Error("malformed-csv") on ragged rows.
CsvTable parse_csv(std::string_view text, std::string_view source = "<input>");

}  // namespace virl::io
