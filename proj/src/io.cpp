// SPDX-License-Identifier: Apache-2.0
#include "virl/io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "virl/error.hpp"

namespace virl::io {

namespace fs = std::filesystem;

json box_to_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

Box box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw Error("bad-box", "box must be an array [x1, y1, x2, y2]");
    std::array<double, 4> v{};
    for (std::size_t i = 0; i < 4; ++i) {
        if (!j[i].is_number()) throw Error("bad-box", "box coordinates must be numbers");
        v[i] = j[i].get<double>();
        if (!std::isfinite(v[i])) throw Error("bad-box", "box coordinates must be finite");
    }
    return {v[0], v[1], v[2], v[3]};
}

json task_to_json(const Task& t) {
    json j = {{"task_id", t.task_id},   {"question", t.question},
              {"choices", t.choices},   {"key", t.key},
              {"rationale", box_to_json(t.rationale)}, {"pad_frac", t.pad_frac},
              {"weight", t.weight}};
    if (t.bounds) j["bounds"] = box_to_json(*t.bounds);
    return j;
}

Task task_from_json(const json& j) {
    if (!j.is_object()) throw Error("bad-task", "task record must be a JSON object");
    auto field = [&](const char* name) -> const json& {
        const auto it = j.find(name);
        if (it == j.end()) throw Error("bad-task", std::string("task record is missing '") + name + "'");
        return *it;
    };
    auto text = [&](const char* name) {
        const auto& v = field(name);
        if (!v.is_string()) throw Error("bad-task", std::string("'") + name + "' must be a string");
        return v.get<std::string>();
    };
    Task t;
    t.task_id = text("task_id");
    t.question = j.contains("question") ? text("question") : std::string();
    const auto& choices = field("choices");
    if (!choices.is_array()) throw Error("bad-task", "'choices' must be an array of strings");
    for (const auto& c : choices) {
        if (!c.is_string()) throw Error("bad-task", "'choices' must be an array of strings");
        t.choices.push_back(c.get<std::string>());
    }
    t.key = text("key");
    try {
        t.rationale = box_from_json(field("rationale"));
        if (j.contains("bounds") && !j["bounds"].is_null()) t.bounds = box_from_json(j["bounds"]);
    } catch (const Error& e) {
        throw Error("bad-task", std::string("task '") + t.task_id + "': " + e.what());
    }
    for (const char* name : {"pad_frac", "weight"}) {
        if (!j.contains(name)) continue;
        if (!j[name].is_number()) throw Error("bad-task", std::string("'") + name + "' must be a number");
    }
    if (j.contains("pad_frac")) t.pad_frac = j["pad_frac"].get<double>();
    if (j.contains("weight")) t.weight = j["weight"].get<double>();
    return t;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw Error("io", "error while reading " + path.string());
    return ss.str();
}

void write_atomic(const fs::path& path, std::string_view content) {
    std::error_code ec;
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw Error("io", "cannot create " + path.parent_path().string() + ": " + ec.message());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("io", "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw Error("io", "short write to " + tmp.string());
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error("io", "cannot move output into place at " + path.string());
    }
}

std::vector<json> parse_jsonl(std::string_view text, std::string_view source) {
    std::vector<json> rows;
    std::size_t line_no = 0, pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const auto line = text.substr(pos, end - pos);
        ++line_no;
        pos = end + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
            if (end == text.size()) break;
            continue;
        }
        json j = json::parse(line.begin(), line.end(), nullptr, false);
        if (j.is_discarded())
            throw Error("malformed-jsonl", std::string(source) + ":" + std::to_string(line_no) + ": not valid JSON");
        rows.push_back(std::move(j));
        if (end == text.size()) break;
    }
    return rows;
}

std::vector<json> read_jsonl(const fs::path& path) { return parse_jsonl(read_file(path), path.string()); }

std::string to_jsonl(const std::vector<json>& rows) {
    std::string out;
    for (const auto& r : rows) {
        out += r.dump();
        out += '\n';
    }
    return out;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string CsvTable::str() const {
    std::string out;
    auto row_out = [&](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += csv_field(row[i]);
        }
        out += '\n';
    };
    row_out(header);
    for (const auto& r : rows) row_out(r);
    return out;
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> cells(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cells.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cells.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.emplace_back();
        } else if (c != '\r') {
            cells.back() += c;
        }
    }
    return cells;
}

}  // namespace

CsvTable parse_csv(std::string_view text, std::string_view source) {
    CsvTable t;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const auto line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto cells = split_csv_line(line);
        if (t.header.empty()) {
            t.header = std::move(cells);
            continue;
        }
        if (cells.size() != t.header.size())
            throw Error("malformed-csv", std::string(source) + ":" + std::to_string(line_no) + ": expected " +
                                             std::to_string(t.header.size()) + " fields, found " +
                                             std::to_string(cells.size()));
        t.rows.push_back(std::move(cells));
    }
    return t;
}

}  // namespace virl::io
