// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "virl/geom.hpp"

namespace virl {

struct ZoomAction {
    std::string name = "image_zoom_in";
    Box box;

    friend bool operator==(const ZoomAction&, const ZoomAction&) = default;
};

struct Answer {
    std::string text;

    friend bool operator==(const Answer&, const Answer&) = default;
};

/// One turn: a textual rationale followed by exactly one of a zoom or an answer.
struct TraceStep {
    std::string think_text;
    std::variant<ZoomAction, Answer> payload;

    bool is_zoom() const { return std::holds_alternative<ZoomAction>(payload); }
    bool is_answer() const { return std::holds_alternative<Answer>(payload); }

    friend bool operator==(const TraceStep&, const TraceStep&) = default;
};

struct Trace {
    std::vector<TraceStep> steps;

    /// Text of the terminal answer, if the trace is complete.
    std::optional<std::string> answer() const;
    std::size_t zoom_count() const;

    friend bool operator==(const Trace&, const Trace&) = default;
};

enum class Violation {
    unclosed_tag,
    answer_with_tool,
    missing_think,
    bad_tool_payload,
    trailing_garbage,
    over_round_limit,
    missing_answer,
};

std::string_view violation_code(Violation v);
std::optional<Violation> violation_from_code(std::string_view code);

struct FormatVerdict {
    bool well_formed = true;
    std::vector<Violation> violations;

    bool has(Violation v) const;
    void add(Violation v);

    friend bool operator==(const FormatVerdict&, const FormatVerdict&) = default;
};

struct TraceConfig {
    std::string tool_name = "image_zoom_in";
    /// Every tool call counts toward this limit, retries included.
    int max_rounds = 6;
    /// When set, zoom boxes outside these bounds are bad payloads.
    std::optional<Box> image_bounds;
    double r_fmt_ok = 0.5;
    double r_fmt_bad = -0.5;

    friend bool operator==(const TraceConfig&, const TraceConfig&) = default;
};

struct ParsedTrace {
    Trace trace;
    FormatVerdict verdict;
};

/// Best-effort parse of the <think>/<tool_call>/<answer> grammar. Never throws:
/// malformed input yields the longest valid prefix plus the violations found.
ParsedTrace parse_trace(std::string_view raw, const TraceConfig& cfg = {});

/// Canonical serialization. Throws virl::Error("invalid-trace") when `t` breaks
/// the Trace invariants, so that parse_trace(render_trace(t)) == t always holds.
std::string render_trace(const Trace& t, const TraceConfig& cfg = {});

/// Throws virl::Error("invalid-trace") describing the first broken invariant.
void validate_trace(const Trace& t, const TraceConfig& cfg = {});

double format_reward(const FormatVerdict& v, const TraceConfig& cfg = {});

std::vector<ZoomAction> extract_actions(const Trace& t);

}  // namespace virl
