// SPDX-License-Identifier: Apache-2.0
#include "virl/trace.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>

#include <json.hpp>

#include "virl/error.hpp"

namespace virl {

namespace {

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kToolOpen = "<tool_call>";
constexpr std::string_view kToolClose = "</tool_call>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";

constexpr std::array<std::string_view, 7> kCodes = {
    "unclosed-tag",     "answer-with-tool", "missing-think",  "bad-tool-payload",
    "trailing-garbage", "over-round-limit", "missing-answer",
};

class Cursor {
public:
    explicit Cursor(std::string_view s) : s_(s) {}

    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    bool done() const { return pos_ >= s_.size(); }
    bool starts_with(std::string_view tag) const { return s_.substr(pos_).starts_with(tag); }

    bool consume(std::string_view tag) {
        if (!starts_with(tag)) return false;
        pos_ += tag.size();
        return true;
    }

    /// Content up to `close`, consuming the closing tag; nullopt if never closed.
    std::optional<std::string_view> until(std::string_view close) {
        const auto end = s_.find(close, pos_);
        if (end == std::string_view::npos) return std::nullopt;
        auto body = s_.substr(pos_, end - pos_);
        pos_ = end + close.size();
        return body;
    }

private:
    std::string_view s_;
    std::size_t pos_ = 0;
};

// Accepts exactly {"name": string, "arguments": {"box": [4 numbers]}} in any key
// order. Walking SAX events avoids building a DOM for every tool call.
class PayloadSax : public nlohmann::json_sax<nlohmann::json> {
public:
    std::optional<std::string> name;
    std::array<double, 4> box{};
    int box_len = -1;

    bool null() override { return fail(); }
    bool boolean(bool) override { return fail(); }
    bool number_integer(number_integer_t v) override { return number(static_cast<double>(v)); }
    bool number_unsigned(number_unsigned_t v) override { return number(static_cast<double>(v)); }
    bool number_float(number_float_t v, const string_t&) override { return number(v); }
    bool binary(binary_t&) override { return fail(); }
    bool string(string_t& v) override {
        if (depth_ != 1 || key_ != "name" || name) return fail();
        name = v;
        return true;
    }
    bool start_object(std::size_t) override {
        if (depth_ == 0 || (depth_ == 1 && key_ == "arguments" && !seen_args_)) {
            seen_args_ = seen_args_ || depth_ == 1;
            ++depth_;
            key_.clear();
            return true;
        }
        return fail();
    }
    bool key(string_t& k) override {
        key_ = k;
        return true;
    }
    bool end_object() override {
        --depth_;
        key_.clear();
        return true;
    }
    bool start_array(std::size_t) override {
        if (depth_ != 2 || key_ != "box" || box_len >= 0) return fail();
        box_len = 0;
        in_box_ = true;
        return true;
    }
    bool end_array() override {
        in_box_ = false;
        return true;
    }
    bool parse_error(std::size_t, const std::string&, const nlohmann::detail::exception&) override { return fail(); }

private:
    int depth_ = 0;
    std::string key_;
    bool seen_args_ = false;
    bool in_box_ = false;

    bool number(double v) {
        if (!in_box_ || box_len >= 4) return fail();
        box[static_cast<std::size_t>(box_len++)] = v;
        return true;
    }
    static bool fail() { return false; }
};

std::optional<ZoomAction> parse_payload(std::string_view body, const TraceConfig& cfg) {
    PayloadSax sax;
    if (!nlohmann::json::sax_parse(body.begin(), body.end(), &sax, nlohmann::json::input_format_t::json, true))
        return std::nullopt;
    if (!sax.name || *sax.name != cfg.tool_name || sax.box_len != 4) return std::nullopt;
    const auto& v = sax.box;
    ZoomAction z{cfg.tool_name, {v[0], v[1], v[2], v[3]}};
    if (!z.box.valid()) return std::nullopt;
    if (cfg.image_bounds && !cfg.image_bounds->contains(z.box)) return std::nullopt;
    return z;
}

void append_number(std::string& out, double v) {
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    out.append(buf.data(), res.ptr);
}

}  // namespace

std::optional<std::string> Trace::answer() const {
    if (steps.empty()) return std::nullopt;
    if (const auto* a = std::get_if<Answer>(&steps.back().payload)) return a->text;
    return std::nullopt;
}

std::size_t Trace::zoom_count() const {
    return static_cast<std::size_t>(std::count_if(steps.begin(), steps.end(), [](const TraceStep& s) { return s.is_zoom(); }));
}

std::string_view violation_code(Violation v) { return kCodes[static_cast<std::size_t>(v)]; }

std::optional<Violation> violation_from_code(std::string_view code) {
    for (std::size_t i = 0; i < kCodes.size(); ++i)
        if (kCodes[i] == code) return static_cast<Violation>(i);
    return std::nullopt;
}

bool FormatVerdict::has(Violation v) const {
    return std::find(violations.begin(), violations.end(), v) != violations.end();
}

void FormatVerdict::add(Violation v) {
    if (!has(v)) violations.push_back(v);
    well_formed = false;
}

ParsedTrace parse_trace(std::string_view raw, const TraceConfig& cfg) {
    ParsedTrace out;
    Cursor cur(raw);
    auto& steps = out.trace.steps;
    auto& verdict = out.verdict;
    int zooms = 0;

    for (;;) {
        cur.skip_ws();
        if (cur.done()) {
            if (!out.trace.answer()) verdict.add(Violation::missing_answer);
            break;
        }
        if (!steps.empty() && steps.back().is_answer()) {
            verdict.add(Violation::trailing_garbage);
            break;
        }
        if (!cur.consume(kThinkOpen)) {
            const bool payload_first = cur.starts_with(kToolOpen) || cur.starts_with(kAnswerOpen);
            verdict.add(payload_first ? Violation::missing_think : Violation::trailing_garbage);
            break;
        }
        const auto think = cur.until(kThinkClose);
        if (!think) {
            verdict.add(Violation::unclosed_tag);
            break;
        }
        if (think->empty()) {
            verdict.add(Violation::missing_think);
            break;
        }

        cur.skip_ws();
        if (cur.consume(kToolOpen)) {
            const auto body = cur.until(kToolClose);
            if (!body) {
                verdict.add(Violation::unclosed_tag);
                break;
            }
            auto zoom = parse_payload(*body, cfg);
            if (!zoom) {
                verdict.add(Violation::bad_tool_payload);
                break;
            }
            if (zooms >= cfg.max_rounds) {
                verdict.add(Violation::over_round_limit);
                break;
            }
            ++zooms;
            steps.push_back({std::string(*think), std::move(*zoom)});
            cur.skip_ws();
            if (cur.starts_with(kAnswerOpen)) {
                verdict.add(Violation::answer_with_tool);
                break;
            }
        } else if (cur.consume(kAnswerOpen)) {
            const auto body = cur.until(kAnswerClose);
            if (!body) {
                verdict.add(Violation::unclosed_tag);
                break;
            }
            steps.push_back({std::string(*think), Answer{std::string(*body)}});
        } else {
            verdict.add(cur.done() ? Violation::missing_answer : Violation::trailing_garbage);
            break;
        }
    }
    return out;
}

void validate_trace(const Trace& t, const TraceConfig& cfg) {
    auto fail = [](const std::string& why) { throw Error("invalid-trace", "invalid trace: " + why); };
    if (t.steps.empty()) fail("no steps");
    int zooms = 0;
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const auto& s = t.steps[i];
        if (s.think_text.empty()) fail("step " + std::to_string(i) + " has an empty think segment");
        if (s.think_text.find(kThinkClose) != std::string::npos) fail("think text contains a closing tag");
        if (const auto* z = std::get_if<ZoomAction>(&s.payload)) {
            if (z->name != cfg.tool_name) fail("tool name '" + z->name + "' is not '" + cfg.tool_name + "'");
            if (!z->box.valid()) fail("zoom box violates x1<=x2, y1<=y2");
            if (cfg.image_bounds && !cfg.image_bounds->contains(z->box)) fail("zoom box outside image bounds");
            if (++zooms > cfg.max_rounds) fail("more zoom rounds than the configured limit");
        } else {
            const auto& a = std::get<Answer>(s.payload);
            if (i + 1 != t.steps.size()) fail("answer is not in the final step");
            if (a.text.find(kAnswerClose) != std::string::npos) fail("answer text contains a closing tag");
        }
    }
    if (!t.answer()) fail("trace has no terminal answer");
}

std::string render_trace(const Trace& t, const TraceConfig& cfg) {
    validate_trace(t, cfg);
    std::string out;
    out.reserve(t.steps.size() * 96);
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const auto& s = t.steps[i];
        if (i) out += '\n';
        out += kThinkOpen;
        out += s.think_text;
        out += kThinkClose;
        out += ' ';
        if (const auto* z = std::get_if<ZoomAction>(&s.payload)) {
            out += kToolOpen;
            out += "{\"name\":";
            const bool plain = std::all_of(z->name.begin(), z->name.end(), [](char c) {
                return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
            });
            if (plain) {
                out += '"';
                out += z->name;
                out += '"';
            } else {
                out += nlohmann::json(z->name).dump();
            }
            out += ",\"arguments\":{\"box\":[";
            const std::array<double, 4> v = {z->box.x1, z->box.y1, z->box.x2, z->box.y2};
            for (std::size_t k = 0; k < 4; ++k) {
                if (k) out += ',';
                append_number(out, v[k]);
            }
            out += "]}}";
            out += kToolClose;
        } else {
            out += kAnswerOpen;
            out += std::get<Answer>(s.payload).text;
            out += kAnswerClose;
        }
    }
    return out;
}

double format_reward(const FormatVerdict& v, const TraceConfig& cfg) {
    return v.well_formed && v.violations.empty() ? cfg.r_fmt_ok : cfg.r_fmt_bad;
}

std::vector<ZoomAction> extract_actions(const Trace& t) {
    std::vector<ZoomAction> out;
    for (const auto& s : t.steps)
        if (const auto* z = std::get_if<ZoomAction>(&s.payload)) out.push_back(*z);
    return out;
}

}  // namespace virl
