// SPDX-License-Identifier: Apache-2.0
#include "virl/config.hpp"

#include <cmath>
#include <set>

#include "virl/error.hpp"
#include "virl/io.hpp"

namespace virl {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// Scalar codecs. read() returns false on a type mismatch.
bool read(const json& j, double& v) {
    if (!j.is_number()) return false;
    v = j.get<double>();
    return std::isfinite(v);
}
bool read(const json& j, int& v) {
    if (!j.is_number_integer()) return false;
    const auto x = j.get<std::int64_t>();
    if (x < INT32_MIN || x > INT32_MAX) return false;
    v = static_cast<int>(x);
    return true;
}
bool read(const json& j, std::uint64_t& v) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) return false;
    v = j.get<std::uint64_t>();
    return true;
}
bool read(const json& j, bool& v) {
    if (!j.is_boolean()) return false;
    v = j.get<bool>();
    return true;
}
bool read(const json& j, std::string& v) {
    if (!j.is_string()) return false;
    v = j.get<std::string>();
    return true;
}
bool read(const json& j, RewardMode& v) {
    if (!j.is_string()) return false;
    const auto m = reward_mode_from_name(j.get<std::string>());
    if (m) v = *m;
    return m.has_value();
}
bool read(const json& j, ScheduleMode& v) {
    if (!j.is_string()) return false;
    const auto s = j.get<std::string>();
    if (s == "linear") v = ScheduleMode::linear;
    else if (s == "competence_gated") v = ScheduleMode::competence_gated;
    else return false;
    return true;
}
bool read(const json& j, sim::PromptTemplate& v) {
    if (!j.is_string()) return false;
    const auto s = j.get<std::string>();
    if (s == "clear") v = sim::PromptTemplate::clear;
    else if (s == "ambiguous") v = sim::PromptTemplate::ambiguous;
    else return false;
    return true;
}
bool read(const json& j, std::vector<RewardMode>& v) {
    if (!j.is_array()) return false;
    std::vector<RewardMode> out;
    for (const auto& e : j) {
        RewardMode m{};
        if (!read(e, m)) return false;
        out.push_back(m);
    }
    v = std::move(out);
    return true;
}

ojson write(double v) { return v; }
ojson write(int v) { return v; }
ojson write(std::uint64_t v) { return v; }
ojson write(bool v) { return v; }
ojson write(const std::string& v) { return v; }
ojson write(RewardMode v) { return std::string(reward_mode_name(v)); }
ojson write(ScheduleMode v) { return v == ScheduleMode::linear ? "linear" : "competence_gated"; }
ojson write(sim::PromptTemplate v) { return v == sim::PromptTemplate::clear ? "clear" : "ambiguous"; }
ojson write(const std::vector<RewardMode>& v) {
    ojson a = ojson::array();
    for (auto m : v) a.push_back(write(m));
    return a;
}

const char* expected(const double&) { return "a finite number"; }
const char* expected(const int&) { return "an integer"; }
const char* expected(const std::uint64_t&) { return "a non-negative integer"; }
const char* expected(const bool&) { return "true or false"; }
const char* expected(const std::string&) { return "a string"; }
const char* expected(const RewardMode&) { return "one of outcome_only, naive_stepwise, virl"; }
const char* expected(const ScheduleMode&) { return "one of linear, competence_gated"; }
const char* expected(const sim::PromptTemplate&) { return "one of clear, ambiguous"; }
const char* expected(const std::vector<RewardMode>&) { return "a list of reward mode names"; }

class Loader {
public:
    Loader(const json& node, std::string path, std::vector<std::string>& errs)
        : node_(node), path_(std::move(path)), errs_(errs) {}

    template <typename T>
    void field(const char* key, T& v) {
        used_.insert(key);
        const auto it = node_.find(key);
        if (it == node_.end()) return;
        if (!read(*it, v)) errs_.push_back(name(key) + ": expected " + expected(v));
    }

    template <typename F>
    void section(const char* key, F&& fn) {
        used_.insert(key);
        const auto it = node_.find(key);
        if (it == node_.end()) return;
        if (!it->is_object()) {
            errs_.push_back(name(key) + ": expected an object");
            return;
        }
        Loader child(*it, name(key), errs_);
        fn(child);
        child.finish();
    }

    void finish() {
        for (const auto& [k, _] : node_.items())
            if (!used_.count(k)) errs_.push_back(name(k) + ": unknown key");
    }

private:
    std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json& node_;
    std::string path_;
    std::vector<std::string>& errs_;
    std::set<std::string, std::less<>> used_;
};

class Dumper {
public:
    explicit Dumper(ojson& out) : out_(out) {}

    template <typename T>
    void field(const char* key, T& v) {
        out_[key] = write(v);
    }

    template <typename F>
    void section(const char* key, F&& fn) {
        ojson child = ojson::object();
        Dumper d(child);
        fn(d);
        out_[key] = std::move(child);
    }

private:
    ojson& out_;
};

// The single field list shared by loading and dumping.
template <typename V>
void visit(V& v, RunConfig& c) {
    v.field("seed", c.seed);
    v.section("reward", [&](auto& r) {
        r.field("mode", c.reward.mode);
        r.field("naive_bonus", c.reward.naive_bonus);
        r.field("use_schedule", c.use_schedule);
        r.section("fidelity", [&](auto& f) {
            f.field("r_base", c.fidelity.r_base);
            f.field("eta", c.fidelity.eta);
            f.field("h0", c.fidelity.h0);
            f.field("dh", c.fidelity.dh);
        });
        r.section("redundancy", [&](auto& f) {
            f.field("budget", c.redundancy.budget);
            f.field("lambda", c.redundancy.lambda);
            f.field("dup_iou", c.redundancy.dup_iou);
        });
        r.section("schedule", [&](auto& f) {
            f.field("mode", c.schedule.mode);
            f.field("h0_start", c.schedule.h0_start);
            f.field("h0_end", c.schedule.h0_end);
            f.field("warmup_steps", c.schedule.warmup_steps);
            f.field("increment", c.schedule.increment);
            f.field("promotion_bar", c.schedule.promotion_bar);
        });
    });
    v.section("credit", [&](auto& r) {
        r.field("eps_low", c.credit.eps_low);
        r.field("eps_high", c.credit.eps_high);
        r.field("std_normalize", c.credit.std_normalize);
        r.field("fine_grained", c.credit.fine_grained);
        r.section("modulator", [&](auto& f) {
            f.field("h_good_pos", c.modulator.h_good_pos);
            f.field("h_bad_pos", c.modulator.h_bad_pos);
            f.field("h_good_neg", c.modulator.h_good_neg);
            f.field("h_bad_neg", c.modulator.h_bad_neg);
        });
    });
    v.section("sim", [&](auto& s) {
        auto& m = c.sim;
        s.field("train_modes", c.train_modes);
        s.field("dump_last_iterations", c.dump_last_iterations);
        s.field("grid_w", m.grid_w);
        s.field("grid_h", m.grid_h);
        s.field("num_glyphs", m.num_glyphs);
        s.field("num_choices", m.num_choices);
        s.field("gt_min_side", m.gt_min_side);
        s.field("gt_max_side", m.gt_max_side);
        s.field("num_decoys", m.num_decoys);
        s.field("p_hint", m.p_hint);
        s.field("sal_true_lo", m.sal_true_lo);
        s.field("sal_true_hi", m.sal_true_hi);
        s.field("sal_decoy_lo", m.sal_decoy_lo);
        s.field("sal_decoy_hi", m.sal_decoy_hi);
        s.field("hint_decay", m.hint_decay);
        s.field("max_rounds", m.max_rounds);
        s.field("group_size", m.group_size);
        s.field("batch_size", m.batch_size);
        s.field("iterations", m.iterations);
        s.field("lr", m.lr);
        s.field("temperature", m.temperature);
        s.field("max_draw_factor", m.max_draw_factor);
        s.field("ppo_epochs", m.ppo_epochs);
        s.field("pad_frac", m.pad_frac);
        s.field("prompt_template", m.prompt);
        s.field("init_w_sal", m.init_w_sal);
        s.field("init_b_first_clear", m.init_b_first_clear);
        s.field("init_b_first_ambiguous", m.init_b_first_ambiguous);
        s.field("init_b_more", m.init_b_more);
        s.field("init_w_hint", m.init_w_hint);
        s.field("init_w_ev", m.init_w_ev);
    });
    v.section("datapipe", [&](auto& s) {
        auto& d = c.datapipe;
        s.field("pad_frac", d.pad_frac);
        s.field("nms_iou", d.nms_iou);
        s.field("max_area_frac", d.max_area_frac);
        s.field("attempts", d.attempts);
        s.field("k_min", d.k_min);
        s.field("k_max", d.k_max);
        s.field("backend_seed", d.backend_seed);
    });
    v.section("trace", [&](auto& s) {
        s.field("tool_name", c.trace.tool_name);
        s.field("max_rounds", c.trace.max_rounds);
        s.field("r_fmt_ok", c.trace.r_fmt_ok);
        s.field("r_fmt_bad", c.trace.r_fmt_bad);
    });
    v.section("paths", [&](auto& s) {
        s.field("out_dir", c.paths.out_dir);
        s.field("traces", c.paths.traces);
        s.field("tasks", c.paths.tasks);
        s.field("records", c.paths.records);
    });
}

// Format reward constants live under "trace"; the reward options mirror them.
void sync_derived(RunConfig& c) {
    c.reward.r_fmt_ok = c.trace.r_fmt_ok;
    c.reward.r_fmt_bad = c.trace.r_fmt_bad;
}

std::vector<std::string> lines_after_first(const std::string& msg) {
    std::vector<std::string> out;
    std::size_t pos = msg.find('\n');
    while (pos != std::string::npos) {
        const std::size_t next = msg.find('\n', pos + 1);
        auto line = msg.substr(pos + 1, next == std::string::npos ? std::string::npos : next - pos - 1);
        const auto start = line.find_first_not_of(' ');
        if (start != std::string::npos) out.push_back(line.substr(start));
        pos = next;
    }
    return out;
}

}  // namespace

std::vector<std::string> config_problems(const RunConfig& c) {
    std::vector<std::string> errs;
    auto need = [&](bool ok, const std::string& field, const char* why) {
        if (!ok) errs.push_back(field + ": " + why);
    };
    const auto& f = c.fidelity;
    need(f.r_base > 0.0, "reward.fidelity.r_base", "must be > 0");
    need(f.eta >= 0.0, "reward.fidelity.eta", "must be >= 0");
    need(f.h0 >= 0.0 && f.h0 <= 1.0, "reward.fidelity.h0", "must be in [0, 1]");
    need(f.dh > 0.0, "reward.fidelity.dh", "must be > 0");
    need(c.redundancy.budget >= 0, "reward.redundancy.budget", "must be >= 0");
    need(c.redundancy.lambda >= 0.0, "reward.redundancy.lambda", "must be >= 0");
    need(c.redundancy.dup_iou >= 0.0 && c.redundancy.dup_iou <= 1.0, "reward.redundancy.dup_iou", "must be in [0, 1]");
    const auto& s = c.schedule;
    need(s.h0_start >= 0.0 && s.h0_start <= 1.0, "reward.schedule.h0_start", "must be in [0, 1]");
    need(s.h0_end >= 0.0 && s.h0_end <= 1.0, "reward.schedule.h0_end", "must be in [0, 1]");
    need(s.h0_start <= s.h0_end, "reward.schedule.h0_end", "must be >= h0_start");
    need(s.warmup_steps >= 0, "reward.schedule.warmup_steps", "must be >= 0");
    need(s.increment > 0.0, "reward.schedule.increment", "must be > 0");
    need(s.promotion_bar >= 0.0 && s.promotion_bar <= 1.0, "reward.schedule.promotion_bar", "must be in [0, 1]");
    need(c.reward.naive_bonus >= 0.0, "reward.naive_bonus", "must be >= 0");
    need(c.modulator.valid(), "credit.modulator",
         "requires h_good_pos > 1 > h_bad_pos > 0 and h_bad_neg > 1 > h_good_neg > 0");
    need(c.credit.eps_low >= 0.0 && c.credit.eps_low < 1.0, "credit.eps_low", "must be in [0, 1)");
    need(c.credit.eps_high >= 0.0, "credit.eps_high", "must be >= 0");
    need(!c.train_modes.empty(), "sim.train_modes", "must name at least one reward mode");
    need(c.dump_last_iterations >= 0, "sim.dump_last_iterations", "must be >= 0");
    try {
        sim::validate(c.sim);
    } catch (const Error& e) {
        for (auto& l : lines_after_first(e.what())) errs.push_back(l);
    }
    try {
        datapipe::validate(c.datapipe);
    } catch (const Error& e) {
        for (auto& l : lines_after_first(e.what())) errs.push_back(l);
    }
    need(!c.trace.tool_name.empty(), "trace.tool_name", "must not be empty");
    need(c.trace.max_rounds >= 0, "trace.max_rounds", "must be >= 0");
    return errs;
}

RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    std::vector<std::string> errs;
    if (!j.is_object()) {
        errs.push_back("<root>: expected an object");
    } else {
        Loader l(j, "", errs);
        visit(l, c);
        l.finish();
    }
    sync_derived(c);
    if (errs.empty()) errs = config_problems(c);
    if (!errs.empty()) {
        std::string msg = "invalid config (" + std::to_string(errs.size()) + " problem" +
                          (errs.size() == 1 ? "" : "s") + "):";
        for (const auto& e : errs) msg += "\n  " + e;
        throw Error("invalid-config", msg);
    }
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    const auto text = io::read_file(path);
    const auto j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw Error("invalid-config", path.string() + ": not valid JSON");
    return config_from_json(j);
}

nlohmann::ordered_json config_to_json(const RunConfig& c) {
    RunConfig copy = c;
    ojson out = ojson::object();
    Dumper d(out);
    visit(d, copy);
    return out;
}

sim::ExperimentConfig experiment_config(const RunConfig& c, RewardMode mode) {
    sim::ExperimentConfig e;
    e.seed = c.seed;
    e.sim = c.sim;
    e.sim.reward_mode = mode;
    e.fidelity = c.fidelity;
    e.redundancy = c.redundancy;
    e.schedule = c.schedule;
    e.use_schedule = c.use_schedule;
    e.reward = c.reward;
    e.reward.mode = mode;
    e.modulator = c.modulator;
    e.credit = c.credit;
    e.dump_last_iterations = c.dump_last_iterations;
    return e;
}

}  // namespace virl
