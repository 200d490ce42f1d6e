// SPDX-License-Identifier: Apache-2.0
#include "virl/commands.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <set>

#include "virl/credit.hpp"
#include "virl/datapipe.hpp"
#include "virl/error.hpp"
#include "virl/io.hpp"
#include "virl/metrics.hpp"
#include "virl/reward.hpp"
#include "virl/sim.hpp"

namespace virl::cli {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

ojson doubles(const std::vector<double>& v) {
    ojson a = ojson::array();
    for (double x : v) a.push_back(x);
    return a;
}

ojson box_json(const Box& b) { return ojson::array({b.x1, b.y1, b.x2, b.y2}); }

std::string dump_jsonl(const std::vector<ojson>& rows) {
    std::string s;
    for (const auto& r : rows) {
        s += r.dump();
        s += '\n';
    }
    return s;
}

// Structural failure: print the record and return the exit code.
int fail(std::ostream& err, const Error& e) {
    print_error(err, e.code(), e.what());
    return e.code() == "invalid-config" ? kExitUsage : kExitFailure;
}

}  // namespace

void print_error(std::ostream& err, const std::string& code, const std::string& message) {
    ojson j;
    j["error"] = code;
    j["message"] = message;
    err << j.dump() << '\n';
}

ojson trace_record(const std::string& task_id, const std::string& raw, const ParsedTrace& parsed) {
    ojson steps = ojson::array();
    for (const auto& s : parsed.trace.steps) {
        ojson step;
        step["think"] = s.think_text;
        if (const auto* z = std::get_if<ZoomAction>(&s.payload)) {
            step["kind"] = "zoom";
            step["tool"] = z->name;
            step["box"] = box_json(z->box);
        } else {
            step["kind"] = "answer";
            step["text"] = std::get<Answer>(s.payload).text;
        }
        steps.push_back(std::move(step));
    }
    ojson violations = ojson::array();
    for (auto v : parsed.verdict.violations) violations.push_back(std::string(violation_code(v)));
    ojson rec;
    rec["task_id"] = task_id;
    rec["raw_text"] = raw;
    rec["parsed"] = {{"steps", steps}};
    rec["verdict"] = {{"well_formed", parsed.verdict.well_formed}, {"violations", violations}};
    return rec;
}

// ---------------------------------------------------------------- score

namespace {

struct ScoredTrace {
    std::size_t index = 0;
    std::string task_id;
    std::string flag;  ///< empty when scored
    ParsedTrace parsed;
    RewardBreakdown breakdown;
    metrics::TraceScore score;
    double advantage = 0.0;
    std::vector<StepAdvantage> step_advantages;
};

}  // namespace

int cmd_score(const RunConfig& cfg, const fs::path& traces_path, const fs::path& tasks_path, const fs::path& out_dir,
              std::ostream& out, std::ostream& err) {
    std::map<std::string, Task> tasks;
    std::vector<std::pair<std::string, std::string>> inputs;  // (task_id, raw_text)
    try {
        for (const auto& j : io::read_jsonl(tasks_path)) {
            Task t = io::task_from_json(j);
            if (!tasks.emplace(t.task_id, t).second)
                throw Error("duplicate-task", tasks_path.string() + ": task_id '" + t.task_id + "' appears twice");
        }
        std::size_t line = 0;
        for (const auto& j : io::read_jsonl(traces_path)) {
            ++line;
            const auto where = traces_path.string() + ": record " + std::to_string(line);
            if (!j.is_object()) throw Error("bad-trace-record", where + " is not an object");
            const auto id = j.find("task_id");
            const auto raw = j.find("raw_text");
            if (id == j.end() || !id->is_string()) throw Error("bad-trace-record", where + " lacks a string task_id");
            if (raw == j.end() || !raw->is_string()) throw Error("bad-trace-record", where + " lacks a string raw_text");
            inputs.emplace_back(id->get<std::string>(), raw->get<std::string>());
        }
    } catch (const Error& e) {
        return fail(err, e);
    }

    std::vector<ScoredTrace> scored(inputs.size());
    std::map<std::string, std::vector<std::size_t>> groups;
    std::size_t warnings = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto& s = scored[i];
        s.index = i;
        s.task_id = inputs[i].first;
        const auto it = tasks.find(s.task_id);
        TraceConfig tc = cfg.trace;
        if (it != tasks.end()) tc.image_bounds = it->second.bounds;
        s.parsed = parse_trace(inputs[i].second, tc);
        if (it == tasks.end()) {
            s.flag = "missing-task";
            ++warnings;
            continue;
        }
        try {
            RewardOptions ro = cfg.reward;
            s.breakdown = total_reward(s.parsed.trace, s.parsed.verdict, it->second, cfg.fidelity, cfg.redundancy, ro);
            s.score = metrics::score_trace(s.parsed.trace, it->second);
            groups[s.task_id].push_back(i);
        } catch (const Error& e) {
            s.flag = e.code();
            ++warnings;
        }
    }

    const bool modulated = cfg.reward.mode == RewardMode::virl && cfg.credit.fine_grained;
    for (const auto& [id, members] : groups) {
        std::vector<double> rewards;
        for (auto i : members) rewards.push_back(scored[i].breakdown.r_total);
        const auto adv = group_advantages(rewards, cfg.credit.std_normalize);
        for (std::size_t k = 0; k < members.size(); ++k) {
            auto& s = scored[members[k]];
            s.advantage = adv[k];
            const auto prof = modulated ? modulate(adv[k], classify_steps(s.parsed.trace, s.breakdown), cfg.modulator)
                                        : uniform_profile(adv[k], s.parsed.trace.steps.size());
            s.step_advantages = prof.per_step;
        }
    }

    std::vector<ojson> rows;
    std::vector<metrics::TraceScore> ok_scores;
    for (const auto& s : scored) {
        ojson r;
        r["index"] = s.index;
        r["task_id"] = s.task_id;
        r["flag"] = s.flag.empty() ? ojson(nullptr) : ojson(s.flag);
        ojson violations = ojson::array();
        for (auto v : s.parsed.verdict.violations) violations.push_back(std::string(violation_code(v)));
        r["well_formed"] = s.parsed.verdict.well_formed;
        r["violations"] = violations;
        r["steps"] = s.parsed.trace.steps.size();
        r["zoom_count"] = s.parsed.trace.zoom_count();
        const auto ans = s.parsed.trace.answer();
        r["answer"] = ans ? ojson(*ans) : ojson(nullptr);
        if (s.flag.empty()) {
            ok_scores.push_back(s.score);
            r["answer_correct"] = s.score.answer_correct;
            r["best_coverage"] = s.score.best_coverage ? ojson(*s.score.best_coverage) : ojson(nullptr);
            r["reward"] = {{"r_acc", s.breakdown.r_acc},
                           {"r_fmt", s.breakdown.r_fmt},
                           {"r_fid_bar", s.breakdown.r_fid_bar},
                           {"r_total", s.breakdown.r_total},
                           {"per_step_fid", doubles(s.breakdown.per_step_fid)},
                           {"per_step_penalty", doubles(s.breakdown.per_step_penalty)},
                           {"per_step_iou", doubles(s.breakdown.per_step_iou)}};
            r["advantage"] = s.advantage;
            ojson steps = ojson::array();
            for (const auto& a : s.step_advantages)
                steps.push_back({{"step", a.step}, {"class", std::string(step_class_name(a.cls))}, {"a_hat", a.a_hat}});
            r["step_advantages"] = steps;
        }
        rows.push_back(std::move(r));
    }

    if (ok_scores.empty()) {
        print_error(err, "empty-corpus", "no trace could be scored (" + std::to_string(inputs.size()) + " read, " +
                                             std::to_string(warnings) + " flagged)");
        return kExitFailure;
    }
    const auto report = metrics::aggregate(ok_scores);
    const auto diag = metrics::diagnose(report);

    ojson rep;
    rep["reward_mode"] = std::string(reward_mode_name(cfg.reward.mode));
    rep["traces"] = inputs.size();
    rep["scored"] = ok_scores.size();
    rep["flagged"] = warnings;
    rep["acc_ans"] = report.acc_ans;
    rep["acc_rat"] = report.acc_rat;
    rep["acc_rat_undefined"] = report.acc_rat_undefined;
    rep["c_rat"] = report.c_rat;
    rep["f1"] = report.f1;
    rep["quadrants"] = {{"right_with", report.quadrants.right_with},
                        {"right_without", report.quadrants.right_without},
                        {"wrong_with", report.quadrants.wrong_with},
                        {"wrong_without", report.quadrants.wrong_without}};
    rep["illusion_index"] = diag.illusion_index;
    rep["diagnostics"] = diag.warnings;

    io::CsvTable csv;
    csv.header = {"reward_mode", "traces", "scored", "flagged", "acc_ans", "acc_rat", "c_rat", "f1",
                  "right_with", "right_without", "wrong_with", "wrong_without", "illusion_index"};
    csv.rows.push_back({std::string(reward_mode_name(cfg.reward.mode)), std::to_string(inputs.size()),
                        std::to_string(ok_scores.size()), std::to_string(warnings), io::format_double(report.acc_ans),
                        io::format_double(report.acc_rat), io::format_double(report.c_rat),
                        io::format_double(report.f1), std::to_string(report.quadrants.right_with),
                        std::to_string(report.quadrants.right_without), std::to_string(report.quadrants.wrong_with),
                        std::to_string(report.quadrants.wrong_without), io::format_double(diag.illusion_index)});
    try {
        io::write_atomic(out_dir / "scores.jsonl", dump_jsonl(rows));
        io::write_atomic(out_dir / "report.json", rep.dump(2) + "\n");
        io::write_atomic(out_dir / "report.csv", csv.str());
    } catch (const Error& e) {
        return fail(err, e);
    }
    out << "scored " << ok_scores.size() << "/" << inputs.size() << " traces: acc_ans=" << report.acc_ans
        << " acc_rat=" << report.acc_rat << " c_rat=" << report.c_rat << " f1=" << report.f1 << "\n";
    if (warnings) err << "warning: " << warnings << " trace(s) flagged (see \"flag\" in scores.jsonl)\n";
    return kExitOk;
}

// ---------------------------------------------------------------- train-sim

const std::vector<std::string>& training_log_columns() {
    static const std::vector<std::string> cols = {
        "reward_mode",  "seed",          "iteration",       "answer_accuracy",    "rationale_count",
        "rationale_accuracy", "best_coverage", "wrong_with_rationale", "mean_reward", "mean_fid_bar",
        "h0",           "episodes",      "zooms",           "groups_drawn",       "groups_kept",
        "max_zooms",    "max_abs_advantage_sum"};
    return cols;
}

namespace {

io::CsvTable log_table(const sim::TrainingLog& log) {
    io::CsvTable t;
    t.header = training_log_columns();
    const std::string mode(reward_mode_name(log.mode));
    for (const auto& r : log.rows) {
        t.rows.push_back({mode, std::to_string(log.seed), std::to_string(r.iteration),
                          io::format_double(r.answer_accuracy), io::format_double(r.rationale_count),
                          io::format_double(r.rationale_accuracy), io::format_double(r.best_coverage),
                          io::format_double(r.wrong_with_rationale), io::format_double(r.mean_reward),
                          io::format_double(r.mean_fid_bar), io::format_double(r.h0), std::to_string(r.episodes),
                          std::to_string(r.zooms), std::to_string(r.groups_drawn), std::to_string(r.groups_kept),
                          std::to_string(r.max_zooms), io::format_double(r.max_abs_advantage_sum)});
    }
    return t;
}

ojson summary_json(const sim::FinalSummary& f) {
    return {{"answer_accuracy", f.answer_accuracy},   {"rationale_count", f.rationale_count},
            {"rationale_accuracy", f.rationale_accuracy}, {"best_coverage", f.best_coverage},
            {"wrong_with_rationale", f.wrong_with_rationale}, {"mean_reward", f.mean_reward}};
}

}  // namespace

int cmd_train_sim(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
    ojson manifest;
    manifest["command"] = "train-sim";
    manifest["seed"] = cfg.seed;
    manifest["config"] = config_to_json(cfg);
    manifest["runs"] = ojson::array();
    for (auto mode : cfg.train_modes) {
        const std::string name(reward_mode_name(mode));
        sim::TrainingLog log;
        try {
            log = sim::run_experiment(experiment_config(cfg, mode));
        } catch (const Error& e) {
            return fail(err, e);
        }
        const std::size_t window = std::max<std::size_t>(1, log.rows.size() / 10);
        const auto fin = log.final_summary(window);
        ojson run;
        run["reward_mode"] = name;
        run["log"] = "train_" + name + ".csv";
        run["iterations"] = log.rows.size();
        run["final_window"] = window;
        run["final"] = summary_json(fin);
        run["final_params"] = doubles(log.final_params.flatten());
        try {
            io::write_atomic(out_dir / ("train_" + name + ".csv"), log_table(log).str());
            if (!log.traces.empty()) {
                std::vector<ojson> trace_rows, task_rows;
                std::set<std::string> seen;
                for (const auto& t : log.traces) {
                    TraceConfig tc = cfg.trace;
                    tc.image_bounds = t.task.bounds;
                    auto rec = trace_record(t.task_id, t.raw, parse_trace(t.raw, tc));
                    rec["iteration"] = t.iteration;
                    trace_rows.push_back(std::move(rec));
                    if (seen.insert(t.task_id).second) task_rows.push_back(ojson(io::task_to_json(t.task)));
                }
                io::write_atomic(out_dir / ("traces_" + name + ".jsonl"), dump_jsonl(trace_rows));
                io::write_atomic(out_dir / ("tasks_" + name + ".jsonl"), dump_jsonl(task_rows));
                run["traces"] = "traces_" + name + ".jsonl";
                run["tasks"] = "tasks_" + name + ".jsonl";
            }
        } catch (const Error& e) {
            return fail(err, e);
        }
        out << name << ": final answer_accuracy=" << fin.answer_accuracy << " rationale_count=" << fin.rationale_count
            << " rationale_accuracy=" << fin.rationale_accuracy << "\n";
        manifest["runs"].push_back(std::move(run));
    }
    try {
        io::write_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
    } catch (const Error& e) {
        return fail(err, e);
    }
    return kExitOk;
}

// ---------------------------------------------------------------- curate

int cmd_curate(const RunConfig& cfg, const fs::path& records_path, const fs::path& out_dir, std::ostream& out,
               std::ostream& err) {
    std::vector<json> lines;
    try {
        lines = io::read_jsonl(records_path);
    } catch (const Error& e) {
        return fail(err, e);
    }
    std::vector<datapipe::RegionRecord> records;
    std::vector<datapipe::Rejection> load_rejections;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            auto r = datapipe::record_from_json(lines[i]);
            if (!ids.insert(r.id).second) throw Error("duplicate-record", "record id '" + r.id + "' repeats");
            records.push_back(std::move(r));
        } catch (const Error& e) {
            load_rejections.push_back({"line " + std::to_string(i + 1), "load", e.code() + ": " + e.what()});
        }
    }

    datapipe::PipelineResult res;
    try {
        res = datapipe::run_synthetic_pipeline(records, cfg.datapipe, cfg.seed);
    } catch (const Error& e) {
        return fail(err, e);
    }
    auto manifest = res.manifest;
    manifest.stage_counts.insert(manifest.stage_counts.begin(), {"input", lines.size()});
    manifest.rejections.insert(manifest.rejections.begin(), load_rejections.begin(), load_rejections.end());

    std::vector<ojson> rows;
    for (const auto& t : res.tasks) rows.push_back(ojson(io::task_to_json(t)));
    auto mj = manifest.to_json();
    ojson full;
    full["command"] = "curate";
    for (auto& [k, v] : mj.items()) full[k] = v;
    full["datapipe"] = config_to_json(cfg)["datapipe"];
    try {
        io::write_atomic(out_dir / "tasks.jsonl", dump_jsonl(rows));
        io::write_atomic(out_dir / "manifest.json", full.dump(2) + "\n");
    } catch (const Error& e) {
        return fail(err, e);
    }
    out << "curated " << res.tasks.size() << " task(s) from " << lines.size() << " record(s)\n";
    if (!load_rejections.empty())
        err << "warning: " << load_rejections.size() << " record(s) failed to load (see manifest.json)\n";
    return kExitOk;
}

// ---------------------------------------------------------------- report

int cmd_report(const std::vector<fs::path>& logs, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
    if (logs.empty()) {
        print_error(err, "no-logs", "report needs at least one training log");
        return kExitUsage;
    }
    struct Loaded {
        std::string key;
        io::CsvTable table;
    };
    std::vector<Loaded> loaded;
    const auto& expected = training_log_columns();
    try {
        for (const auto& p : logs) {
            auto table = io::parse_csv(io::read_file(p), p.string());
            if (table.header != expected)
                throw Error("schema-mismatch", p.string() + ": header does not match the training-log schema");
            std::string key = table.rows.empty() ? p.stem().string() : table.rows.front()[0];
            for (const auto& row : table.rows)
                if (row[0] != key && !table.rows.empty())
                    throw Error("schema-mismatch", p.string() + ": mixes reward modes within one log");
            loaded.push_back({std::move(key), std::move(table)});
        }
    } catch (const Error& e) {
        return fail(err, e);
    }

    // Repeated modes (e.g. several seeds) get the seed appended to stay distinct.
    std::map<std::string, int> uses;
    for (const auto& l : loaded) ++uses[l.key];
    for (auto& l : loaded)
        if (uses[l.key] > 1 && !l.table.rows.empty()) l.key += "_seed" + l.table.rows.front()[1];

    std::size_t n = loaded.front().table.rows.size();
    for (const auto& l : loaded) n = std::min(n, l.table.rows.size());
    for (const auto& l : loaded)
        if (l.table.rows.size() != n)
            err << "warning: " << l.key << " has " << l.table.rows.size() << " iterations; truncating to " << n << "\n";

    const std::size_t first_metric = 3;  // after reward_mode, seed, iteration
    try {
        for (std::size_t c = first_metric; c < expected.size(); ++c) {
            io::CsvTable t;
            t.header = {"iteration"};
            for (const auto& l : loaded) t.header.push_back(l.key);
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<std::string> row = {loaded.front().table.rows[i][2]};
                for (const auto& l : loaded) {
                    if (l.table.rows[i][2] != row[0])
                        throw Error("schema-mismatch", l.key + ": iteration column is not aligned at row " +
                                                           std::to_string(i + 1));
                    row.push_back(l.table.rows[i][c]);
                }
                t.rows.push_back(std::move(row));
            }
            io::write_atomic(out_dir / (expected[c] + ".csv"), t.str());
        }
    } catch (const Error& e) {
        return fail(err, e);
    }
    out << "merged " << loaded.size() << " log(s) over " << n << " iteration(s) into " << out_dir.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- make-records

int cmd_make_records(std::size_t n, std::uint64_t seed, const fs::path& out_file, std::ostream& out,
                     std::ostream& err) {
    std::string text;
    for (const auto& r : datapipe::synthetic_records(n, seed)) {
        text += datapipe::record_to_json(r).dump();
        text += '\n';
    }
    try {
        io::write_atomic(out_file, text);
    } catch (const Error& e) {
        return fail(err, e);
    }
    out << "wrote " << n << " record(s) to " << out_file.string() << "\n";
    return kExitOk;
}

}  // namespace virl::cli
