// SPDX-License-Identifier: Apache-2.0
// virl: command-line driver for scoring, simulated training, curation and reporting.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "virl/commands.hpp"
#include "virl/config.hpp"
#include "virl/error.hpp"
#include "virl/io.hpp"
#include "virl/prompts.hpp"

namespace {

struct GlobalFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string reward_mode;
    std::string prompt_template;
    std::string out;
};

// Config file (or defaults) with command-line overrides, validated once more
// after the overrides are applied.
virl::RunConfig resolve(const GlobalFlags& g) {
    virl::RunConfig c = g.config.empty() ? virl::RunConfig{} : virl::load_config(g.config);
    if (g.seed) c.seed = *g.seed;
    if (!g.reward_mode.empty()) {
        const auto m = virl::reward_mode_from_name(g.reward_mode);
        if (!m) throw virl::Error("invalid-config", "--reward-mode: unknown mode '" + g.reward_mode + "'");
        c.reward.mode = *m;
        c.train_modes = {*m};
    }
    if (!g.prompt_template.empty()) c.sim.prompt = virl::prompt_template_from_name(g.prompt_template);
    if (!g.out.empty()) c.paths.out_dir = g.out;
    const auto problems = virl::config_problems(c);
    if (!problems.empty()) {
        std::string msg = "invalid config:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw virl::Error("invalid-config", msg);
    }
    return c;
}

std::string pick(const std::string& flag, const std::string& from_config, const char* name) {
    const auto& v = flag.empty() ? from_config : flag;
    if (v.empty()) throw virl::Error("invalid-config", std::string("missing --") + name + " (or paths." + name + ")");
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"virl: process-grounded rewards for zoom-in reasoning traces"};
    app.require_subcommand(1);
    GlobalFlags g;
    app.add_option("--config", g.config, "Run config (JSON)")->option_text("PATH");
    app.add_option("--seed", g.seed, "Override the config seed");
    app.add_option("--reward-mode", g.reward_mode, "outcome_only | naive_stepwise | virl")
        ->check(CLI::IsMember({"outcome_only", "naive_stepwise", "virl"}));
    app.add_option("--prompt-template", g.prompt_template, "clear | ambiguous")
        ->check(CLI::IsMember({"clear", "ambiguous"}));
    app.add_option("--out", g.out, "Output directory (default: paths.out_dir)");

    std::string traces, tasks, records;
    auto* score = app.add_subcommand("score", "Score traces against tasks");
    score->add_option("--traces", traces, "Trace JSON-lines");
    score->add_option("--tasks", tasks, "Task JSON-lines");

    auto* train = app.add_subcommand("train-sim", "Train the toy policy under each reward mode");

    auto* curate = app.add_subcommand("curate", "Run the curation pipeline over region records");
    curate->add_option("--records", records, "Region-record JSON-lines");

    std::vector<std::string> logs;
    auto* report = app.add_subcommand("report", "Merge training logs into per-metric CSVs");
    report->add_option("logs", logs, "Training-log CSVs")->required();

    std::size_t n_records = 500;
    std::string records_out;
    auto* make = app.add_subcommand("make-records", "Write a synthetic region-record corpus");
    make->add_option("--n", n_records, "Number of records");
    make->add_option("--file", records_out, "Output file (default: <out>/records.jsonl)");

    auto* show = app.add_subcommand("config", "Print the effective config");

    auto* prompt = app.add_subcommand("prompt", "Render the prompt template for each task");
    prompt->add_option("--tasks", tasks, "Task JSON-lines");

    for (auto* sub : {score, train, curate, report, make, show, prompt}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : virl::cli::kExitUsage;
    }

    using namespace virl::cli;
    try {
        const auto cfg = resolve(g);
        const fs::path out_dir = cfg.paths.out_dir;
        if (*score) return cmd_score(cfg, pick(traces, cfg.paths.traces, "traces"), pick(tasks, cfg.paths.tasks, "tasks"),
                                     out_dir, std::cout, std::cerr);
        if (*train) return cmd_train_sim(cfg, out_dir, std::cout, std::cerr);
        if (*curate) return cmd_curate(cfg, pick(records, cfg.paths.records, "records"), out_dir, std::cout, std::cerr);
        if (*report) {
            std::vector<fs::path> paths(logs.begin(), logs.end());
            return cmd_report(paths, out_dir, std::cout, std::cerr);
        }
        if (*make) {
            const fs::path file = records_out.empty() ? out_dir / "records.jsonl" : fs::path(records_out);
            return cmd_make_records(n_records, cfg.seed, file, std::cout, std::cerr);
        }
        if (*show) {
            std::cout << virl::config_to_json(cfg).dump(2) << "\n";
            return kExitOk;
        }
        if (*prompt) {
            for (const auto& j : virl::io::read_jsonl(pick(tasks, cfg.paths.tasks, "tasks"))) {
                const auto t = virl::io::task_from_json(j);
                nlohmann::ordered_json row;
                row["task_id"] = t.task_id;
                row["template"] = std::string(virl::prompt_template_name(cfg.sim.prompt));
                row["prompt"] = virl::render_prompt(cfg.sim.prompt, t);
                std::cout << row.dump() << "\n";
            }
            return kExitOk;
        }
    } catch (const virl::Error& e) {
        print_error(std::cerr, e.code(), e.what());
        return e.code() == "invalid-config" ? kExitUsage : kExitFailure;
    } catch (const std::exception& e) {
        print_error(std::cerr, "internal", e.what());
        return kExitFailure;
    }
    return kExitUsage;
}
