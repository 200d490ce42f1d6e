// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "virl/commands.hpp"
#include "virl/datapipe.hpp"
#include "virl/io.hpp"

using namespace virl;
using namespace virl::cli;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("virl_test_cli_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

const char* kZoomGood = R"({"name":"image_zoom_in","arguments":{"box":[2,2,6,6]}})";
const char* kZoomFar = R"({"name":"image_zoom_in","arguments":{"box":[10,10,12,12]}})";

std::string zoom_answer(const char* zoom, const char* answer) {
    return std::string("<think>look</think> <tool_call>") + zoom + "</tool_call><think>so</think> <answer>" + answer +
           "</answer>";
}

void write_tasks(const fs::path& p) {
    Task t;
    t.task_id = "t1";
    t.question = "Which?";
    t.choices = {"A", "B", "C", "D"};
    t.key = "B";
    t.rationale = {2, 2, 6, 6};
    t.bounds = Box{0, 0, 16, 16};
    io::write_atomic(p, io::to_jsonl({io::task_to_json(t)}));
}

void write_traces(const fs::path& p, const std::vector<std::pair<std::string, std::string>>& rows) {
    std::vector<json> lines;
    for (const auto& [id, raw] : rows) lines.push_back({{"task_id", id}, {"raw_text", raw}});
    io::write_atomic(p, io::to_jsonl(lines));
}

json error_line(const std::string& err) {
    const auto first = err.substr(0, err.find('\n'));
    return json::parse(first);
}

RunConfig small_config() {
    RunConfig c;
    c.seed = 4;
    c.sim.iterations = 4;
    c.sim.batch_size = 4;
    c.sim.group_size = 6;
    c.dump_last_iterations = 1;
    return c;
}

}  // namespace

TEST_CASE("score writes per-trace rows and a report") {
    TempDir d("score");
    write_tasks(d.path / "tasks.jsonl");
    write_traces(d.path / "traces.jsonl", {{"t1", zoom_answer(kZoomGood, "B")},
                                           {"t1", zoom_answer(kZoomFar, "B")},
                                           {"t1", "<think>guess</think> <answer>A</answer>"}});
    std::ostringstream out, err;
    REQUIRE(cmd_score(RunConfig{}, d.path / "traces.jsonl", d.path / "tasks.jsonl", d.path / "out", out, err) == kExitOk);
    const auto rows = io::read_jsonl(d.path / "out" / "scores.jsonl");
    REQUIRE(rows.size() == 3);
    CHECK(rows[0]["answer_correct"] == true);
    CHECK(rows[0]["best_coverage"].get<double>() == 1.0);
    CHECK(rows[2]["best_coverage"].is_null());
    double sum = 0;
    for (const auto& r : rows) sum += r["advantage"].get<double>();
    CHECK(std::abs(sum) <= 1e-12);
    CHECK(rows[0]["advantage"].get<double>() > rows[1]["advantage"].get<double>());
    const auto rep = json::parse(io::read_file(d.path / "out" / "report.json"));
    CHECK(rep["traces"] == 3);
    CHECK(rep["scored"] == 3);
    CHECK(rep["flagged"] == 0);
    CHECK(rep["acc_ans"].get<double>() == doctest::Approx(2.0 / 3.0));
    CHECK(fs::exists(d.path / "out" / "report.csv"));
}

TEST_CASE("score flags traces whose task is missing") {
    TempDir d("score_missing");
    write_tasks(d.path / "tasks.jsonl");
    write_traces(d.path / "traces.jsonl", {{"t1", zoom_answer(kZoomGood, "B")}, {"nope", zoom_answer(kZoomGood, "B")}});
    std::ostringstream out, err;
    REQUIRE(cmd_score(RunConfig{}, d.path / "traces.jsonl", d.path / "tasks.jsonl", d.path / "out", out, err) == kExitOk);
    const auto rows = io::read_jsonl(d.path / "out" / "scores.jsonl");
    REQUIRE(rows.size() == 2);
    CHECK(rows[1]["flag"] == "missing-task");
    CHECK(json::parse(io::read_file(d.path / "out" / "report.json"))["flagged"] == 1);
}

TEST_CASE("score input failures print one JSON error line") {
    TempDir d("score_bad");
    write_tasks(d.path / "tasks.jsonl");
    io::write_atomic(d.path / "broken.jsonl", "{\"task_id\": \"t1\", \"raw_text\": \"x\"}\n{oops\n");
    std::ostringstream out, err;
    CHECK(cmd_score(RunConfig{}, d.path / "broken.jsonl", d.path / "tasks.jsonl", d.path / "out", out, err) != kExitOk);
    CHECK(error_line(err.str())["error"] == "malformed-jsonl");

    std::ostringstream out2, err2;
    CHECK(cmd_score(RunConfig{}, d.path / "absent.jsonl", d.path / "tasks.jsonl", d.path / "out", out2, err2) != kExitOk);
    CHECK(error_line(err2.str()).contains("message"));

    write_traces(d.path / "orphans.jsonl", {{"nope", "<think>x</think> <answer>A</answer>"}});
    std::ostringstream out3, err3;
    CHECK(cmd_score(RunConfig{}, d.path / "orphans.jsonl", d.path / "tasks.jsonl", d.path / "out", out3, err3) != kExitOk);
    CHECK(error_line(err3.str())["error"] == "empty-corpus");
}

TEST_CASE("train-sim writes one log per mode and is reproducible") {
    TempDir d("train");
    const auto cfg = small_config();
    std::ostringstream out, err;
    REQUIRE(cmd_train_sim(cfg, d.path / "a", out, err) == kExitOk);
    REQUIRE(cmd_train_sim(cfg, d.path / "b", out, err) == kExitOk);
    for (const char* mode : {"outcome_only", "naive_stepwise", "virl"}) {
        const auto name = std::string("train_") + mode + ".csv";
        const auto text = io::read_file(d.path / "a" / name);
        CHECK(text == io::read_file(d.path / "b" / name));
        const auto table = io::parse_csv(text);
        CHECK(table.header == training_log_columns());
        CHECK(table.rows.size() == cfg.sim.iterations);
        CHECK(io::read_file(d.path / "a" / (std::string("traces_") + mode + ".jsonl")) ==
              io::read_file(d.path / "b" / (std::string("traces_") + mode + ".jsonl")));
    }
    CHECK(io::read_file(d.path / "a" / "manifest.json") == io::read_file(d.path / "b" / "manifest.json"));
}

TEST_CASE("curate handles empty input and keeps stage counts monotone") {
    TempDir d("curate");
    io::write_atomic(d.path / "empty.jsonl", "");
    std::ostringstream out, err;
    REQUIRE(cmd_curate(RunConfig{}, d.path / "empty.jsonl", d.path / "e", out, err) == kExitOk);
    CHECK(io::read_file(d.path / "e" / "tasks.jsonl").empty());

    REQUIRE(cmd_make_records(120, 8, d.path / "records.jsonl", out, err) == kExitOk);
    REQUIRE(cmd_curate(RunConfig{}, d.path / "records.jsonl", d.path / "c", out, err) == kExitOk);
    const auto manifest = nlohmann::ordered_json::parse(io::read_file(d.path / "c" / "manifest.json"));
    std::size_t prev = SIZE_MAX;
    for (const auto& [stage, n] : manifest["stage_counts"].items()) {
        CHECK_MESSAGE(n.get<std::size_t>() <= prev, stage);
        prev = n.get<std::size_t>();
    }
    CHECK(manifest["stage_counts"]["input"] == 120);
    CHECK(io::read_jsonl(d.path / "c" / "tasks.jsonl").size() == prev);
}

TEST_CASE("curate logs records that fail to load") {
    TempDir d("curate_bad");
    std::ostringstream out, err;
    REQUIRE(cmd_make_records(3, 2, d.path / "records.jsonl", out, err) == kExitOk);
    auto text = io::read_file(d.path / "records.jsonl");
    text += "{\"id\": 7}\n";
    io::write_atomic(d.path / "records.jsonl", text);
    std::ostringstream out2, err2;
    REQUIRE(cmd_curate(RunConfig{}, d.path / "records.jsonl", d.path / "c", out2, err2) == kExitOk);
    CHECK(err2.str().find("warning") != std::string::npos);
    const auto manifest = json::parse(io::read_file(d.path / "c" / "manifest.json"));
    CHECK(manifest["rejections"][0]["stage"] == "load");
}

TEST_CASE("report merges aligned logs and truncates mismatched ones") {
    TempDir d("report");
    auto cfg = small_config();
    cfg.dump_last_iterations = 0;
    std::ostringstream out, err;
    REQUIRE(cmd_train_sim(cfg, d.path / "run", out, err) == kExitOk);
    const auto log = [&](const char* m) { return d.path / "run" / (std::string("train_") + m + ".csv"); };

    REQUIRE(cmd_report({log("virl")}, d.path / "one", out, err) == kExitOk);
    const auto single = io::parse_csv(io::read_file(d.path / "one" / "answer_accuracy.csv"));
    CHECK(single.header == std::vector<std::string>{"iteration", "virl"});
    CHECK(single.rows.size() == cfg.sim.iterations);

    REQUIRE(cmd_report({log("outcome_only"), log("naive_stepwise"), log("virl")}, d.path / "three", out, err) == kExitOk);
    const auto merged = io::parse_csv(io::read_file(d.path / "three" / "rationale_count.csv"));
    CHECK(merged.header == std::vector<std::string>{"iteration", "outcome_only", "naive_stepwise", "virl"});

    auto shorter = io::parse_csv(io::read_file(log("virl")));
    shorter.rows.pop_back();
    io::write_atomic(d.path / "short.csv", shorter.str());
    std::ostringstream out2, err2;
    REQUIRE(cmd_report({log("outcome_only"), d.path / "short.csv"}, d.path / "trunc", out2, err2) == kExitOk);
    CHECK(err2.str().find("truncating") != std::string::npos);
    CHECK(io::parse_csv(io::read_file(d.path / "trunc" / "answer_accuracy.csv")).rows.size() == cfg.sim.iterations - 1);

    io::write_atomic(d.path / "alien.csv", "a,b\n1,2\n");
    std::ostringstream out3, err3;
    CHECK(cmd_report({log("virl"), d.path / "alien.csv"}, d.path / "bad", out3, err3) != kExitOk);
    CHECK(error_line(err3.str())["error"] == "schema-mismatch");

    std::ostringstream out4, err4;
    CHECK(cmd_report({}, d.path / "none", out4, err4) == kExitUsage);
}

TEST_CASE("make-records output is deterministic and parseable") {
    TempDir d("records");
    std::ostringstream out, err;
    REQUIRE(cmd_make_records(25, 11, d.path / "a.jsonl", out, err) == kExitOk);
    REQUIRE(cmd_make_records(25, 11, d.path / "b.jsonl", out, err) == kExitOk);
    CHECK(io::read_file(d.path / "a.jsonl") == io::read_file(d.path / "b.jsonl"));
    const auto lines = io::read_jsonl(d.path / "a.jsonl");
    REQUIRE(lines.size() == 25);
    for (const auto& j : lines) CHECK_NOTHROW(datapipe::record_from_json(j));
}

TEST_CASE("executable exit codes") {
    TempDir d("exe");
    const std::string exe = VIRL_CLI_PATH;
    const auto run = [&](const std::string& args) {
        const auto cmd = exe + " " + args + " >" + (d.path / "stdout").string() + " 2>" + (d.path / "stderr").string();
        const int rc = std::system(cmd.c_str());
        return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    };
    CHECK(run("config") == kExitOk);
    CHECK(json::parse(io::read_file(d.path / "stdout")).contains("sim"));
    CHECK(run("--no-such-flag config") == kExitUsage);

    io::write_atomic(d.path / "bad.json", R"({"reward": {"fidelity": {"h0": 2}}})");
    CHECK(run("--config " + (d.path / "bad.json").string() + " config") == kExitUsage);
    const auto e = error_line(io::read_file(d.path / "stderr"));
    CHECK(e["error"] == "invalid-config");
    CHECK(e["message"].get<std::string>().find("reward.fidelity.h0") != std::string::npos);

    CHECK(run("--out " + d.path.string() + " score --traces " + (d.path / "nope.jsonl").string() + " --tasks " +
              (d.path / "nope.jsonl").string()) == kExitFailure);
    CHECK(error_line(io::read_file(d.path / "stderr")).contains("error"));
}
