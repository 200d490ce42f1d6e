// SPDX-License-Identifier: Apache-2.0
// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "virl/commands.hpp"
#include "virl/config.hpp"
#include "virl/credit.hpp"
#include "virl/datapipe.hpp"
#include "virl/geom.hpp"
#include "virl/io.hpp"
#include "virl/metrics.hpp"
#include "virl/reward.hpp"
#include "virl/sim.hpp"
#include "virl/trace.hpp"

using namespace virl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;
};

// Records the first failure message; later ones only count.
struct Checker {
    std::size_t cases = 0;
    std::size_t failures = 0;
    std::string first;
    void expect(bool cond, const std::string& what) {
        if (cond) return;
        if (failures++ == 0) first = what;
    }
    Outcome done(const std::string& extra = {}) const {
        std::ostringstream s;
        s << cases << " cases";
        if (!extra.empty()) s << ", " << extra;
        if (failures) s << ", " << failures << " failure(s), first: " << first;
        return {failures == 0, s.str()};
    }
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<ZoomAction> zooms(const std::vector<Box>& boxes) {
    std::vector<ZoomAction> v;
    for (const auto& b : boxes) v.push_back({"image_zoom_in", b});
    return v;
}

Outcome reference_f1() {
    Checker c;
    const double rows[4][3] = {{0.904, 0.873, 0.88}, {0.714, 0.282, 0.40}, {0.889, 0.782, 0.83}, {0.799, 0.473, 0.59}};
    std::string got;
    for (const auto& r : rows) {
        ++c.cases;
        const double f = metrics::f1(r[0], r[1]);
        got += (got.empty() ? "" : " ") + fmt(f);
        c.expect(std::abs(f - r[2]) <= 0.01, "f1(" + fmt(r[0]) + ", " + fmt(r[1]) + ") = " + fmt(f));
    }
    return c.done("f1 " + got);
}

Outcome fidelity_staircase() {
    Checker c;
    auto rng = make_rng(1001, "accept-stairs");
    for (int i = 0; i < 1000; ++i) {
        ++c.cases;
        FidelityParams p{oracle::uni(rng, 0.1, 2), oracle::uni(rng, 0, 0.8), oracle::uni(rng, 0.05, 0.9), 0};
        p.dh = oracle::uni(rng, 0.02, (1 - p.h0) / 2);
        const double a = uniform01(rng), b = uniform01(rng);
        c.expect(step_fidelity(std::min(a, b), p) <= step_fidelity(std::max(a, b), p), "not monotone");
        c.expect((step_fidelity(a, p) > 0) == (a > p.h0), "sign boundary misplaced");
        c.expect(step_fidelity(p.h0, p) == 0.0, "nonzero at the threshold");
        c.expect(step_fidelity(a, p) < 0 || a >= p.h0, "positive below the threshold");
        const double u = p.h0 + oracle::uni(rng, 0.1, 0.9) * p.dh;
        c.expect(std::abs(step_fidelity(u + p.dh, p) - step_fidelity(u, p) - p.eta) <= 1e-9, "increment is not eta");

        // Classification agrees with the sign of the step reward.
        Trace t;
        t.steps.push_back({"z", ZoomAction{"image_zoom_in", {0, 0, 1, 1}}});
        t.steps.push_back({"a", Answer{"A"}});
        RewardBreakdown br;
        br.per_step_fid = {step_fidelity(a, p)};
        const auto cls = classify_steps(t, br);
        c.expect(cls[0] == (a > p.h0 ? StepClass::good_visual : StepClass::bad_visual), "classification disagrees");
        c.expect(cls[1] == StepClass::textual, "answer step not textual");
    }
    return c.done();
}

Outcome trajectory_oracle() {
    Checker c;
    auto rng = make_rng(1002, "accept-trajectory");
    double worst = 0;
    for (int i = 0; i < 10000; ++i) {
        ++c.cases;
        const Box gt = oracle::random_positive_box(rng);
        const auto boxes = oracle::random_zooms(rng, gt, static_cast<std::size_t>(uniform_int(rng, 0, 6)));
        FidelityParams fp{oracle::uni(rng, 0.1, 2), oracle::uni(rng, 0, 1), oracle::uni(rng, 0.05, 0.9), 0};
        fp.dh = oracle::uni(rng, 0.02, 0.5);
        const RedundancyParams rp{uniform_int(rng, 0, 4), oracle::uni(rng, 0, 1), oracle::uni(rng, 0.3, 0.95)};
        const auto got = trajectory_fidelity(zooms(boxes), gt, fp, rp);
        const auto want = oracle::trajectory_fidelity(boxes, gt, fp, rp);
        const double err = std::abs(got.r_fid_bar - want.r_fid_bar);
        worst = std::max(worst, err);
        c.expect(err <= 1e-9, "mean term differs by " + std::to_string(err));
        c.expect(got.per_step_fid.size() == boxes.size(), "per-step length");
        for (std::size_t k = 0; k < boxes.size() && k < got.per_step_fid.size(); ++k) {
            c.expect(std::abs(got.per_step_fid[k] - want.fid[k]) <= 1e-9, "step term differs");
            c.expect(std::abs(got.per_step_penalty[k] - want.penalty[k]) <= 1e-9, "penalty differs");
        }
    }
    char buf[48];
    std::snprintf(buf, sizeof buf, "max error %.3g", worst);
    return c.done(buf);
}

Outcome advantage_zero_sum() {
    Checker c;
    auto rng = make_rng(1003, "accept-advantage");
    for (int i = 0; i < 10000; ++i) {
        ++c.cases;
        std::vector<double> r(static_cast<std::size_t>(uniform_int(rng, 1, 16)));
        for (double& x : r) x = uniform_int(rng, 0, 3) == 0 ? double(uniform_int(rng, 0, 2)) : oracle::uni(rng, -3, 5);
        const auto a = group_advantages(r);
        const double sum = std::accumulate(a.begin(), a.end(), 0.0);
        c.expect(std::abs(sum) <= 1e-12 * double(r.size()), "sum " + std::to_string(sum));
    }
    return c.done();
}

Outcome modulator_ordering() {
    Checker c;
    auto rng = make_rng(1004, "accept-modulator");
    const std::vector<StepClass> classes = {StepClass::good_visual, StepClass::textual, StepClass::bad_visual};
    const ModulatorParams fixed;
    for (int i = 0; i < 10000; ++i) {
        ++c.cases;
        const ModulatorParams p =
            i % 2 ? fixed
                  : ModulatorParams{oracle::uni(rng, 1.001, 3), oracle::uni(rng, 0.01, 0.999),
                                    oracle::uni(rng, 0.01, 0.999), oracle::uni(rng, 1.001, 3)};
        const double a = (uniform_int(rng, 0, 1) ? 1 : -1) * oracle::uni(rng, 1e-6, 10);
        const auto prof = modulate(a, classes, p);
        const double good = prof.per_step[0].a_hat, text = prof.per_step[1].a_hat, bad = prof.per_step[2].a_hat;
        c.expect(text == a, "textual step modulated");
        if (a > 0)
            c.expect(good > text && text > bad, "positive ordering");
        else
            c.expect(std::abs(bad) > std::abs(text) && std::abs(text) > std::abs(good), "negative ordering");
        for (const auto& s : prof.per_step) c.expect(std::signbit(s.a_hat) == std::signbit(a), "sign flipped");
    }
    return c.done();
}

Outcome geometry_oracle() {
    Checker c;
    auto rng = make_rng(1005, "accept-geometry");
    for (int i = 0; i < 10000; ++i) {
        ++c.cases;
        std::vector<ScoredBox> cands(static_cast<std::size_t>(uniform_int(rng, 0, 8)));
        for (auto& s : cands) {
            s.box = oracle::random_box(rng);
            s.score = uniform_int(rng, 0, 1) ? double(uniform_int(rng, 0, 3)) : uniform01(rng);
        }
        for (std::size_t p = 0; p < cands.size(); ++p)
            for (std::size_t q = 0; q < cands.size(); ++q) {
                const Box &a = cands[p].box, &b = cands[q].box;
                c.expect(std::abs(geom::iou(a, b) - oracle::iou(a, b)) <= 1e-9, "iou differs");
                if (b.area() > 0)
                    c.expect(std::abs(geom::coverage(a, b) - oracle::coverage(a, b)) <= 1e-9, "coverage differs");
            }
        const double thr = uniform_int(rng, 0, 1) ? 0.5 : uniform01(rng);
        c.expect(geom::nms_indices(cands, thr) == oracle::nms(cands, thr), "nms differs");
    }
    return c.done();
}

Outcome trace_round_trip() {
    Checker c;
    auto rng = make_rng(1006, "accept-trace");
    for (int i = 0; i < 1000; ++i) {
        ++c.cases;
        const Trace t = oracle::random_trace(rng, 6);
        const auto raw = render_trace(t);
        const auto p = parse_trace(raw);
        c.expect(p.verdict.well_formed, "rendered trace rejected");
        c.expect(p.trace == t, "parse(render(t)) != t");
        c.expect(render_trace(p.trace) == raw, "render not stable");
    }
    const fs::path dir = fs::path(VIRL_FIXTURES_DIR) / "malformed";
    const auto expected = nlohmann::json::parse(slurp(dir / "expected.json"));
    c.expect(expected.size() == 10, "fixture count");
    for (const auto& [file, code] : expected.items()) {
        ++c.cases;
        const auto p = parse_trace(slurp(dir / file));
        const auto v = violation_from_code(code.get<std::string>());
        c.expect(!p.verdict.well_formed && v && p.verdict.has(*v), file + " not flagged as " + code.get<std::string>());
    }
    return c.done();
}

Outcome surrogate_gradient() {
    Checker c;
    auto rng = make_rng(1007, "accept-gradient");
    const double h = 1e-6;
    int inside = 0, outside = 0;
    while (inside + outside < 100) {
        const double el = 0.2, eh = 0.28, a = (uniform_int(rng, 0, 1) ? 1 : -1) * oracle::uni(rng, 0.1, 5);
        // Alternate between points inside the trust band and points beyond either edge.
        const bool want_inside = (inside + outside) % 2 == 0;
        const double r = want_inside ? oracle::uni(rng, 1 - el + 1e-3, 1 + eh - 1e-3)
                                     : (uniform_int(rng, 0, 1) ? oracle::uni(rng, 0.2, 1 - el - 1e-3)
                                                               : oracle::uni(rng, 1 + eh + 1e-3, 2.5));
        ++c.cases;
        (want_inside ? inside : outside)++;
        const double fd = (clipped_surrogate(r + h, a, el, eh) - clipped_surrogate(r - h, a, el, eh)) / (2 * h);
        c.expect(std::abs(fd - clipped_surrogate_grad(r, a, el, eh)) <= 1e-4, "gradient mismatch at r=" + fmt(r));
    }
    return c.done(std::to_string(inside) + " inside, " + std::to_string(outside) + " outside");
}

Outcome training_dynamics() {
    Checker c;
    std::ostringstream detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        RunConfig cfg;
        cfg.seed = seed;
        sim::FinalSummary f[3];
        const RewardMode modes[3] = {RewardMode::outcome_only, RewardMode::naive_stepwise, RewardMode::virl};
        for (int m = 0; m < 3; ++m) f[m] = sim::run_experiment(experiment_config(cfg, modes[m])).final_summary(30);
        const auto& oo = f[0];
        const auto& nv = f[1];
        const auto& vr = f[2];
        ++c.cases;
        const auto tag = "seed " + std::to_string(seed) + ": ";
        c.expect(oo.rationale_count < 0.2, tag + "outcome_only rationale count " + fmt(oo.rationale_count));
        c.expect(nv.rationale_count > vr.rationale_count, tag + "naive count not above virl");
        c.expect(nv.rationale_accuracy < vr.rationale_accuracy, tag + "naive rationale accuracy not below virl");
        c.expect(vr.answer_accuracy > oo.answer_accuracy, tag + "virl answer accuracy not above outcome_only");
        c.expect(vr.rationale_accuracy > oo.rationale_accuracy, tag + "virl rationale accuracy not above outcome_only");
        detail << "\n    seed " << seed;
        const char* names[3] = {"outcome_only", "naive_stepwise", "virl"};
        for (int m = 0; m < 3; ++m)
            detail << " | " << names[m] << " ans=" << fmt(f[m].answer_accuracy) << " cnt=" << fmt(f[m].rationale_count)
                   << " rat=" << fmt(f[m].rationale_accuracy) << " cov=" << fmt(f[m].best_coverage);
    }
    auto out = c.done();
    out.detail += detail.str();
    return out;
}

Outcome curation_determinism() {
    Checker c;
    const auto dir = fs::temp_directory_path() / "virl_acceptance_curate";
    fs::remove_all(dir);
    std::ostringstream out, err;
    const RunConfig cfg;
    c.expect(cli::cmd_make_records(500, cfg.seed, dir / "records.jsonl", out, err) == cli::kExitOk, "make-records");
    c.expect(cli::cmd_curate(cfg, dir / "records.jsonl", dir / "a", out, err) == cli::kExitOk, "first curate");
    c.expect(cli::cmd_curate(cfg, dir / "records.jsonl", dir / "b", out, err) == cli::kExitOk, "second curate");
    std::size_t kept = 0;
    if (c.failures == 0) {
        for (const char* f : {"tasks.jsonl", "manifest.json"})
            c.expect(slurp(dir / "a" / f) == slurp(dir / "b" / f), std::string(f) + " differs between runs");
        const auto manifest = nlohmann::ordered_json::parse(slurp(dir / "a" / "manifest.json"));
        std::size_t prev = SIZE_MAX;
        for (const auto& [stage, n] : manifest["stage_counts"].items()) {
            c.expect(n.get<std::size_t>() <= prev, "stage count grows at " + stage);
            prev = n.get<std::size_t>();
        }
        for (const auto& j : io::read_jsonl(dir / "a" / "tasks.jsonl")) {
            ++c.cases;
            ++kept;
            const auto t = io::task_from_json(j);
            c.expect(t.choices.size() >= 4 && t.choices.size() <= 8, t.task_id + " has " + std::to_string(t.choices.size()) + " choices");
            bool has_key = true;
            try {
                key_index(t.key, t.choices);
            } catch (const std::exception&) {
                has_key = false;
            }
            c.expect(has_key, t.task_id + " key not among choices");
        }
        c.expect(kept > 0, "nothing kept");
    }
    fs::remove_all(dir);
    return c.done(std::to_string(kept) + " of 500 kept");
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        double budget_s;
        std::function<Outcome()> run;
    };
    const Criterion criteria[] = {
        {"reference F1 reconstruction", 1, reference_f1},
        {"step fidelity staircase", 5, fidelity_staircase},
        {"trajectory fidelity vs oracle", 10, trajectory_oracle},
        {"group advantages sum to zero", 5, advantage_zero_sum},
        {"modulator ordering and sign", 0, modulator_ordering},
        {"geometry and nms vs oracle", 0, geometry_oracle},
        {"trace parse/render round trip", 0, trace_round_trip},
        {"clipped surrogate gradient", 0, surrogate_gradient},
        {"training dynamics across modes", 120, training_dynamics},
        {"curation determinism", 10, curation_determinism},
    };
    int failed = 0, index = 0;
    for (const auto& cr : criteria) {
        ++index;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = cr.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (cr.budget_s > 0 && secs > cr.budget_s) {
            o.ok = false;
            o.detail += ", over the " + fmt(cr.budget_s) + " s budget";
        }
        std::printf("%s  %2d %-32s %.2fs  %s\n", o.ok ? "PASS" : "FAIL", index, cr.name, secs, o.detail.c_str());
        std::fflush(stdout);
        failed += !o.ok;
    }
    std::printf("%d/%d criteria passed\n", index - failed, index);
    return failed ? 1 : 0;
}
