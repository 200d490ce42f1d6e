// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "virl/error.hpp"
#include "virl/sim.hpp"

using namespace virl;
using namespace virl::sim;

namespace {

NeedleTask task_for(std::uint64_t seed, SimConfig cfg = {}) {
    auto rng = make_rng(seed, "test-task");
    return generate_task(rng, cfg);
}

bool sees(const ZoomView& v, int glyph) { return std::find(v.glyphs.begin(), v.glyphs.end(), glyph) != v.glyphs.end(); }

ExperimentConfig small(RewardMode mode, std::uint64_t seed = 3) {
    ExperimentConfig c;
    c.seed = seed;
    c.sim.iterations = 6;
    c.sim.batch_size = 6;
    c.sim.group_size = 8;
    c.sim.reward_mode = mode;
    c.dump_last_iterations = 1;
    return c;
}

bool same_log(const TrainingLog& a, const TrainingLog& b) {
    if (a.rows.size() != b.rows.size() || !(a.final_params == b.final_params) || a.traces.size() != b.traces.size())
        return false;
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        const auto& x = a.rows[i];
        const auto& y = b.rows[i];
        if (x.answer_accuracy != y.answer_accuracy || x.rationale_count != y.rationale_count ||
            x.rationale_accuracy != y.rationale_accuracy || x.mean_reward != y.mean_reward ||
            x.groups_drawn != y.groups_drawn)
            return false;
    }
    for (std::size_t i = 0; i < a.traces.size(); ++i)
        if (a.traces[i].raw != b.traces[i].raw) return false;
    return true;
}

}  // namespace

TEST_CASE("task generation is deterministic") {
    const auto a = task_for(7), b = task_for(7);
    CHECK(a.grid == b.grid);
    CHECK(a.gt == b.gt);
    CHECK(a.choices == b.choices);
    CHECK(a.hint_index == b.hint_index);
}

TEST_CASE("task invariants") {
    for (std::uint64_t s = 0; s < 200; ++s) {
        const auto t = task_for(s);
        CHECK(t.bounds().contains(t.gt));
        CHECK(t.key_index < t.choices.size());
        for (int y = 0; y < t.height; ++y)
            for (int x = 0; x < t.width; ++x) {
                const bool inside = x >= t.gt.x1 && x < t.gt.x2 && y >= t.gt.y1 && y < t.gt.y2;
                CHECK((t.glyph_at(x, y) == t.key()) == inside);
                CHECK(std::find(t.choices.begin(), t.choices.end(), t.glyph_at(x, y)) != t.choices.end());
            }
    }
}

TEST_CASE("hint channel follows p_hint") {
    SimConfig always;
    always.p_hint = 1.0;
    SimConfig never;
    never.p_hint = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto a = task_for(s, always);
        CHECK(a.hint_index == a.key_index);
        const auto n = task_for(s, never);
        CHECK(n.hint_index != n.key_index);
    }
}

TEST_CASE("infeasible configs are rejected") {
    SimConfig c;
    c.gt_max_side = 9;
    auto rng = make_rng(1, "x");
    CHECK_THROWS_AS(generate_task(rng, c), Error);
    SimConfig d;
    d.num_glyphs = 2;
    CHECK_THROWS_AS(validate(d), Error);
}

TEST_CASE("environment examples") {
    const auto t = task_for(9);
    NeedleEnv env(t, 6);
    const auto coarse = env.reset();
    CHECK(coarse.width == t.width);
    const auto on = std::get<ZoomView>(env.step(ZoomAction{"image_zoom_in", t.gt}));
    CHECK(sees(on, t.key()));
    Box away{0, 0, 1, 1};
    for (int y = 0; y < t.height; ++y)
        for (int x = 0; x < t.width; ++x)
            if (t.glyph_at(x, y) != t.key()) away = {double(x), double(y), double(x + 1), double(y + 1)};
    CHECK_FALSE(sees(std::get<ZoomView>(env.step(ZoomAction{"image_zoom_in", away})), t.key()));
    for (int i = 0; i < 4; ++i) env.step(ZoomAction{"image_zoom_in", t.gt});
    try {
        env.step(ZoomAction{"image_zoom_in", t.gt});
        FAIL("expected round-limit");
    } catch (const Error& e) {
        CHECK(e.code() == "round-limit");
    }
    const auto out = std::get<Outcome>(env.step(Answer{std::string(1, char('A' + t.key_index))}));
    CHECK(out.correct);
    CHECK(env.terminal());
    CHECK_THROWS_AS(env.step(Answer{"A"}), Error);
}

TEST_CASE("a zoom containing the target always reveals the key") {
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto t = task_for(s);
        NeedleEnv env(t, 6);
        env.reset();
        const Box wider{std::max(0.0, t.gt.x1 - 1), t.gt.y1, t.gt.x2, std::min(double(t.height), t.gt.y2 + 1)};
        CHECK(sees(std::get<ZoomView>(env.step(ZoomAction{"image_zoom_in", wider})), t.key()));
    }
}

TEST_CASE("anchors") {
    const auto a = make_anchors(8, 8);
    CHECK(a.size() == 49 + 9 + 1);
    CHECK(a.back() == Box{0, 0, 8, 8});
}

TEST_CASE("greedy policy gives identical rollouts that dynamic sampling drops") {
    SimConfig cfg;
    const auto anchors = make_anchors(cfg.grid_w, cfg.grid_h);
    const auto ctx = make_context(task_for(4), anchors, cfg.pad_frac);
    RolloutSettings st;
    st.temperature = 0.0;
    auto params = PolicyParams::initial(cfg, anchors.size());
    params.b_first = 1.0;  // zoom once, then answer
    const auto g = rollout_group(params, ctx, anchors, 16, 99, st);
    REQUIRE(g.rollouts.size() == 16);
    for (const auto& r : g.rollouts) CHECK(r.raw == g.rollouts[0].raw);
    CHECK_FALSE(dynamic_sample_filter(g.group));
}

TEST_CASE("seeded rollouts are reproducible and well formed") {
    SimConfig cfg;
    const auto anchors = make_anchors(cfg.grid_w, cfg.grid_h);
    const auto ctx = make_context(task_for(5), anchors, cfg.pad_frac);
    const auto params = PolicyParams::initial(cfg, anchors.size());
    const RolloutSettings st;
    const auto a = rollout_group(params, ctx, anchors, 16, 1234, st);
    const auto b = rollout_group(params, ctx, anchors, 16, 1234, st);
    for (std::size_t i = 0; i < 16; ++i) {
        CHECK(a.rollouts[i].raw == b.rollouts[i].raw);
        CHECK(a.rollouts[i].parsed.verdict.well_formed);
        CHECK(int(a.rollouts[i].parsed.trace.zoom_count()) <= st.max_rounds);
    }
    CHECK_THROWS_AS(rollout_group(params, ctx, anchors, 0, 1, st), Error);
}

TEST_CASE("reward-mode isolation inside rollouts") {
    SimConfig cfg;
    cfg.init_b_first_clear = 2.0;
    cfg.init_b_more = 0.5;
    const auto anchors = make_anchors(cfg.grid_w, cfg.grid_h);
    const auto ctx = make_context(task_for(6), anchors, cfg.pad_frac);
    const auto params = PolicyParams::initial(cfg, anchors.size());
    RolloutSettings st;
    st.reward.mode = RewardMode::outcome_only;
    for (const auto& r : rollout_group(params, ctx, anchors, 16, 8, st).rollouts) CHECK(r.breakdown.r_fid_bar == 0.0);
    st.reward.mode = RewardMode::naive_stepwise;
    int zooms = 0;
    for (const auto& r : rollout_group(params, ctx, anchors, 16, 8, st).rollouts)
        for (double f : r.breakdown.per_step_fid) {
            CHECK(f == st.reward.naive_bonus);
            ++zooms;
        }
    CHECK(zooms > 0);
}

TEST_CASE("policy update") {
    SimConfig cfg;
    cfg.init_b_first_clear = 3.0;
    const auto anchors = make_anchors(cfg.grid_w, cfg.grid_h);
    const auto ctx = make_context(task_for(8), anchors, cfg.pad_frac);
    const auto params = PolicyParams::initial(cfg, anchors.size());
    const RolloutSettings st;
    const auto g = rollout_group(params, ctx, anchors, 4, 77, st);
    const Rollout* zoomed = nullptr;
    for (const auto& r : g.rollouts)
        if (r.steps.front().zoomed) zoomed = &r;
    REQUIRE(zoomed);
    const auto seg_tokens = [&](const Rollout& r, double a) {
        std::size_t n = 0;
        for (const auto& [s, c] : token_segmentation(r)) n += c;
        return std::vector<double>(n, a);
    };

    SUBCASE("zero advantages leave params unchanged") {
        const std::vector<UpdateBatch> batch = {{&ctx, zoomed, seg_tokens(*zoomed, 0.0)}};
        CHECK(policy_update(params, batch, anchors, 2.0, st) == params);
    }
    SUBCASE("lr = 0 is the identity") {
        const std::vector<UpdateBatch> batch = {{&ctx, zoomed, seg_tokens(*zoomed, 1.0)}};
        CHECK(policy_update(params, batch, anchors, 0.0, st) == params);
    }
    SUBCASE("a positive advantage raises the chosen anchor") {
        const std::size_t anchor = zoomed->steps.front().anchor;
        const std::vector<UpdateBatch> batch = {{&ctx, zoomed, seg_tokens(*zoomed, 1.0)}};
        const auto next = policy_update(params, batch, anchors, 1.0, st);
        CHECK(next.anchor_logits[anchor] > params.anchor_logits[anchor]);
        CHECK(next.finite());
    }
    SUBCASE("non-finite gradients are reported") {
        const std::vector<UpdateBatch> batch = {{&ctx, zoomed, seg_tokens(*zoomed, std::numeric_limits<double>::quiet_NaN())}};
        try {
            policy_update(params, batch, anchors, 1.0, st);
            FAIL("expected nan-gradient");
        } catch (const Error& e) {
            CHECK(e.code() == "nan-gradient");
        }
    }
    SUBCASE("multi-epoch replay stays finite") {
        const std::vector<UpdateBatch> batch = {{&ctx, zoomed, seg_tokens(*zoomed, 1.0)}};
        CHECK(policy_update(params, batch, anchors, 1.0, st, 3).finite());
    }
}

TEST_CASE("training runs are deterministic") {
    for (auto mode : {RewardMode::outcome_only, RewardMode::naive_stepwise, RewardMode::virl}) {
        const auto a = run_experiment(small(mode));
        const auto b = run_experiment(small(mode));
        CHECK(same_log(a, b));
        CHECK(a.rows.size() == 6);
        CHECK_FALSE(same_log(a, run_experiment(small(mode, 4))));
    }
}

TEST_CASE("training log invariants") {
    for (auto mode : {RewardMode::outcome_only, RewardMode::naive_stepwise, RewardMode::virl}) {
        auto cfg = small(mode);
        const auto log = run_experiment(cfg);
        for (const auto& r : log.rows) {
            CHECK(r.max_zooms <= cfg.sim.max_rounds);
            CHECK(r.max_abs_advantage_sum <= 1e-12 * cfg.sim.group_size);
            CHECK(r.groups_kept <= cfg.sim.batch_size);
            CHECK(r.groups_drawn <= cfg.sim.batch_size * cfg.sim.max_draw_factor);
            if (mode == RewardMode::outcome_only) CHECK(r.mean_fid_bar == 0.0);
        }
        for (const auto& t : log.traces) {
            TraceConfig tc;
            tc.image_bounds = t.task.bounds;
            CHECK(parse_trace(t.raw, tc).verdict.well_formed);
        }
    }
}

TEST_CASE("threshold schedule applies only in virl mode") {
    auto cfg = small(RewardMode::virl);
    const auto v = run_experiment(cfg);
    CHECK(v.rows.front().h0 == doctest::Approx(0.2));
    CHECK(v.rows.back().h0 > v.rows.front().h0);
    cfg.use_schedule = false;
    for (const auto& r : run_experiment(cfg).rows) CHECK(r.h0 == cfg.fidelity.h0);
}

TEST_CASE("final summary pools the window") {
    TrainingLog log;
    IterationStats a;
    a.episodes = 10;
    a.answer_accuracy = 0.5;
    a.zooms = 0;
    IterationStats b;
    b.episodes = 30;
    b.answer_accuracy = 1.0;
    b.zooms = 6;
    b.rationale_accuracy = 0.75;
    b.rationale_count = 0.2;
    log.rows = {a, b};
    const auto f = log.final_summary(2);
    CHECK(f.answer_accuracy == doctest::Approx(35.0 / 40.0));
    CHECK(f.rationale_count == doctest::Approx(6.0 / 40.0));
    CHECK(f.rationale_accuracy == doctest::Approx(0.75));
    CHECK(log.final_summary(1).answer_accuracy == 1.0);
    CHECK(TrainingLog{}.final_summary(5).zooms == 0);
}
