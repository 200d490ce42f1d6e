// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic needle-search environment, a toy parametric policy over fixed box
// anchors, and the group-rollout training loop used to study how the reward
// design shapes zoom behaviour.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "virl/credit.hpp"
#include "virl/geom.hpp"
#include "virl/metrics.hpp"
#include "virl/reward.hpp"
#include "virl/rng.hpp"
#include "virl/task.hpp"
#include "virl/trace.hpp"

namespace virl::sim {

enum class PromptTemplate { clear, ambiguous };

struct SimConfig {
    int grid_w = 8;
    int grid_h = 8;
    int num_glyphs = 10;
    int num_choices = 4;
    int gt_min_side = 2;  ///< target side length range, in cells
    int gt_max_side = 2;
    int num_decoys = 1;   ///< salient blocks of a distractor glyph
    double p_hint = 0.7;  ///< probability that the coarse hint names the key
    double sal_true_lo = 0.5;
    double sal_true_hi = 1.0;
    double sal_decoy_lo = 0.0;
    double sal_decoy_hi = 0.8;
    /// Weight of the coarse hint after n zooms is hint_decay^n.
    double hint_decay = 0.5;
    int max_rounds = 6;
    int group_size = 16;
    int batch_size = 64;
    int iterations = 300;
    double lr = 2.0;
    double temperature = 1.0;
    /// Dynamic sampling draws at most batch_size * max_draw_factor groups per iteration.
    int max_draw_factor = 2;
    int ppo_epochs = 1;
    double pad_frac = 0.1;
    PromptTemplate prompt = PromptTemplate::clear;
    RewardMode reward_mode = RewardMode::virl;

    // Initial policy: some latent grounding ability, an unfamiliar answer head.
    double init_w_sal = 4.0;
    double init_b_first_clear = 0.0;
    double init_b_first_ambiguous = -1.0;
    double init_b_more = -1.0;
    double init_w_hint = 1.0;
    double init_w_ev = 1.0;

    friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

struct CreditOptions {
    double eps_low = 0.2;
    double eps_high = 0.28;
    bool std_normalize = false;
    /// Rationale-level modulation; only active in virl mode.
    bool fine_grained = true;

    friend bool operator==(const CreditOptions&, const CreditOptions&) = default;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    SimConfig sim;
    FidelityParams fidelity;
    RedundancyParams redundancy;
    ThresholdSchedule schedule;
    /// When false, fidelity.h0 stays fixed for the whole run.
    bool use_schedule = true;
    RewardOptions reward;
    ModulatorParams modulator;
    CreditOptions credit;
    /// Rendered traces of the last `dump_last_iterations` iterations are kept in the log.
    int dump_last_iterations = 0;
};

/// Throws virl::Error("invalid-config") naming every offending field.
void validate(const SimConfig& cfg);

struct SalientSpot {
    Box box;
    double intensity = 0.0;
};

struct NeedleTask {
    std::string task_id;
    int width = 0;
    int height = 0;
    std::vector<int> grid;      ///< glyph id per cell, row-major
    Box gt;                     ///< target block, cell units
    std::vector<int> choices;   ///< glyph ids offered as answers
    std::size_t key_index = 0;  ///< position of the key within choices
    std::size_t hint_index = 0; ///< coarse-view guess, position within choices
    std::vector<SalientSpot> spots;

    int key() const { return choices[key_index]; }
    int glyph_at(int x, int y) const { return grid[static_cast<std::size_t>(y * width + x)]; }
    Box bounds() const { return {0.0, 0.0, static_cast<double>(width), static_cast<double>(height)}; }

    /// Multiple-choice view used by the reward and metrics code.
    Task to_task(double pad_frac) const;
};

NeedleTask generate_task(Rng& rng, const SimConfig& cfg, std::string task_id = "task");

struct CoarseView {
    std::size_t hint_index = 0;
    int width = 0;
    int height = 0;
    std::vector<SalientSpot> spots;
};

struct ZoomView {
    Box box;
    std::vector<int> glyphs;  ///< glyphs of every cell overlapping the box
};

struct Outcome {
    std::size_t answer_index = 0;
    bool correct = false;
};

using EnvAction = std::variant<ZoomAction, Answer>;
using EnvObservation = std::variant<ZoomView, Outcome>;

class NeedleEnv {
public:
    NeedleEnv(const NeedleTask& task, int max_rounds);

    CoarseView reset();
    /// Zoom reveals cell glyphs; an answer (choice letter) ends the episode.
    /// Throws virl::Error("episode-terminal") after the end and
    /// virl::Error("round-limit") for a zoom past max_rounds.
    EnvObservation step(const EnvAction& action);

    bool terminal() const { return terminal_; }
    int zooms() const { return zooms_; }

private:
    const NeedleTask* task_;
    int max_rounds_;
    int zooms_ = 0;
    bool terminal_ = false;
};

/// Fixed multi-scale anchors: 2x2 cells at stride 1, 4x4 at stride 2, the full grid.
std::vector<Box> make_anchors(int width, int height);

struct PolicyParams {
    std::vector<double> anchor_logits;
    double w_sal = 0.0;      ///< weight on coarse saliency under the anchor
    double w_revisit = 0.0;  ///< weight on "anchor already zoomed"
    double b_first = 0.0;    ///< zoom-vs-answer logit before any zoom
    double b_more = 0.0;     ///< zoom-again logit
    double w_found = 0.0;    ///< zoom-again shift once a uniform block was seen
    double w_hint = 0.0;     ///< answer logit weight on the (decayed) coarse hint
    double w_ev = 0.0;       ///< answer logit weight on zoomed evidence

    static PolicyParams initial(const SimConfig& cfg, std::size_t anchors);
    bool finite() const;
    std::size_t size() const { return anchor_logits.size() + 7; }
    std::vector<double> flatten() const;

    friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

/// Per-task quantities shared by every rollout of a group.
struct TaskContext {
    NeedleTask task;
    Task mcq;
    std::vector<double> anchor_saliency;
};

TaskContext make_context(NeedleTask task, const std::vector<Box>& anchors, double pad_frac);

/// Everything needed to recompute log-probabilities of the sampled decisions.
struct StepRecord {
    bool decided = true;        ///< false when the round limit forced the answer
    bool zoomed = false;
    bool first_round = true;
    bool found = false;         ///< a uniform block had been seen before this step
    std::vector<std::uint16_t> visited;  ///< anchors zoomed before this step
    std::size_t anchor = 0;
    std::vector<double> evidence;  ///< answer features per choice (answer steps)
    double hint_factor = 1.0;
    std::size_t choice = 0;
    double logp_decision = 0.0;  ///< behaviour log-prob of the zoom/answer decision
    double logp_select = 0.0;    ///< behaviour log-prob of the anchor or choice
};

struct Rollout {
    std::string raw;
    ParsedTrace parsed;
    RewardBreakdown breakdown;
    metrics::TraceScore score;
    std::vector<StepRecord> steps;
};

struct SimGroup {
    GroupRollout group;
    std::vector<Rollout> rollouts;
};

struct RolloutSettings {
    int max_rounds = 6;
    double temperature = 1.0;
    double hint_decay = 0.5;
    FidelityParams fidelity;
    RedundancyParams redundancy;
    RewardOptions reward;
};

/// G episodes of `policy` on one task, each rendered through the trace grammar,
/// reparsed and scored. Rollout i draws from derive_seed(seed, "rollout", {i}).
SimGroup rollout_group(const PolicyParams& policy, const TaskContext& ctx, const std::vector<Box>& anchors,
                       int group_size, std::uint64_t seed, const RolloutSettings& settings);

/// Token segmentation of a rollout: one token per sampled decision.
std::vector<TokenSpan> token_segmentation(const Rollout& r);

struct UpdateBatch {
    const TaskContext* ctx = nullptr;
    const Rollout* rollout = nullptr;
    std::vector<double> token_advantages;
};

/// One gradient-ascent step on the token-mean surrogate. With ppo_epochs > 1
/// later epochs replay the stored log-probs through clipped_surrogate.
/// Throws virl::Error("nan-gradient") with a parameter dump if a gradient is not finite.
PolicyParams policy_update(const PolicyParams& params, const std::vector<UpdateBatch>& batch,
                           const std::vector<Box>& anchors, double lr, const RolloutSettings& settings,
                           int epochs = 1, double eps_low = 0.2, double eps_high = 0.28);

struct IterationStats {
    int iteration = 0;
    double answer_accuracy = 0.0;
    double rationale_count = 0.0;
    double rationale_accuracy = 0.0;  ///< mean gt coverage per zoom
    double best_coverage = 0.0;       ///< mean over zooming traces of the best zoom's coverage
    double wrong_with_rationale = 0.0;
    double mean_reward = 0.0;
    double mean_fid_bar = 0.0;
    double h0 = 0.0;
    int episodes = 0;
    int zooms = 0;
    int zooming_episodes = 0;
    int groups_drawn = 0;
    int groups_kept = 0;
    int max_zooms = 0;
    double max_abs_advantage_sum = 0.0;
};

struct DumpedTrace {
    int iteration = 0;
    std::string task_id;
    std::string raw;
    Task task;
};

/// End-of-run state over a trailing window. Rationale accuracy pools every zoom
/// in the window, so iterations without zooms do not count as zero accuracy.
struct FinalSummary {
    double answer_accuracy = 0.0;
    double rationale_count = 0.0;
    double rationale_accuracy = 0.0;
    double best_coverage = 0.0;
    double wrong_with_rationale = 0.0;
    double mean_reward = 0.0;
    int zooms = 0;
};

struct TrainingLog {
    RewardMode mode = RewardMode::virl;
    std::uint64_t seed = 0;
    std::vector<IterationStats> rows;
    PolicyParams final_params;
    std::vector<DumpedTrace> traces;

    /// Mean of a series over the last `window` iterations.
    template <typename F>
    double tail_mean(F&& field, std::size_t window) const {
        if (rows.empty()) return 0.0;
        window = std::min(window, rows.size());
        double s = 0.0;
        for (std::size_t i = rows.size() - window; i < rows.size(); ++i) s += field(rows[i]);
        return s / static_cast<double>(window);
    }

    FinalSummary final_summary(std::size_t window) const;
};

/// Full seeded training run. outcome_only drops the process term, naive_stepwise
/// pays a flat bonus per zoom, virl uses fidelity + redundancy + modulated credit.
TrainingLog run_experiment(const ExperimentConfig& cfg);

}  // namespace virl::sim
