// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "virl/geom.hpp"
#include "virl/task.hpp"
#include "virl/trace.hpp"

namespace virl {

struct FidelityParams {
    double r_base = 1.0;  ///< magnitude of the signed correctness term
    double eta = 0.2;     ///< refinement bonus per threshold step
    double h0 = 0.3;      ///< soft IoU threshold
    double dh = 0.1;      ///< IoU width of one bonus step

    friend bool operator==(const FidelityParams&, const FidelityParams&) = default;
};

struct RedundancyParams {
    int budget = 2;        ///< soft budget in action counts
    double lambda = 0.1;   ///< penalty scale
    double dup_iou = 0.8;  ///< IoU above which an earlier action counts as a repeat

    friend bool operator==(const RedundancyParams&, const RedundancyParams&) = default;
};

/// How the process term of the total reward is formed.
enum class RewardMode {
    outcome_only,    ///< process term fixed at zero
    naive_stepwise,  ///< flat bonus per zoom, summed over zooms, no redundancy penalty
    virl,            ///< IoU-graded fidelity with redundancy penalty, averaged over zooms
};

std::string_view reward_mode_name(RewardMode m);
std::optional<RewardMode> reward_mode_from_name(std::string_view name);

struct RewardOptions {
    RewardMode mode = RewardMode::virl;
    double naive_bonus = 0.5;
    double r_fmt_ok = 0.5;
    double r_fmt_bad = -0.5;

    friend bool operator==(const RewardOptions&, const RewardOptions&) = default;
};

struct RewardBreakdown {
    double r_acc = 0.0;
    double r_fmt = 0.0;
    std::vector<double> per_step_fid;      ///< one entry per zoom action
    std::vector<double> per_step_penalty;  ///< one entry per zoom action
    std::vector<double> per_step_iou;      ///< u_k against the padded rationale
    double r_fid_bar = 0.0;
    double r_total = 0.0;
};

struct TrajectoryFidelity {
    double r_fid_bar = 0.0;
    std::vector<double> per_step_fid;
    std::vector<double> per_step_penalty;
    std::vector<double> per_step_iou;
};

/// r_base*sign(u-h0) + eta*floor(max(0,u-h0)/dh), with sign(0)=0. The quotient
/// is rounded to 9 decimals before flooring so that 0.7/0.1 lands on 7.
double step_fidelity(double u, const FidelityParams& p);

/// Number of earlier-or-equal actions plus near-duplicates of action k (1-based).
int redundancy_count(std::size_t k, std::span<const ZoomAction> actions, const RedundancyParams& p);

/// lambda * max(0, C_k - budget)^2 for the 1-based action index k.
double redundancy_penalty(std::size_t k, std::span<const ZoomAction> actions, const RedundancyParams& p);

/// Mean over zoom actions of fidelity minus redundancy penalty; 0 for no actions.
/// `gt` is compared as given (callers pass the padded rationale).
TrajectoryFidelity trajectory_fidelity(std::span<const ZoomAction> actions, const Box& gt,
                                       const FidelityParams& fp, const RedundancyParams& rp);

/// Index of the key within `choices`, matched by normalized text first and by
/// letter label second. Throws virl::Error("key-not-in-choices").
std::size_t key_index(std::string_view key, std::span<const std::string> choices);

/// 1.0 when the answer names the key by letter or by text (case and whitespace
/// insensitive), 0.0 otherwise or when missing.
double answer_reward(const std::optional<std::string>& answer, std::string_view key,
                     std::span<const std::string> choices);

/// Padded rationale used for fidelity scoring.
Box scoring_box(const Task& task);

RewardBreakdown total_reward(const Trace& trace, const FormatVerdict& verdict, const Task& task,
                             const FidelityParams& fp, const RedundancyParams& rp,
                             const RewardOptions& opts = {});

enum class ScheduleMode { linear, competence_gated };

struct ThresholdSchedule {
    double h0_start = 0.2;
    double h0_end = 0.5;
    int warmup_steps = 100;
    ScheduleMode mode = ScheduleMode::linear;
    double increment = 0.05;      ///< competence-gated step size
    double promotion_bar = 0.6;   ///< hit rate that earns one increment

    friend bool operator==(const ThresholdSchedule&, const ThresholdSchedule&) = default;
};

/// Progress of a competence-gated schedule; unused in linear mode.
struct ThresholdState {
    int promotions = 0;
};

/// Current h0, always within [h0_start, h0_end]. Linear mode interpolates over
/// warmup_steps and ignores the hit rate; gated mode promotes once per call in
/// which recent_hit_rate exceeds promotion_bar.
double schedule_h0(const ThresholdSchedule& s, int train_step, double recent_hit_rate, ThresholdState& state);

}  // namespace virl
