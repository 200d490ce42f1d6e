// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "virl/reward.hpp"
#include "virl/trace.hpp"

namespace virl {

/// Sign-indexed modulator table: h for (rationale class, sign of the trajectory
/// advantage). Advantageous trajectories amplify good visual steps and attenuate
/// bad ones; disadvantageous trajectories amplify blame on bad visual steps and
/// soften it on good ones. Textual steps always use 1.
struct ModulatorParams {
    double h_good_pos = 1.2;
    double h_bad_pos = 0.6;
    double h_good_neg = 0.6;
    double h_bad_neg = 1.2;

    /// h_good_pos > 1 > h_bad_pos, h_bad_neg > 1 > h_good_neg, all positive and finite.
    bool valid() const;

    friend bool operator==(const ModulatorParams&, const ModulatorParams&) = default;
};

enum class StepClass { textual, good_visual, bad_visual };

std::string_view step_class_name(StepClass c);

struct StepAdvantage {
    std::size_t step = 0;
    StepClass cls = StepClass::textual;
    double a_hat = 0.0;
};

struct AdvantageProfile {
    double a_traj = 0.0;
    std::vector<StepAdvantage> per_step;
    std::vector<double> per_token;
};

struct GroupRollout {
    std::string task_id;
    std::vector<std::pair<Trace, RewardBreakdown>> rollouts;
};

/// A_i = R_i - mean(R). With `std_normalize`, additionally divided by the group
/// standard deviation (left unscaled when that is zero).
std::vector<double> group_advantages(std::span<const double> rewards, bool std_normalize = false);

/// Zoom step k is good_visual iff per_step_fid[k] > 0; other steps are textual.
/// Throws virl::Error("misaligned") when the breakdown has a different zoom count.
std::vector<StepClass> classify_steps(const Trace& trace, const RewardBreakdown& breakdown);

/// a_hat = a_traj * h(class, sign(a_traj)); every a_hat is 0 when a_traj is 0.
AdvantageProfile modulate(double a_traj, std::span<const StepClass> classes, const ModulatorParams& p);

/// Profile with h = 1 everywhere (plain trajectory-level credit).
AdvantageProfile uniform_profile(double a_traj, std::size_t steps);

/// Token segmentation entry: (step index, token count).
using TokenSpan = std::pair<std::size_t, std::size_t>;

/// Repeat each step's a_hat over its tokens. `seg` must list every step of the
/// profile exactly once; throws virl::Error("segmentation-mismatch") otherwise.
std::vector<double> broadcast_to_tokens(const AdvantageProfile& profile, std::span<const TokenSpan> seg);

/// min(r*A, clip(r, 1-eps_low, 1+eps_high)*A). Throws virl::Error("bad-ratio") for r <= 0.
double clipped_surrogate(double ratio, double a_hat, double eps_low, double eps_high);

/// d/d(ratio) of clipped_surrogate: a_hat where the unclipped branch is active, else 0.
double clipped_surrogate_grad(double ratio, double a_hat, double eps_low, double eps_high);

/// false iff every trajectory reward in the group is equal (including G = 1).
bool dynamic_sample_filter(const GroupRollout& group);
bool dynamic_sample_filter(std::span<const double> rewards);

}  // namespace virl
