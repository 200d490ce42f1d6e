// SPDX-License-Identifier: Apache-2.0
#include "virl/credit.hpp"

#include <algorithm>
#include <cmath>

#include "virl/error.hpp"

namespace virl {

bool ModulatorParams::valid() const {
    for (double h : {h_good_pos, h_bad_pos, h_good_neg, h_bad_neg})
        if (!std::isfinite(h) || h <= 0.0) return false;
    return h_good_pos > 1.0 && 1.0 > h_bad_pos && h_bad_neg > 1.0 && 1.0 > h_good_neg;
}

std::string_view step_class_name(StepClass c) {
    switch (c) {
        case StepClass::textual: return "textual";
        case StepClass::good_visual: return "good_visual";
        case StepClass::bad_visual: return "bad_visual";
    }
    return "textual";
}

std::vector<double> group_advantages(std::span<const double> rewards, bool std_normalize) {
    const std::size_t g = rewards.size();
    std::vector<double> adv(g, 0.0);
    if (g == 0) return adv;
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(g);
    for (std::size_t i = 0; i < g; ++i) adv[i] = rewards[i] - mean;
    if (std_normalize) {
        double var = 0.0;
        for (double a : adv) var += a * a;
        const double sd = std::sqrt(var / static_cast<double>(g));
        if (sd > 0.0)
            for (double& a : adv) a /= sd;
    }
    return adv;
}

std::vector<StepClass> classify_steps(const Trace& trace, const RewardBreakdown& breakdown) {
    if (trace.zoom_count() != breakdown.per_step_fid.size())
        throw Error("misaligned", "classify_steps: breakdown has " + std::to_string(breakdown.per_step_fid.size()) +
                                      " fidelity entries for " + std::to_string(trace.zoom_count()) + " zooms");
    std::vector<StepClass> out;
    out.reserve(trace.steps.size());
    std::size_t k = 0;
    for (const auto& s : trace.steps) {
        if (!s.is_zoom()) {
            out.push_back(StepClass::textual);
            continue;
        }
        out.push_back(breakdown.per_step_fid[k++] > 0.0 ? StepClass::good_visual : StepClass::bad_visual);
    }
    return out;
}

AdvantageProfile modulate(double a_traj, std::span<const StepClass> classes, const ModulatorParams& p) {
    AdvantageProfile prof;
    prof.a_traj = a_traj;
    prof.per_step.reserve(classes.size());
    for (std::size_t t = 0; t < classes.size(); ++t) {
        double h = 1.0;
        if (classes[t] == StepClass::good_visual)
            h = a_traj > 0.0 ? p.h_good_pos : p.h_good_neg;
        else if (classes[t] == StepClass::bad_visual)
            h = a_traj > 0.0 ? p.h_bad_pos : p.h_bad_neg;
        prof.per_step.push_back({t, classes[t], a_traj == 0.0 ? 0.0 : a_traj * h});
    }
    return prof;
}

AdvantageProfile uniform_profile(double a_traj, std::size_t steps) {
    AdvantageProfile prof;
    prof.a_traj = a_traj;
    for (std::size_t t = 0; t < steps; ++t) prof.per_step.push_back({t, StepClass::textual, a_traj});
    return prof;
}

std::vector<double> broadcast_to_tokens(const AdvantageProfile& profile, std::span<const TokenSpan> seg) {
    const std::size_t steps = profile.per_step.size();
    if (seg.size() != steps)
        throw Error("segmentation-mismatch", "broadcast_to_tokens: segmentation lists " + std::to_string(seg.size()) +
                                                 " steps, profile has " + std::to_string(steps));
    std::vector<char> seen(steps, 0);
    std::vector<double> out;
    for (const auto& [step, count] : seg) {
        if (step >= steps || seen[step])
            throw Error("segmentation-mismatch", "broadcast_to_tokens: step " + std::to_string(step) +
                                                     " missing from profile or listed twice");
        seen[step] = 1;
        out.insert(out.end(), count, profile.per_step[step].a_hat);
    }
    return out;
}

double clipped_surrogate(double ratio, double a_hat, double eps_low, double eps_high) {
    if (!(ratio > 0.0)) throw Error("bad-ratio", "clipped_surrogate: ratio must be positive");
    const double clipped = std::clamp(ratio, 1.0 - eps_low, 1.0 + eps_high);
    return std::min(ratio * a_hat, clipped * a_hat);
}

double clipped_surrogate_grad(double ratio, double a_hat, double eps_low, double eps_high) {
    if (!(ratio > 0.0)) throw Error("bad-ratio", "clipped_surrogate_grad: ratio must be positive");
    // The clipped branch is flat; it is selected when it is strictly smaller.
    if (a_hat > 0.0 && ratio > 1.0 + eps_high) return 0.0;
    if (a_hat < 0.0 && ratio < 1.0 - eps_low) return 0.0;
    return a_hat;
}

bool dynamic_sample_filter(std::span<const double> rewards) {
    if (rewards.size() < 2) return false;
    return std::any_of(rewards.begin() + 1, rewards.end(), [&](double r) { return r != rewards.front(); });
}

bool dynamic_sample_filter(const GroupRollout& group) {
    std::vector<double> rewards;
    rewards.reserve(group.rollouts.size());
    for (const auto& [trace, b] : group.rollouts) rewards.push_back(b.r_total);
    return dynamic_sample_filter(rewards);
}

}  // namespace virl
