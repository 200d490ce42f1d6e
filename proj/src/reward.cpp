// SPDX-License-Identifier: Apache-2.0
#include "virl/reward.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "virl/error.hpp"
#include "virl/kernels.hpp"

namespace virl {

namespace {

std::string normalize(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out += ' ';
        pending_space = false;
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

std::string letter(std::size_t i) { return std::string(1, static_cast<char>('a' + i)); }

}  // namespace

std::string_view reward_mode_name(RewardMode m) {
    switch (m) {
        case RewardMode::outcome_only: return "outcome_only";
        case RewardMode::naive_stepwise: return "naive_stepwise";
        case RewardMode::virl: return "virl";
    }
    return "virl";
}

std::optional<RewardMode> reward_mode_from_name(std::string_view name) {
    for (auto m : {RewardMode::outcome_only, RewardMode::naive_stepwise, RewardMode::virl})
        if (reward_mode_name(m) == name) return m;
    return std::nullopt;
}

double step_fidelity(double u, const FidelityParams& p) {
    const double d = u - p.h0;
    const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    const double q = std::max(0.0, d) / p.dh;
    const double steps = std::floor(std::round(q * 1e9) / 1e9);
    return p.r_base * sign + p.eta * steps;
}

int redundancy_count(std::size_t k, std::span<const ZoomAction> actions, const RedundancyParams& p) {
    if (k == 0 || k > actions.size()) throw Error("bad-index", "redundancy_count: k out of range");
    int count = static_cast<int>(k);
    const std::size_t prior = k - 1;
    if (prior == 0) return count;
    std::vector<Box> earlier(prior);
    for (std::size_t j = 0; j < prior; ++j) earlier[j] = actions[j].box;
    std::vector<double> overlaps(prior);
    kernels::iou_one_to_many(actions[prior].box, earlier, overlaps);
    for (double o : overlaps)
        if (o > p.dup_iou) ++count;
    return count;
}

double redundancy_penalty(std::size_t k, std::span<const ZoomAction> actions, const RedundancyParams& p) {
    const double excess = std::max(0, redundancy_count(k, actions, p) - p.budget);
    return p.lambda * excess * excess;
}

TrajectoryFidelity trajectory_fidelity(std::span<const ZoomAction> actions, const Box& gt,
                                       const FidelityParams& fp, const RedundancyParams& rp) {
    if (!(gt.area() > 0.0)) throw Error("zero-area-gt", "trajectory_fidelity: rationale box has zero area");
    TrajectoryFidelity out;
    const std::size_t n = actions.size();
    if (n == 0) return out;
    std::vector<Box> boxes(n);
    for (std::size_t i = 0; i < n; ++i) boxes[i] = actions[i].box;
    out.per_step_iou.resize(n);
    kernels::iou_one_to_many(gt, boxes, out.per_step_iou);
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double fid = step_fidelity(out.per_step_iou[k], fp);
        const double pen = redundancy_penalty(k + 1, actions, rp);
        out.per_step_fid.push_back(fid);
        out.per_step_penalty.push_back(pen);
        sum += fid - pen;
    }
    out.r_fid_bar = sum / static_cast<double>(n);
    return out;
}

std::size_t key_index(std::string_view key, std::span<const std::string> choices) {
    const std::string k = normalize(key);
    for (std::size_t i = 0; i < choices.size(); ++i)
        if (normalize(choices[i]) == k) return i;
    for (std::size_t i = 0; i < choices.size() && i < 26; ++i)
        if (letter(i) == k) return i;
    throw Error("key-not-in-choices", "answer key '" + std::string(key) + "' is not one of the choices");
}

double answer_reward(const std::optional<std::string>& answer, std::string_view key,
                     std::span<const std::string> choices) {
    const std::size_t idx = key_index(key, choices);
    if (!answer) return 0.0;
    const std::string a = normalize(*answer);
    if (a.empty()) return 0.0;
    return (a == normalize(choices[idx]) || (idx < 26 && a == letter(idx))) ? 1.0 : 0.0;
}

Box scoring_box(const Task& task) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const Box bounds = task.bounds.value_or(Box{-inf, -inf, inf, inf});
    return geom::pad_box(task.rationale, task.pad_frac, bounds);
}

RewardBreakdown total_reward(const Trace& trace, const FormatVerdict& verdict, const Task& task,
                             const FidelityParams& fp, const RedundancyParams& rp, const RewardOptions& opts) {
    RewardBreakdown b;
    b.r_acc = answer_reward(trace.answer(), task.key, task.choices);
    b.r_fmt = verdict.well_formed && verdict.violations.empty() ? opts.r_fmt_ok : opts.r_fmt_bad;

    const auto actions = extract_actions(trace);
    const std::size_t n = actions.size();
    switch (opts.mode) {
        case RewardMode::virl: {
            auto tf = trajectory_fidelity(actions, scoring_box(task), fp, rp);
            b.per_step_fid = std::move(tf.per_step_fid);
            b.per_step_penalty = std::move(tf.per_step_penalty);
            b.per_step_iou = std::move(tf.per_step_iou);
            b.r_fid_bar = tf.r_fid_bar;
            break;
        }
        case RewardMode::naive_stepwise:
        case RewardMode::outcome_only: {
            const Box gt = scoring_box(task);
            if (!(gt.area() > 0.0)) throw Error("zero-area-gt", "total_reward: rationale box has zero area");
            const double per_zoom = opts.mode == RewardMode::naive_stepwise ? opts.naive_bonus : 0.0;
            b.per_step_fid.assign(n, per_zoom);
            b.per_step_penalty.assign(n, 0.0);
            b.per_step_iou.resize(n);
            for (std::size_t k = 0; k < n; ++k) b.per_step_iou[k] = geom::iou(actions[k].box, gt);
            b.r_fid_bar = per_zoom * static_cast<double>(n);
            break;
        }
    }
    b.r_total = b.r_acc + b.r_fmt + b.r_fid_bar;
    return b;
}

double schedule_h0(const ThresholdSchedule& s, int train_step, double recent_hit_rate, ThresholdState& state) {
    double h0 = s.h0_end;
    if (s.mode == ScheduleMode::linear) {
        if (s.warmup_steps > 0 && train_step < s.warmup_steps) {
            const double t = static_cast<double>(std::max(0, train_step)) / s.warmup_steps;
            h0 = s.h0_start + (s.h0_end - s.h0_start) * t;
        }
    } else {
        if (recent_hit_rate > s.promotion_bar) ++state.promotions;
        h0 = s.h0_start + s.increment * state.promotions;
    }
    return std::clamp(h0, s.h0_start, s.h0_end);
}

}  // namespace virl
