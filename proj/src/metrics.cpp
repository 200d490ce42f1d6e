// SPDX-License-Identifier: Apache-2.0
#include "virl/metrics.hpp"

#include <algorithm>

#include "virl/error.hpp"
#include "virl/kernels.hpp"
#include "virl/reward.hpp"

namespace virl::metrics {

TraceScore score_trace(const Trace& trace, const Task& task) {
    TraceScore s;
    s.task_id = task.task_id;
    s.answer_correct = answer_reward(trace.answer(), task.key, task.choices) > 0.0;
    const auto actions = extract_actions(trace);
    s.zoom_count = static_cast<int>(actions.size());
    if (actions.empty()) return s;
    if (!(task.rationale.area() > 0.0)) throw Error("zero-area-gt", "score_trace: rationale box has zero area");
    std::vector<Box> boxes(actions.size());
    for (std::size_t i = 0; i < actions.size(); ++i) boxes[i] = actions[i].box;
    std::vector<double> cov(actions.size());
    kernels::coverage_many(boxes, task.rationale, cov);
    s.best_coverage = *std::max_element(cov.begin(), cov.end());
    return s;
}

double f1(double acc_ans, double acc_rat) {
    const double denom = acc_ans + acc_rat;
    return denom > 0.0 ? 2.0 * acc_ans * acc_rat / denom : 0.0;
}

CorpusReport aggregate(std::span<const TraceScore> scores, std::optional<double> tau_hit) {
    if (scores.empty()) throw Error("empty-corpus", "aggregate: corpus is empty");
    CorpusReport r;
    r.size = scores.size();
    std::size_t correct = 0, zooms = 0, with = 0, hits = 0;
    double coverage_sum = 0.0;
    for (const auto& s : scores) {
        const bool has_rationale = s.zoom_count >= 1;
        correct += s.answer_correct ? 1 : 0;
        zooms += static_cast<std::size_t>(std::max(0, s.zoom_count));
        if (has_rationale) {
            ++with;
            const double c = s.best_coverage.value_or(0.0);
            coverage_sum += c;
            if (tau_hit && c >= *tau_hit) ++hits;
        }
        auto& q = r.quadrants;
        if (s.answer_correct)
            ++(has_rationale ? q.right_with : q.right_without);
        else
            ++(has_rationale ? q.wrong_with : q.wrong_without);
    }
    const double n = static_cast<double>(scores.size());
    r.acc_ans = static_cast<double>(correct) / n;
    r.c_rat = static_cast<double>(zooms) / n;
    r.acc_rat_undefined = with == 0;
    r.acc_rat = with ? coverage_sum / static_cast<double>(with) : 0.0;
    r.f1 = f1(r.acc_ans, r.acc_rat);
    if (tau_hit) {
        r.tau_hit = tau_hit;
        r.hit_rate = with ? static_cast<double>(hits) / static_cast<double>(with) : 0.0;
    }
    return r;
}

IllusionSummary diagnose(const CorpusReport& report) {
    IllusionSummary d;
    const auto& q = report.quadrants;
    const double n = std::max(1, q.total());
    d.right_with_rate = q.right_with / n;
    d.right_without_rate = q.right_without / n;
    d.wrong_with_rate = q.wrong_with / n;
    d.wrong_without_rate = q.wrong_without / n;
    const int with = q.right_with + q.wrong_with;
    d.illusion_index = static_cast<double>(q.wrong_with) / std::max(1, with);
    d.no_rationale_traces = with == 0;
    if (d.no_rationale_traces && q.total() > 0)
        d.warnings.push_back("no trace invoked a visual rationale; answers are not grounded in zoomed evidence");
    return d;
}

}  // namespace virl::metrics
