// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "virl/task.hpp"
#include "virl/trace.hpp"

namespace virl::metrics {

struct TraceScore {
    std::string task_id;
    bool answer_correct = false;
    int zoom_count = 0;
    /// Max over zooms of coverage(zoom, gt); present iff zoom_count >= 1.
    std::optional<double> best_coverage;
};

struct Quadrants {
    int right_with = 0;
    int right_without = 0;
    int wrong_with = 0;
    int wrong_without = 0;

    int total() const { return right_with + right_without + wrong_with + wrong_without; }
};

struct CorpusReport {
    std::size_t size = 0;
    double acc_ans = 0.0;
    /// Mean best coverage over traces that zoom at least once.
    double acc_rat = 0.0;
    /// True when no trace zoomed, in which case acc_rat is reported as 0.
    bool acc_rat_undefined = false;
    double c_rat = 0.0;
    double f1 = 0.0;
    Quadrants quadrants;
    /// Optional binary variant: fraction of zooming traces with best coverage >= tau_hit.
    std::optional<double> hit_rate;
    std::optional<double> tau_hit;
};

struct IllusionSummary {
    double right_with_rate = 0.0;
    double right_without_rate = 0.0;
    double wrong_with_rate = 0.0;
    double wrong_without_rate = 0.0;
    /// wrong_with / max(1, traces with a rationale).
    double illusion_index = 0.0;
    bool no_rationale_traces = false;
    std::vector<std::string> warnings;
};

/// Rationale coverage is measured against the unpadded task rationale.
TraceScore score_trace(const Trace& trace, const Task& task);

/// Throws virl::Error("empty-corpus") on an empty input.
CorpusReport aggregate(std::span<const TraceScore> scores, std::optional<double> tau_hit = std::nullopt);

/// Harmonic mean 2ar/(a+r); 0 when both are 0.
double f1(double acc_ans, double acc_rat);

IllusionSummary diagnose(const CorpusReport& report);

}  // namespace virl::metrics
