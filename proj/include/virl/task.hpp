// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "virl/geom.hpp"

namespace virl {

/// A multiple-choice query with its reference rationale region.
struct Task {
    std::string task_id;
    std::string question;
    std::vector<std::string> choices;
    /// Either the full text of one choice or its letter label ("A", "B", ...).
    std::string key;
    /// Ground-truth evidence region, in the same units as zoom boxes.
    Box rationale;
    /// Image extent; absent means zoom boxes are not bounds-checked or clamped.
    std::optional<Box> bounds;
    /// Context padding applied to `rationale` before fidelity scoring.
    double pad_frac = 0.1;
    /// Difficulty weight exported by curation (sampling probability downstream).
    double weight = 1.0;

    friend bool operator==(const Task&, const Task&) = default;
};

}  // namespace virl
