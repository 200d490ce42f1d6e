// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace virl {

/// Axis-aligned rectangle. Units are whatever the enclosing dataset uses
/// (pixels, grid cells or normalized coordinates); a Box carries no tag.
struct Box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return (x2 - x1) * (y2 - y1); }

    /// x1 <= x2, y1 <= y2 and all coordinates finite.
    bool valid() const;
    bool contains(const Box& other) const;

    friend bool operator==(const Box&, const Box&) = default;
};

static_assert(sizeof(Box) == 4 * sizeof(double), "kernels load Box as four packed doubles");

struct ScoredBox {
    Box box;
    double score = 0.0;

    friend bool operator==(const ScoredBox&, const ScoredBox&) = default;
};

namespace geom {

/// Intersection rectangle; an empty intersection collapses to a zero-area box.
Box intersect(const Box& a, const Box& b);

/// area(a∩b) / area(a∪b), 0 when the union has zero area.
double iou(const Box& a, const Box& b);

/// area(pred∩gt) / area(gt). Throws virl::Error("zero-area-gt") when gt has no area.
double coverage(const Box& pred, const Box& gt);

/// Grow each side outward by `frac` times the matching side length, then clamp to `bounds`.
Box pad_box(const Box& b, double frac, const Box& bounds);

Box clamp_box(const Box& b, const Box& bounds);

/// Greedy non-maximum suppression. Candidates are visited by descending score
/// (stable on ties); one is dropped iff its IoU with an already kept box exceeds
/// `iou_thresh`.
std::vector<ScoredBox> nms(std::span<const ScoredBox> cands, double iou_thresh);

/// Same as nms() but returns indices into `cands` in kept order.
std::vector<std::size_t> nms_indices(std::span<const ScoredBox> cands, double iou_thresh);

}  // namespace geom
}  // namespace virl
