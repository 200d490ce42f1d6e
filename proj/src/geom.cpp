// SPDX-License-Identifier: Apache-2.0
#include "virl/geom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kernels/box_math.hpp"
#include "virl/error.hpp"
#include "virl/kernels.hpp"

namespace virl {

bool Box::valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x1 <= x2 &&
           y1 <= y2;
}

bool Box::contains(const Box& o) const { return x1 <= o.x1 && y1 <= o.y1 && o.x2 <= x2 && o.y2 <= y2; }

namespace geom {

Box intersect(const Box& a, const Box& b) {
    const double x1 = std::max(a.x1, b.x1);
    const double y1 = std::max(a.y1, b.y1);
    const double x2 = std::max(x1, std::min(a.x2, b.x2));
    const double y2 = std::max(y1, std::min(a.y2, b.y2));
    return {x1, y1, x2, y2};
}

double iou(const Box& a, const Box& b) { return detail::iou_unchecked(a, b); }

double coverage(const Box& pred, const Box& gt) {
    if (!(gt.area() > 0.0)) throw Error("zero-area-gt", "coverage: ground-truth box has zero area");
    return detail::coverage_unchecked(pred, gt);
}

Box clamp_box(const Box& b, const Box& bounds) {
    Box r{std::clamp(b.x1, bounds.x1, bounds.x2), std::clamp(b.y1, bounds.y1, bounds.y2),
          std::clamp(b.x2, bounds.x1, bounds.x2), std::clamp(b.y2, bounds.y1, bounds.y2)};
    return r;
}

Box pad_box(const Box& b, double frac, const Box& bounds) {
    const double dx = frac * b.width();
    const double dy = frac * b.height();
    return clamp_box({b.x1 - dx, b.y1 - dy, b.x2 + dx, b.y2 + dy}, bounds);
}

std::vector<std::size_t> nms_indices(std::span<const ScoredBox> cands, double iou_thresh) {
    const std::size_t n = cands.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return cands[a].score > cands[b].score; });

    std::vector<Box> sorted(n);
    for (std::size_t i = 0; i < n; ++i) sorted[i] = cands[order[i]].box;

    std::vector<char> suppressed(n, 0);
    std::vector<double> overlaps(n);
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < n; ++i) {
        if (suppressed[i]) continue;
        kept.push_back(order[i]);
        const std::size_t rest = n - i - 1;
        if (rest == 0) break;
        kernels::iou_one_to_many(sorted[i], std::span<const Box>(sorted).subspan(i + 1),
                                 std::span<double>(overlaps).first(rest));
        for (std::size_t j = 0; j < rest; ++j)
            if (overlaps[j] > iou_thresh) suppressed[i + 1 + j] = 1;
    }
    return kept;
}

std::vector<ScoredBox> nms(std::span<const ScoredBox> cands, double iou_thresh) {
    std::vector<ScoredBox> out;
    for (std::size_t idx : nms_indices(cands, iou_thresh)) out.push_back(cands[idx]);
    return out;
}

}  // namespace geom
}  // namespace virl
