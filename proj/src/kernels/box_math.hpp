// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scalar box arithmetic shared by geom and the scalar kernel backend. The AVX2
// backend mirrors these expressions lane for lane.

#include "virl/geom.hpp"

namespace virl::detail {

inline double overlap_len(double lo_a, double hi_a, double lo_b, double hi_b) {
    const double hi = hi_b < hi_a ? hi_b : hi_a;
    const double lo = lo_a < lo_b ? lo_b : lo_a;
    const double len = hi - lo;
    return len > 0.0 ? len : 0.0;
}

inline double intersection_area(const Box& a, const Box& b) {
    return overlap_len(a.x1, a.x2, b.x1, b.x2) * overlap_len(a.y1, a.y2, b.y1, b.y2);
}

inline double iou_unchecked(const Box& a, const Box& b) {
    const double inter = intersection_area(a, b);
    const double uni = ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1)) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

inline double coverage_unchecked(const Box& pred, const Box& gt) {
    return intersection_area(pred, gt) / ((gt.x2 - gt.x1) * (gt.y2 - gt.y1));
}

}  // namespace virl::detail
