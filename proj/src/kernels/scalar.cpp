// SPDX-License-Identifier: Apache-2.0
#include "virl/kernels.hpp"

#include "box_math.hpp"

namespace virl::kernels::scalar {

void iou_one_to_many(const Box& a, std::span<const Box> boxes, std::span<double> out) {
    for (std::size_t i = 0; i < boxes.size(); ++i) out[i] = detail::iou_unchecked(a, boxes[i]);
}

void coverage_many(std::span<const Box> preds, const Box& gt, std::span<double> out) {
    for (std::size_t i = 0; i < preds.size(); ++i) out[i] = detail::coverage_unchecked(preds[i], gt);
}

}  // namespace virl::kernels::scalar
