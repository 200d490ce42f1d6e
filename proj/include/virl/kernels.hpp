// SPDX-License-Identifier: Apache-2.0
#pragma once

// Batched box kernels. Every kernel has a scalar reference and an AVX2 variant;
// the public entry points dispatch at runtime on CPU support. Both variants
// evaluate the same expression tree in the same order (no FMA contraction),
// so their outputs are bitwise identical.

#include <span>
#include <string_view>

#include "virl/geom.hpp"

namespace virl::kernels {

enum class Backend { scalar, avx2 };

std::string_view backend_name(Backend b);

/// True when this binary was built with the AVX2 variant and the CPU reports AVX2.
bool avx2_available();

/// Backend used by the dispatching entry points.
Backend active_backend();

/// Pin the dispatch target (tests and benchmarks). Requesting avx2 on a machine
/// without it throws virl::Error("backend-unavailable").
void set_backend(Backend b);

/// Restore CPU-detected dispatch.
void reset_backend();

/// out[i] = iou(a, boxes[i]). out.size() must equal boxes.size().
void iou_one_to_many(const Box& a, std::span<const Box> boxes, std::span<double> out);

/// out[i] = coverage(preds[i], gt). gt must have positive area.
void coverage_many(std::span<const Box> preds, const Box& gt, std::span<double> out);

namespace scalar {
void iou_one_to_many(const Box& a, std::span<const Box> boxes, std::span<double> out);
void coverage_many(std::span<const Box> preds, const Box& gt, std::span<double> out);
}  // namespace scalar

namespace avx2 {
void iou_one_to_many(const Box& a, std::span<const Box> boxes, std::span<double> out);
void coverage_many(std::span<const Box> preds, const Box& gt, std::span<double> out);
}  // namespace avx2

}  // namespace virl::kernels
