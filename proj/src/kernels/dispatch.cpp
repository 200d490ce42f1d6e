// SPDX-License-Identifier: Apache-2.0
#include <atomic>

#include "virl/error.hpp"
#include "virl/kernels.hpp"

namespace virl::kernels {

namespace {

Backend detect() { return avx2_available() ? Backend::avx2 : Backend::scalar; }

std::atomic<Backend>& current() {
    static std::atomic<Backend> backend{detect()};
    return backend;
}

}  // namespace

std::string_view backend_name(Backend b) { return b == Backend::avx2 ? "avx2" : "scalar"; }

bool avx2_available() {
#if defined(VIRL_HAVE_AVX2_KERNELS)
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

Backend active_backend() { return current().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
    if (b == Backend::avx2 && !avx2_available())
        throw Error("backend-unavailable", "AVX2 backend requested but not available");
    current().store(b, std::memory_order_relaxed);
}

void reset_backend() { current().store(detect(), std::memory_order_relaxed); }

void iou_one_to_many(const Box& a, std::span<const Box> boxes, std::span<double> out) {
    if (active_backend() == Backend::avx2)
        avx2::iou_one_to_many(a, boxes, out);
    else
        scalar::iou_one_to_many(a, boxes, out);
}

void coverage_many(std::span<const Box> preds, const Box& gt, std::span<double> out) {
    if (gt.area() <= 0.0) throw Error("zero-area-gt", "coverage: ground-truth box has zero area");
    if (active_backend() == Backend::avx2)
        avx2::coverage_many(preds, gt, out);
    else
        scalar::coverage_many(preds, gt, out);
}

}  // namespace virl::kernels
