// SPDX-License-Identifier: Apache-2.0
#include "virl/kernels.hpp"

#include "box_math.hpp"
#include "virl/error.hpp"

#if defined(VIRL_HAVE_AVX2_KERNELS)
#include <immintrin.h>
#endif

namespace virl::kernels::avx2 {

#if defined(VIRL_HAVE_AVX2_KERNELS)

#define VIRL_AVX2 __attribute__((target("avx2")))

namespace {

struct Lanes {
    __m256d x1, y1, x2, y2;
};

// Four consecutive boxes (AoS) -> one register per coordinate.
VIRL_AVX2 inline Lanes load4(const Box* b) {
    const double* p = &b->x1;
    const __m256d r0 = _mm256_loadu_pd(p);
    const __m256d r1 = _mm256_loadu_pd(p + 4);
    const __m256d r2 = _mm256_loadu_pd(p + 8);
    const __m256d r3 = _mm256_loadu_pd(p + 12);
    const __m256d t0 = _mm256_unpacklo_pd(r0, r1);
    const __m256d t1 = _mm256_unpackhi_pd(r0, r1);
    const __m256d t2 = _mm256_unpacklo_pd(r2, r3);
    const __m256d t3 = _mm256_unpackhi_pd(r2, r3);
    return {_mm256_permute2f128_pd(t0, t2, 0x20), _mm256_permute2f128_pd(t1, t3, 0x20),
            _mm256_permute2f128_pd(t0, t2, 0x31), _mm256_permute2f128_pd(t1, t3, 0x31)};
}

// Matches detail::overlap_len: min/max select the same operand as the scalar
// ternaries for finite inputs, and max(len, +0) maps -0 to +0.
VIRL_AVX2 inline __m256d overlap_len(__m256d lo_a, __m256d hi_a, __m256d lo_b, __m256d hi_b) {
    const __m256d hi = _mm256_min_pd(hi_a, hi_b);
    const __m256d lo = _mm256_max_pd(lo_a, lo_b);
    return _mm256_max_pd(_mm256_sub_pd(hi, lo), _mm256_setzero_pd());
}

}  // namespace

VIRL_AVX2 void iou_one_to_many(const Box& a, std::span<const Box> boxes, std::span<double> out) {
    const std::size_t n = boxes.size();
    const __m256d ax1 = _mm256_set1_pd(a.x1);
    const __m256d ay1 = _mm256_set1_pd(a.y1);
    const __m256d ax2 = _mm256_set1_pd(a.x2);
    const __m256d ay2 = _mm256_set1_pd(a.y2);
    const __m256d area_a = _mm256_set1_pd((a.x2 - a.x1) * (a.y2 - a.y1));
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const Lanes b = load4(boxes.data() + i);
        const __m256d iw = overlap_len(ax1, ax2, b.x1, b.x2);
        const __m256d ih = overlap_len(ay1, ay2, b.y1, b.y2);
        const __m256d inter = _mm256_mul_pd(iw, ih);
        const __m256d area_b = _mm256_mul_pd(_mm256_sub_pd(b.x2, b.x1), _mm256_sub_pd(b.y2, b.y1));
        const __m256d uni = _mm256_sub_pd(_mm256_add_pd(area_a, area_b), inter);
        const __m256d positive = _mm256_cmp_pd(uni, zero, _CMP_GT_OQ);
        const __m256d ratio = _mm256_div_pd(inter, uni);
        _mm256_storeu_pd(out.data() + i, _mm256_blendv_pd(zero, ratio, positive));
    }
    for (; i < n; ++i) out[i] = detail::iou_unchecked(a, boxes[i]);
}

VIRL_AVX2 void coverage_many(std::span<const Box> preds, const Box& gt, std::span<double> out) {
    const std::size_t n = preds.size();
    const __m256d gx1 = _mm256_set1_pd(gt.x1);
    const __m256d gy1 = _mm256_set1_pd(gt.y1);
    const __m256d gx2 = _mm256_set1_pd(gt.x2);
    const __m256d gy2 = _mm256_set1_pd(gt.y2);
    const __m256d area_gt = _mm256_set1_pd((gt.x2 - gt.x1) * (gt.y2 - gt.y1));
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const Lanes p = load4(preds.data() + i);
        // Operand order follows coverage_unchecked(pred, gt): pred is the "a" side.
        const __m256d iw = overlap_len(p.x1, p.x2, gx1, gx2);
        const __m256d ih = overlap_len(p.y1, p.y2, gy1, gy2);
        _mm256_storeu_pd(out.data() + i, _mm256_div_pd(_mm256_mul_pd(iw, ih), area_gt));
    }
    for (; i < n; ++i) out[i] = detail::coverage_unchecked(preds[i], gt);
}

#undef VIRL_AVX2

#else

void iou_one_to_many(const Box&, std::span<const Box>, std::span<double>) {
    throw Error("backend-unavailable", "AVX2 kernels were not compiled into this build");
}

void coverage_many(std::span<const Box>, const Box&, std::span<double>) {
    throw Error("backend-unavailable", "AVX2 kernels were not compiled into this build");
}

#endif

}  // namespace virl::kernels::avx2
