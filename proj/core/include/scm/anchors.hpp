#pragma once

#include <array>
#include <vector>

#include "scm/types.hpp"

namespace scm {

/// Reference box tiled over the detection feature map.
struct Anchor {
    double cx = 0.0, cy = 0.0;
    double w = 0.0, h = 0.0;

    Box to_box() const { return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}; }
};

/// Dense anchor grid: one cell per stride step, scales x ratios anchors per
/// cell. Order is cell row-major, then scale, then ratio.
std::vector<Anchor> generate_anchors(int stride, const std::vector<double>& scales,
                                     const std::vector<double>& ratios, int image_size);

/// Standard box parameterization: (dx/w_a, dy/h_a, log w-ratio, log h-ratio).
std::array<double, 4> encode_box(const Anchor& anchor, const Box& box);
Box decode_box(const Anchor& anchor, const std::array<double, 4>& deltas);

/// Per-anchor regression/classification target.
struct AnchorTarget {
    bool positive = false;
    int class_id = 0;                             // valid only when positive
    std::array<double, 4> deltas = {0, 0, 0, 0};  // valid only when positive
    int gt_index = -1;  // which ground-truth instance matched, for mask targets
};

/// Anchor is positive iff its best IoU against any ground-truth box exceeds
/// the threshold; positives take that box's class and encoded deltas.
std::vector<AnchorTarget> match_anchors(const std::vector<Anchor>& anchors,
                                        const std::vector<InstanceRecord>& ground_truth,
                                        double iou_threshold);

}  // namespace scm
