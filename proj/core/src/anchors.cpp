#include "scm/anchors.hpp"

#include <cmath>

#include "scm/metrics.hpp"

namespace scm {

std::vector<Anchor> generate_anchors(int stride, const std::vector<double>& scales,
                                     const std::vector<double>& ratios, int image_size) {
    if (stride <= 0 || image_size % stride != 0) {
        throw ConfigError("generate_anchors: stride " + std::to_string(stride) +
                          " must divide image size " + std::to_string(image_size));
    }
    if (scales.empty() || ratios.empty()) {
        throw ConfigError("generate_anchors: need at least one scale and one ratio");
    }
    const int cells = image_size / stride;
    std::vector<Anchor> anchors;
    anchors.reserve(static_cast<std::size_t>(cells) * cells * scales.size() * ratios.size());
    for (int y = 0; y < cells; ++y) {
        for (int x = 0; x < cells; ++x) {
            const double cx = (x + 0.5) * stride;
            const double cy = (y + 0.5) * stride;
            for (double s : scales) {
                for (double r : ratios) {
                    const double root = std::sqrt(r);
                    anchors.push_back({cx, cy, s * root, s / root});
                }
            }
        }
    }
    return anchors;
}

namespace {

void require_positive_extent(double w, double h, const char* what) {
    if (!(w > 0.0) || !(h > 0.0)) {
        throw DomainError(std::string(what) + ": non-positive extent");
    }
}

}  // namespace

std::array<double, 4> encode_box(const Anchor& anchor, const Box& box) {
    require_positive_extent(anchor.w, anchor.h, "encode_box anchor");
    require_positive_extent(box.width(), box.height(), "encode_box box");
    return {
        (box.cx() - anchor.cx) / anchor.w,
        (box.cy() - anchor.cy) / anchor.h,
        std::log(box.width() / anchor.w),
        std::log(box.height() / anchor.h),
    };
}

Box decode_box(const Anchor& anchor, const std::array<double, 4>& deltas) {
    require_positive_extent(anchor.w, anchor.h, "decode_box anchor");
    const double cx = anchor.cx + deltas[0] * anchor.w;
    const double cy = anchor.cy + deltas[1] * anchor.h;
    const double w = anchor.w * std::exp(deltas[2]);
    const double h = anchor.h * std::exp(deltas[3]);
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<AnchorTarget> match_anchors(const std::vector<Anchor>& anchors,
                                        const std::vector<InstanceRecord>& ground_truth,
                                        double iou_threshold) {
    std::vector<AnchorTarget> targets(anchors.size());
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const Box abox = anchors[i].to_box();
        double best = 0.0;
        int best_gt = -1;
        for (std::size_t g = 0; g < ground_truth.size(); ++g) {
            const double iou = box_iou(abox, ground_truth[g].box);
            if (iou > best) {
                best = iou;
                best_gt = static_cast<int>(g);
            }
        }
        if (best_gt >= 0 && best > iou_threshold) {
            targets[i].positive = true;
            targets[i].class_id = ground_truth[static_cast<std::size_t>(best_gt)].class_id;
            targets[i].deltas =
                encode_box(anchors[i], ground_truth[static_cast<std::size_t>(best_gt)].box);
            targets[i].gt_index = best_gt;
        }
    }
    return targets;
}

}  // namespace scm
