#pragma once

#include <array>
#include <vector>

#include "scm/anchors.hpp"
#include "scm/tape.hpp"
#include "scm/types.hpp"

namespace scm {

/// Per-anchor detection-head output: class probability vector (sums to 1)
/// and four box deltas. The existence score p* is the maximum class
/// probability, not a separate output.
struct AnchorPrediction {
    std::vector<double> class_probs;
    std::array<double, 4> deltas = {0, 0, 0, 0};

    double objectness() const {
        return *std::max_element(class_probs.begin(), class_probs.end());
    }
};

struct LossConfig {
    double lambda = 1.0;        // regression balance
    int anchor_normalizer = 0;  // N_anch; 0 -> number of anchors in the batch
    double iou_threshold = 0.5;
    double prob_epsilon = 1e-7;  // probability clipping
    double dice_epsilon = 1e-6;
};

/// Multi-class detection loss over aligned predictions/targets:
///   (1/N) sum_i [ bce(p*_i, pp_i) + ce(p_i, class_i | positive) ]
///   + lambda (1/N) sum_{i positive} smooth_l1(t_i - t*_i) summed over 4 coords.
/// class_probs is [A,K], deltas is [A,4].
GradientTape::Var detection_loss(GradientTape& tape, GradientTape::Var class_probs,
                                 GradientTape::Var deltas,
                                 const std::vector<AnchorTarget>& targets,
                                 const LossConfig& cfg);

double detection_loss(const std::vector<AnchorPrediction>& preds,
                      const std::vector<AnchorTarget>& targets, const LossConfig& cfg);

/// Mean binary cross-entropy; predictions clipped to [eps, 1-eps].
GradientTape::Var bce_loss(GradientTape& tape, GradientTape::Var pred, const Tensor& target,
                           double prob_epsilon = 1e-7);
double bce_loss(const Tensor& pred, const Tensor& target, double prob_epsilon = 1e-7);

/// 1 - (2 sum(pred*gt) + eps) / (sum pred + sum gt + eps).
GradientTape::Var dice_loss(GradientTape& tape, GradientTape::Var pred, const Tensor& target,
                            double dice_epsilon = 1e-6);
double dice_loss(const Tensor& pred, const Tensor& target, double dice_epsilon = 1e-6);

/// Ground-truth mask cropped to the RoI and nearest-neighbor resampled to
/// resolution x resolution. Throws DomainError on a zero-area RoI.
Mask make_mask_target(const Box& roi, const Mask& gt_mask, int resolution);

/// Sum over positive RoIs of bce + dice; empty set -> 0.
GradientTape::Var segmentation_loss(GradientTape& tape,
                                    const std::vector<GradientTape::Var>& roi_preds,
                                    const std::vector<Mask>& roi_targets, const LossConfig& cfg);
double segmentation_loss(const std::vector<Tensor>& roi_preds,
                         const std::vector<Mask>& roi_targets, const LossConfig& cfg);

/// Multi-class ablation arm: per-RoI pixel cross-entropy against class-id
/// targets (0 = background), summed over RoIs. roi_preds are [r,r,K+1]
/// probability maps; targets hold class ids per pixel.
GradientTape::Var multiclass_segmentation_loss(GradientTape& tape,
                                               const std::vector<GradientTape::Var>& roi_preds,
                                               const std::vector<std::vector<int>>& roi_targets,
                                               const LossConfig& cfg);

}  // namespace scm
