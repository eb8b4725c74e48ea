#include "scm/losses.hpp"

#include <cmath>

namespace scm {

using Var = GradientTape::Var;

Var detection_loss(GradientTape& tape, Var class_probs, Var deltas,
                   const std::vector<AnchorTarget>& targets, const LossConfig& cfg) {
    const Tensor& probs = tape.value(class_probs);
    const Tensor& dels = tape.value(deltas);
    if (probs.rank() != 2 || dels.rank() != 2 || dels.dim(1) != 4) {
        throw ShapeError("detection_loss: expected probs [A,K] and deltas [A,4]");
    }
    const int A = probs.dim(0);
    const int K = probs.dim(1);
    if (dels.dim(0) != A || static_cast<int>(targets.size()) != A) {
        throw ShapeError("detection_loss: predictions and targets misaligned");
    }
    const double n = cfg.anchor_normalizer > 0 ? cfg.anchor_normalizer : A;
    const double eps = cfg.prob_epsilon;

    // object-existence log loss on p* = max class probability
    Tensor pp({A});
    for (int i = 0; i < A; ++i) pp[i] = targets[static_cast<std::size_t>(i)].positive ? 1.0 : 0.0;
    const Var pstar = tape.clamp(tape.max_axis(class_probs, 1), eps, 1.0 - eps);
    const Var log_p = tape.log(pstar);
    const Var log_1mp = tape.log(tape.affine(pstar, -1.0, 1.0));
    Tensor pp_neg({A});
    for (int i = 0; i < A; ++i) pp_neg[i] = 1.0 - pp[i];
    Var obj = tape.add(tape.mul(tape.constant(pp), log_p),
                       tape.mul(tape.constant(pp_neg), log_1mp));
    Var loss = tape.scale(tape.sum(obj), -1.0 / n);

    // defect-class cross-entropy, positive anchors only
    std::vector<std::int64_t> picks;
    for (int i = 0; i < A; ++i) {
        const AnchorTarget& t = targets[static_cast<std::size_t>(i)];
        if (!t.positive) continue;
        if (t.class_id < 0 || t.class_id >= K) {
            throw ShapeError("detection_loss: target class out of range");
        }
        picks.push_back(static_cast<std::int64_t>(i) * K + t.class_id);
    }
    if (!picks.empty()) {
        const int npos = static_cast<int>(picks.size());
        const Var picked = tape.gather(class_probs, std::move(picks), {npos});
        const Var logs = tape.log(tape.clamp(picked, eps, 1.0));
        loss = tape.add(loss, tape.scale(tape.sum(logs), -1.0 / n));
    }

    // box regression, gated hard by the positivity target
    Tensor gt_deltas({A, 4});
    Tensor gate({A, 4});
    for (int i = 0; i < A; ++i) {
        const AnchorTarget& t = targets[static_cast<std::size_t>(i)];
        for (int j = 0; j < 4; ++j) {
            gt_deltas.at(i, j) = t.positive ? t.deltas[static_cast<std::size_t>(j)] : 0.0;
            gate.at(i, j) = t.positive ? 1.0 : 0.0;
        }
    }
    const Var diff = tape.sub(deltas, tape.constant(gt_deltas));
    const Var reg = tape.mul(tape.smooth_l1(diff), tape.constant(gate));
    loss = tape.add(loss, tape.scale(tape.sum(reg), cfg.lambda / n));
    return loss;
}

double detection_loss(const std::vector<AnchorPrediction>& preds,
                      const std::vector<AnchorTarget>& targets, const LossConfig& cfg) {
    if (preds.size() != targets.size()) {
        throw ShapeError("detection_loss: predictions and targets misaligned");
    }
    if (preds.empty()) return 0.0;
    const int A = static_cast<int>(preds.size());
    const int K = static_cast<int>(preds[0].class_probs.size());
    Tensor probs({A, K});
    Tensor dels({A, 4});
    for (int i = 0; i < A; ++i) {
        const AnchorPrediction& p = preds[static_cast<std::size_t>(i)];
        if (static_cast<int>(p.class_probs.size()) != K) {
            throw ShapeError("detection_loss: inconsistent class vector lengths");
        }
        double sum = 0.0;
        for (int k = 0; k < K; ++k) {
            probs.at(i, k) = p.class_probs[static_cast<std::size_t>(k)];
            sum += p.class_probs[static_cast<std::size_t>(k)];
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            throw DomainError("detection_loss: class probabilities must sum to 1");
        }
        for (int j = 0; j < 4; ++j) dels.at(i, j) = p.deltas[static_cast<std::size_t>(j)];
    }
    GradientTape tape;
    const Var loss =
        detection_loss(tape, tape.constant(probs), tape.constant(dels), targets, cfg);
    return tape.value(loss).item();
}

Var bce_loss(GradientTape& tape, Var pred, const Tensor& target, double prob_epsilon) {
    const Tensor& p = tape.value(pred);
    if (!p.same_shape(target)) throw ShapeError("bce_loss: shape mismatch");
    const Var clipped = tape.clamp(pred, prob_epsilon, 1.0 - prob_epsilon);
    Tensor neg_target(target.shape());
    for (std::int64_t i = 0; i < target.numel(); ++i) neg_target[i] = 1.0 - target[i];
    const Var pos = tape.mul(tape.constant(target), tape.log(clipped));
    const Var neg = tape.mul(tape.constant(neg_target),
                             tape.log(tape.affine(clipped, -1.0, 1.0)));
    return tape.scale(tape.sum(tape.add(pos, neg)),
                      -1.0 / static_cast<double>(target.numel()));
}

double bce_loss(const Tensor& pred, const Tensor& target, double prob_epsilon) {
    GradientTape tape;
    return tape.value(bce_loss(tape, tape.constant(pred), target, prob_epsilon)).item();
}

Var dice_loss(GradientTape& tape, Var pred, const Tensor& target, double dice_epsilon) {
    const Tensor& p = tape.value(pred);
    if (!p.same_shape(target)) throw ShapeError("dice_loss: shape mismatch");
    double gt_sum = 0.0;
    for (std::int64_t i = 0; i < target.numel(); ++i) gt_sum += target[i];
    const Var overlap = tape.sum(tape.mul(pred, tape.constant(target)));
    const Var numerator = tape.affine(overlap, 2.0, dice_epsilon);
    const Var denominator = tape.affine(tape.sum(pred), 1.0, gt_sum + dice_epsilon);
    return tape.affine(tape.div(numerator, denominator), -1.0, 1.0);
}

double dice_loss(const Tensor& pred, const Tensor& target, double dice_epsilon) {
    GradientTape tape;
    return tape.value(dice_loss(tape, tape.constant(pred), target, dice_epsilon)).item();
}

Mask make_mask_target(const Box& roi, const Mask& gt_mask, int resolution) {
    if (!(roi.width() > 0.0) || !(roi.height() > 0.0)) {
        throw DomainError("make_mask_target: zero-area RoI");
    }
    if (resolution < 1) throw ConfigError("make_mask_target: resolution must be >= 1");
    Mask out(resolution, resolution);
    for (int r = 0; r < resolution; ++r) {
        for (int c = 0; c < resolution; ++c) {
            const double sx = roi.x0 + (c + 0.5) / resolution * roi.width();
            const double sy = roi.y0 + (r + 0.5) / resolution * roi.height();
            const int px = static_cast<int>(std::floor(sx));
            const int py = static_cast<int>(std::floor(sy));
            if (px >= 0 && px < gt_mask.width && py >= 0 && py < gt_mask.height) {
                out.at(r, c) = gt_mask.at(py, px);
            }
        }
    }
    return out;
}

namespace {

Tensor mask_to_tensor(const Mask& m) {
    Tensor t({m.height, m.width});
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = m.data[static_cast<std::size_t>(i)];
    return t;
}

}  // namespace

Var segmentation_loss(GradientTape& tape, const std::vector<Var>& roi_preds,
                      const std::vector<Mask>& roi_targets, const LossConfig& cfg) {
    if (roi_preds.size() != roi_targets.size()) {
        throw ShapeError("segmentation_loss: predictions and targets misaligned");
    }
    if (roi_preds.empty()) return tape.constant(Tensor::scalar(0.0));
    Var total = -1;
    for (std::size_t i = 0; i < roi_preds.size(); ++i) {
        const Tensor target = mask_to_tensor(roi_targets[i]);
        const Var term = tape.add(bce_loss(tape, roi_preds[i], target, cfg.prob_epsilon),
                                  dice_loss(tape, roi_preds[i], target, cfg.dice_epsilon));
        total = (i == 0) ? term : tape.add(total, term);
    }
    return total;
}

double segmentation_loss(const std::vector<Tensor>& roi_preds,
                         const std::vector<Mask>& roi_targets, const LossConfig& cfg) {
    GradientTape tape;
    std::vector<Var> preds;
    preds.reserve(roi_preds.size());
    for (const Tensor& t : roi_preds) preds.push_back(tape.constant(t));
    return tape.value(segmentation_loss(tape, preds, roi_targets, cfg)).item();
}

Var multiclass_segmentation_loss(GradientTape& tape, const std::vector<Var>& roi_preds,
                                 const std::vector<std::vector<int>>& roi_targets,
                                 const LossConfig& cfg) {
    if (roi_preds.size() != roi_targets.size()) {
        throw ShapeError("multiclass_segmentation_loss: predictions and targets misaligned");
    }
    if (roi_preds.empty()) return tape.constant(Tensor::scalar(0.0));
    Var total = -1;
    for (std::size_t i = 0; i < roi_preds.size(); ++i) {
        const Tensor& p = tape.value(roi_preds[i]);
        if (p.rank() != 3) throw ShapeError("multiclass_segmentation_loss: expected [r,r,C]");
        const int pixels = p.dim(0) * p.dim(1);
        const int classes = p.dim(2);
        if (static_cast<int>(roi_targets[i].size()) != pixels) {
            throw ShapeError("multiclass_segmentation_loss: target pixel count mismatch");
        }
        std::vector<std::int64_t> picks(static_cast<std::size_t>(pixels));
        for (int px = 0; px < pixels; ++px) {
            const int cls = roi_targets[i][static_cast<std::size_t>(px)];
            if (cls < 0 || cls >= classes) {
                throw ShapeError("multiclass_segmentation_loss: class id out of range");
            }
            picks[static_cast<std::size_t>(px)] =
                static_cast<std::int64_t>(px) * classes + cls;
        }
        const Var picked = tape.gather(roi_preds[i], std::move(picks), {pixels});
        const Var logs = tape.log(tape.clamp(picked, cfg.prob_epsilon, 1.0));
        const Var term = tape.scale(tape.sum(logs), -1.0 / pixels);
        total = (i == 0) ? term : tape.add(total, term);
    }
    return total;
}

}  // namespace scm
