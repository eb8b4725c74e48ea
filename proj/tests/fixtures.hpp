#pragma once

// Desk-scale model/data fixtures shared by the network, training, and
// acceptance suites.

#include "scm/dataset.hpp"
#include "scm/network.hpp"
#include "scm/train.hpp"

namespace scm::fixtures {

/// Tiny 2-stage network on 8x8 inputs, small enough for end-to-end
/// finite-difference checks over every parameter.
inline NetworkConfig gradcheck_network() {
    NetworkConfig cfg;
    cfg.input_size = 8;
    cfg.stem_width = 1;
    cfg.stage_widths = {2, 3};
    cfg.variant = HeadVariant::kFullScm;
    cfg.attn_heads = 2;
    cfg.attn_layers = 1;
    cfg.attn_model_dim = 4;
    cfg.attn_mlp_hidden = 6;
    cfg.attn_base_patch = 4;
    cfg.det_head_width = 2;
    cfg.seg_head_width = 2;
    cfg.anchor_scales = {4.0};
    cfg.anchor_ratios = {1.0};
    return cfg;
}

/// Mini training network on 32x32 images: fast enough to train for tens of
/// epochs in seconds yet expressive enough for directional comparisons.
inline NetworkConfig mini_network(HeadVariant variant, SegMode seg_mode = SegMode::kBinary) {
    NetworkConfig cfg;
    cfg.input_size = 32;
    cfg.stem_width = 4;
    cfg.stage_widths = {8, 16};
    cfg.variant = variant;
    cfg.seg_mode = seg_mode;
    cfg.attn_heads = 2;
    cfg.attn_layers = 1;
    cfg.attn_model_dim = 8;
    cfg.attn_mlp_hidden = 16;
    cfg.attn_base_patch = 8;
    cfg.det_head_width = 16;
    cfg.seg_head_width = 8;
    cfg.anchor_scales = {8.0, 16.0};
    cfg.anchor_ratios = {0.5, 1.0, 2.0};
    return cfg;
}

inline SceneSpec mini_scene_spec(std::uint64_t seed, int image_size = 32) {
    SceneSpec spec;
    spec.seed = seed;
    spec.image_size = image_size;
    spec.min_defects = 1;
    spec.max_defects = 2;
    return spec;
}

inline TrainConfig mini_train_config(HeadVariant variant, std::uint64_t seed, int epochs = 8,
                                     SegMode seg_mode = SegMode::kBinary) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 4;
    cfg.learning_rate = 0.01;
    cfg.seed = seed;
    cfg.network = mini_network(variant, seg_mode);
    cfg.mask_resolution = 8;
    cfg.max_rois_per_image = 8;
    cfg.generate_spec = mini_scene_spec(900 + seed);
    cfg.generate_count = 16;
    return cfg;
}

}  // namespace scm::fixtures
