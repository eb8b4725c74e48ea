#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "scm/tape.hpp"

namespace scm {

/// Configuration of one attention block (all layers at one attachment site).
struct AttentionConfig {
    int patch_size = 16;
    int head_count = 4;
    int layer_count = 2;
    int model_dim = 64;
    int mlp_hidden_dim = 0;  // 0 -> 2 * model_dim
    int sequence_length = 0; // number of patches d; derived from the bound feature map

    /// When false the block runs multi-head attention only (the SM variant).
    bool channel_attention = true;
    /// Literal hw-by-hw Gram reading of the channel attention; default is the
    /// C-by-C channel Gram.
    bool literal_channel_gram = false;

    int head_dim() const { return model_dim / head_count; }
    int hidden_dim() const { return mlp_hidden_dim > 0 ? mlp_hidden_dim : 2 * model_dim; }

    /// Throws ConfigError on invalid values (P or N < 1, D not divisible by N).
    void validate() const;
};

/// Trainable weights of a single attention layer. The positional-encoding
/// table is fixed (sinusoidal), not trained.
struct ScmLayerWeights {
    Tensor w_embed;             // [P*P*C, D]
    Tensor ln1_gain, ln1_bias;  // [D]
    std::vector<Tensor> w_q, w_k, w_v;  // per head, each [D, D/N]
    Tensor ln2_gain, ln2_bias;  // [D/N]
    Tensor mlp_w1, mlp_b1;      // [D/N, hidden], [hidden]
    Tensor mlp_w2, mlp_b2;      // [hidden, D/N], [D/N]
    Tensor w_out;               // [D/N, P*P*C]
    Tensor pos_encoding;        // [d, D]
};

/// Tape bindings for one layer's weights (same fields as ScmLayerWeights).
struct ScmLayerVars {
    GradientTape::Var w_embed, ln1_gain, ln1_bias;
    std::vector<GradientTape::Var> w_q, w_k, w_v;
    GradientTape::Var ln2_gain, ln2_bias, mlp_w1, mlp_b1, mlp_w2, mlp_b2, w_out;
    GradientTape::Var pos_encoding;
};

/// Fixed sinusoidal positional-encoding table, one row per position.
Tensor sinusoidal_position_encoding(int length, int dim);

/// Deterministic weight initialization for one layer attached to a feature
/// map with `channels` channels.
ScmLayerWeights make_scm_layer_weights(const AttentionConfig& cfg, int channels,
                                       std::mt19937_64& rng);

/// Splits an [H,W,C] map into (H/P)*(W/P) patches of [P,P,C], row-major over
/// the patch grid. Channels are untouched. Throws ConfigError when P does not
/// divide H and W (no silent padding).
std::vector<GradientTape::Var> partition_patches(GradientTape& tape, GradientTape::Var f, int P);

/// Exact inverse of partition_patches for a row-major patch list.
GradientTape::Var merge_patches(GradientTape& tape, const std::vector<GradientTape::Var>& patches,
                                int P, int H, int W);

/// Patch-level channel attention with residual:
///   obar = patch flattened to [hw, C]
///   default: m = obar^T obar (C x C),  attended = obar m
///   literal: m = obar obar^T (hw x hw), attended = m obar
///   out = patch + softmax_over_channels(attended)
GradientTape::Var patch_channel_attention(GradientTape& tape, GradientTape::Var patch,
                                          bool literal_gram = false);

/// Flattens each patch, projects to model_dim, adds positional encoding.
/// Returns a [d, D] token matrix.
GradientTape::Var tokenize_with_position(GradientTape& tape,
                                         const std::vector<GradientTape::Var>& patches,
                                         GradientTape::Var w_embed,
                                         GradientTape::Var pos_encoding);

/// Multi-head attention per head: A = softmax(instance_normalize(Q K^T / sqrt(d_h))) V,
/// with the heads averaged (not concatenated, no output projection).
GradientTape::Var multi_head_attention(GradientTape& tape, GradientTape::Var tokens,
                                       const std::vector<GradientTape::Var>& w_q,
                                       const std::vector<GradientTape::Var>& w_k,
                                       const std::vector<GradientTape::Var>& w_v);

/// One attention layer: channel attention on each patch, tokenize, layer-norm,
/// multi-head attention, MA + MLP(LN(MA)) residual, project back and merge.
/// Output shape equals input shape.
GradientTape::Var scm_layer_forward(GradientTape& tape, GradientTape::Var feature_map,
                                    const AttentionConfig& cfg, const ScmLayerVars& vars);

/// Applies layer_count layers in sequence; layer_count 0 is the identity.
GradientTape::Var scm_block_forward(GradientTape& tape, GradientTape::Var feature_map,
                                    const AttentionConfig& cfg,
                                    const std::vector<ScmLayerVars>& layers);

/// Convenience for inference/tests: runs the block on plain tensors.
Tensor scm_block_forward(const Tensor& feature_map, const AttentionConfig& cfg,
                         const std::vector<ScmLayerWeights>& layers);

/// Binds layer weights into a tape (trainable toggles requires_grad;
/// the positional table is always a constant).
ScmLayerVars bind_scm_layer(GradientTape& tape, const ScmLayerWeights& weights, bool trainable);

}  // namespace scm
