#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "scm/attention.hpp"
#include "scm/tape.hpp"
#include "scm/types.hpp"

namespace scm {

enum class HeadVariant { kNaive, kSpatialOnly, kFullScm };
enum class SegMode { kBinary, kMultiClass };

const char* to_string(HeadVariant v);
const char* to_string(SegMode m);
HeadVariant head_variant_from_string(const std::string& s);
SegMode seg_mode_from_string(const std::string& s);

/// Shape of the mini encoder/decoder network with attention blocks between
/// stages. Stage widths are the encoder downsampling widths; the decoder
/// mirrors them through skip concatenations.
struct NetworkConfig {
    int input_size = 224;
    int stem_width = 8;
    std::vector<int> stage_widths = {16, 32, 64, 128};
    HeadVariant variant = HeadVariant::kFullScm;
    SegMode seg_mode = SegMode::kBinary;
    int class_count = kClassCount;

    int attn_heads = 4;
    int attn_layers = 2;
    int attn_model_dim = 64;
    int attn_mlp_hidden = 0;  // 0 -> 2 * model_dim
    /// Patch size at full input resolution; halves with each downsample so
    /// the token count stays fixed across attachment sites.
    int attn_base_patch = 16;
    bool attn_literal_gram = false;

    int det_head_width = 32;
    int seg_head_width = 16;
    std::vector<double> anchor_scales = {24.0, 48.0, 96.0};
    std::vector<double> anchor_ratios = {0.5, 1.0, 2.0};

    int downsample_count() const { return static_cast<int>(stage_widths.size()); }
    int stride() const { return 1 << downsample_count(); }
    int bottleneck_size() const { return input_size / stride(); }
    int anchors_per_cell() const {
        return static_cast<int>(anchor_scales.size() * anchor_ratios.size());
    }
    int anchor_total() const {
        return bottleneck_size() * bottleneck_size() * anchors_per_cell();
    }
    int seg_channels() const {
        return seg_mode == SegMode::kBinary ? 1 : class_count + 1;
    }

    /// Attention sites: one after every encoder stage (the last is the
    /// bottleneck) and one after every decoder stage except the final
    /// full-resolution one. Zero for the naive variant.
    int attention_slot_count() const;
    int slot_resolution(int slot) const;
    int slot_channels(int slot) const;
    AttentionConfig slot_attention_config(int slot) const;

    void validate() const;
};

/// Named parameter tensors in fixed topological order.
struct Model {
    NetworkConfig cfg;
    std::vector<std::pair<std::string, Tensor>> params;

    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    bool has_param(const std::string& name) const;
    std::int64_t parameter_count() const;

private:
    mutable std::unordered_map<std::string, std::size_t> index_;
    void reindex() const;
};

/// Deterministic build: each parameter's values derive only from
/// (seed, parameter name), so variants share every common parameter.
Model build_network(const NetworkConfig& cfg, std::uint64_t seed);

/// Model checkpoint = named-tensor container with the config as metadata.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

struct ForwardResult {
    GradientTape::Var class_logits;  // [A, K]
    GradientTape::Var class_probs;   // [A, K], rows sum to 1
    GradientTape::Var deltas;        // [A, 4]
    GradientTape::Var seg_prob;      // [H, W, seg_channels]
    /// Per-layer feature maps in topology order, for CKA capture.
    std::vector<std::pair<std::string, GradientTape::Var>> activations;
};

/// Binds a model's parameters into a tape and runs forward passes on it.
class BoundModel {
public:
    BoundModel(GradientTape& tape, const Model& model, bool trainable = true);

    /// Binds onto existing tape variables (one per parameter, in the model's
    /// parameter order). Used by gradient checks that differentiate through
    /// the whole network.
    BoundModel(GradientTape& tape, const Model& model,
               const std::vector<GradientTape::Var>& existing);

    /// Image must be [input_size, input_size, 1].
    ForwardResult forward(const Tensor& image) const;

    GradientTape::Var var(const std::string& name) const;
    const std::vector<std::pair<std::string, GradientTape::Var>>& param_vars() const {
        return vars_;
    }
    const Model& model() const { return model_; }

private:
    GradientTape& tape_;
    const Model& model_;
    std::vector<std::pair<std::string, GradientTape::Var>> vars_;
    std::unordered_map<std::string, GradientTape::Var> by_name_;
};

/// Which loss a parameter belongs to: the jointly-trained encoder, the
/// detection head, or the decoder + segmentation head.
enum class ParamGroup { kSharedEncoder, kDetectionHead, kSegmentationPath };
ParamGroup classify_param(const NetworkConfig& cfg, const std::string& name);

/// Decodes, clips, and NMS-filters head outputs into scored detections.
std::vector<Detection> extract_detections(const NetworkConfig& cfg, const Tensor& class_probs,
                                          const Tensor& deltas, double score_threshold = 0.5,
                                          double nms_iou = 0.5, int max_detections = 100);

}  // namespace scm
