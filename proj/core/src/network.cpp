#include "scm/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "config_json.hpp"
#include "scm/anchors.hpp"
#include "scm/checkpoint.hpp"
#include "scm/metrics.hpp"

namespace scm {

using Var = GradientTape::Var;

const char* to_string(HeadVariant v) {
    switch (v) {
        case HeadVariant::kNaive: return "naive";
        case HeadVariant::kSpatialOnly: return "sm";
        default: return "scm";
    }
}

const char* to_string(SegMode m) {
    return m == SegMode::kBinary ? "binary" : "multiclass";
}

HeadVariant head_variant_from_string(const std::string& s) {
    if (s == "naive") return HeadVariant::kNaive;
    if (s == "sm") return HeadVariant::kSpatialOnly;
    if (s == "scm") return HeadVariant::kFullScm;
    throw ConfigError("unknown head variant '" + s + "' (naive|sm|scm)");
}

SegMode seg_mode_from_string(const std::string& s) {
    if (s == "binary") return SegMode::kBinary;
    if (s == "multiclass") return SegMode::kMultiClass;
    throw ConfigError("unknown segmentation mode '" + s + "' (binary|multiclass)");
}

int NetworkConfig::attention_slot_count() const {
    if (variant == HeadVariant::kNaive) return 0;
    return 2 * downsample_count() - 1;
}

int NetworkConfig::slot_resolution(int slot) const {
    const int s = downsample_count();
    if (slot < s) return input_size >> (slot + 1);      // encoder stage outputs
    return input_size >> (2 * s - 2 - slot);            // decoder stage outputs
}

int NetworkConfig::slot_channels(int slot) const {
    const int s = downsample_count();
    if (slot < s) return stage_widths[static_cast<std::size_t>(slot)];
    return stage_widths[static_cast<std::size_t>(2 * s - 2 - slot)];
}

AttentionConfig NetworkConfig::slot_attention_config(int slot) const {
    AttentionConfig cfg;
    const int res = slot_resolution(slot);
    cfg.patch_size = std::max(1, attn_base_patch * res / input_size);
    cfg.head_count = attn_heads;
    cfg.layer_count = attn_layers;
    cfg.model_dim = attn_model_dim;
    cfg.mlp_hidden_dim = attn_mlp_hidden;
    cfg.sequence_length = (res / cfg.patch_size) * (res / cfg.patch_size);
    cfg.channel_attention = variant == HeadVariant::kFullScm;
    cfg.literal_channel_gram = attn_literal_gram;
    return cfg;
}

void NetworkConfig::validate() const {
    if (stage_widths.empty()) throw ConfigError("network: need at least one stage");
    for (int w : stage_widths) {
        if (w < 1) throw ConfigError("network: stage width must be positive");
    }
    if (stem_width < 1) throw ConfigError("network: stem width must be positive");
    if (input_size % stride() != 0 || bottleneck_size() < 1) {
        throw ConfigError("network: input size " + std::to_string(input_size) +
                          " incompatible with " + std::to_string(downsample_count()) +
                          " downsample stages");
    }
    if (class_count < 1) throw ConfigError("network: class_count must be >= 1");
    if (anchor_scales.empty() || anchor_ratios.empty()) {
        throw ConfigError("network: need anchor scales and ratios");
    }
    if (variant != HeadVariant::kNaive) {
        for (int slot = 0; slot < attention_slot_count(); ++slot) {
            const AttentionConfig a = slot_attention_config(slot);
            a.validate();
            const int res = slot_resolution(slot);
            if (res % a.patch_size != 0) {
                throw ConfigError("network: patch size " + std::to_string(a.patch_size) +
                                  " does not divide map size " + std::to_string(res) +
                                  " at attention slot " + std::to_string(slot));
            }
        }
    }
}

void Model::reindex() const {
    index_.clear();
    for (std::size_t i = 0; i < params.size(); ++i) index_[params[i].first] = i;
}

Tensor& Model::param(const std::string& name) {
    if (index_.size() != params.size()) reindex();
    const auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("model: unknown parameter '" + name + "'");
    return params[it->second].second;
}

const Tensor& Model::param(const std::string& name) const {
    if (index_.size() != params.size()) reindex();
    const auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("model: unknown parameter '" + name + "'");
    return params[it->second].second;
}

bool Model::has_param(const std::string& name) const {
    if (index_.size() != params.size()) reindex();
    return index_.count(name) > 0;
}

std::int64_t Model::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::mt19937_64 param_rng(std::uint64_t seed, const std::string& name) {
    return std::mt19937_64(splitmix64(seed ^ fnv1a(name)));
}

Tensor conv_init(std::vector<int> shape, std::uint64_t seed, const std::string& name) {
    auto rng = param_rng(seed, name);
    const int fan_in = shape[0] * shape[1] * shape[2];
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

}  // namespace

Model build_network(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model model;
    model.cfg = cfg;
    auto add = [&model](const std::string& name, Tensor t) {
        model.params.emplace_back(name, std::move(t));
    };

    const int s_count = cfg.downsample_count();
    add("stem.w", conv_init({3, 3, 1, cfg.stem_width}, seed, "stem.w"));
    add("stem.b", Tensor({cfg.stem_width}));

    int prev = cfg.stem_width;
    for (int i = 0; i < s_count; ++i) {
        const std::string base = "enc" + std::to_string(i);
        const int width = cfg.stage_widths[static_cast<std::size_t>(i)];
        add(base + ".w", conv_init({3, 3, prev, width}, seed, base + ".w"));
        add(base + ".b", Tensor({width}));
        prev = width;
    }

    if (cfg.variant != HeadVariant::kNaive) {
        for (int slot = 0; slot < cfg.attention_slot_count(); ++slot) {
            const AttentionConfig acfg = cfg.slot_attention_config(slot);
            const int channels = cfg.slot_channels(slot);
            for (int layer = 0; layer < acfg.layer_count; ++layer) {
                const std::string base =
                    "att" + std::to_string(slot) + ".l" + std::to_string(layer);
                auto rng = param_rng(seed, base);
                ScmLayerWeights w = make_scm_layer_weights(acfg, channels, rng);
                add(base + ".embed", std::move(w.w_embed));
                add(base + ".ln1_g", std::move(w.ln1_gain));
                add(base + ".ln1_b", std::move(w.ln1_bias));
                for (int h = 0; h < acfg.head_count; ++h) {
                    add(base + ".q" + std::to_string(h), std::move(w.w_q[h]));
                    add(base + ".k" + std::to_string(h), std::move(w.w_k[h]));
                    add(base + ".v" + std::to_string(h), std::move(w.w_v[h]));
                }
                add(base + ".ln2_g", std::move(w.ln2_gain));
                add(base + ".ln2_b", std::move(w.ln2_bias));
                add(base + ".mlp1_w", std::move(w.mlp_w1));
                add(base + ".mlp1_b", std::move(w.mlp_b1));
                add(base + ".mlp2_w", std::move(w.mlp_w2));
                add(base + ".mlp2_b", std::move(w.mlp_b2));
                add(base + ".out", std::move(w.w_out));
            }
        }
    }

    int dec_in = cfg.stage_widths.back();
    for (int j = 0; j < s_count; ++j) {
        const std::string base = "dec" + std::to_string(j);
        const int skip = (j < s_count - 1)
                             ? cfg.stage_widths[static_cast<std::size_t>(s_count - 2 - j)]
                             : cfg.stem_width;
        add(base + ".up_w", conv_init({2, 2, dec_in, skip}, seed, base + ".up_w"));
        add(base + ".up_b", Tensor({skip}));
        add(base + ".w", conv_init({3, 3, 2 * skip, skip}, seed, base + ".w"));
        add(base + ".b", Tensor({skip}));
        dec_in = skip;
    }

    const int det_out = cfg.anchors_per_cell() * (cfg.class_count + 4);
    add("det.w1", conv_init({3, 3, cfg.stage_widths.back(), cfg.det_head_width}, seed, "det.w1"));
    add("det.b1", Tensor({cfg.det_head_width}));
    add("det.w2", conv_init({1, 1, cfg.det_head_width, det_out}, seed, "det.w2"));
    add("det.b2", Tensor({det_out}));

    add("seg.w1", conv_init({3, 3, cfg.stem_width, cfg.seg_head_width}, seed, "seg.w1"));
    add("seg.b1", Tensor({cfg.seg_head_width}));
    add("seg.w2", conv_init({1, 1, cfg.seg_head_width, cfg.seg_channels()}, seed, "seg.w2"));
    add("seg.b2", Tensor({cfg.seg_channels()}));

    return model;
}

// --------------------------------------------------------------------------
// checkpoint io
// --------------------------------------------------------------------------

void save_model(const Model& model, const std::string& path) {
    NamedTensors bundle;
    nlohmann::json meta;
    meta["kind"] = "scmseg-checkpoint";
    meta["config"] = detail::network_config_to_json(model.cfg);
    bundle.metadata = meta.dump();
    bundle.tensors = model.params;
    write_named_tensors(path, bundle);
}

Model load_model(const std::string& path) {
    const NamedTensors bundle = read_named_tensors(path);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(bundle.metadata);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": bad checkpoint metadata: " + e.what());
    }
    if (meta.value("kind", "") != "scmseg-checkpoint") {
        throw ParseError(path + ": not a model checkpoint");
    }
    Model model;
    model.cfg = detail::network_config_from_json(meta.at("config"));
    model.params = bundle.tensors;
    return model;
}

// --------------------------------------------------------------------------
// forward pass
// --------------------------------------------------------------------------

BoundModel::BoundModel(GradientTape& tape, const Model& model, bool trainable)
    : tape_(tape), model_(model) {
    vars_.reserve(model.params.size());
    for (const auto& [name, tensor] : model.params) {
        const Var v = tape_.leaf(tensor, trainable);
        vars_.emplace_back(name, v);
        by_name_[name] = v;
    }
}

BoundModel::BoundModel(GradientTape& tape, const Model& model, const std::vector<Var>& existing)
    : tape_(tape), model_(model) {
    if (existing.size() != model.params.size()) {
        throw ShapeError("BoundModel: variable count does not match parameter count");
    }
    vars_.reserve(model.params.size());
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        vars_.emplace_back(model.params[i].first, existing[i]);
        by_name_[model.params[i].first] = existing[i];
    }
}

Var BoundModel::var(const std::string& name) const {
    const auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ConfigError("model: unknown parameter '" + name + "'");
    return it->second;
}

ForwardResult BoundModel::forward(const Tensor& image) const {
    const NetworkConfig& cfg = model_.cfg;
    if (image.rank() != 3 || image.dim(0) != cfg.input_size || image.dim(1) != cfg.input_size ||
        image.dim(2) != 1) {
        throw ShapeError("forward: expected [" + std::to_string(cfg.input_size) + "," +
                         std::to_string(cfg.input_size) + ",1] image, got " +
                         image.shape_string());
    }
    GradientTape& tape = tape_;
    ForwardResult result;
    auto capture = [&result](const std::string& name, Var v) {
        result.activations.emplace_back(name, v);
    };

    auto attention_block = [&](int slot, Var x) {
        const AttentionConfig acfg = cfg.slot_attention_config(slot);
        std::vector<ScmLayerVars> layers;
        layers.reserve(static_cast<std::size_t>(acfg.layer_count));
        for (int l = 0; l < acfg.layer_count; ++l) {
            const std::string base = "att" + std::to_string(slot) + ".l" + std::to_string(l);
            ScmLayerVars v;
            v.w_embed = var(base + ".embed");
            v.ln1_gain = var(base + ".ln1_g");
            v.ln1_bias = var(base + ".ln1_b");
            for (int h = 0; h < acfg.head_count; ++h) {
                v.w_q.push_back(var(base + ".q" + std::to_string(h)));
                v.w_k.push_back(var(base + ".k" + std::to_string(h)));
                v.w_v.push_back(var(base + ".v" + std::to_string(h)));
            }
            v.ln2_gain = var(base + ".ln2_g");
            v.ln2_bias = var(base + ".ln2_b");
            v.mlp_w1 = var(base + ".mlp1_w");
            v.mlp_b1 = var(base + ".mlp1_b");
            v.mlp_w2 = var(base + ".mlp2_w");
            v.mlp_b2 = var(base + ".mlp2_b");
            v.w_out = var(base + ".out");
            v.pos_encoding = tape.constant(
                sinusoidal_position_encoding(acfg.sequence_length, acfg.model_dim));
            layers.push_back(std::move(v));
        }
        return scm_block_forward(tape, x, acfg, layers);
    };

    const bool attend = cfg.variant != HeadVariant::kNaive;
    const int s_count = cfg.downsample_count();

    Var x = tape.constant(image);
    x = tape.gelu(tape.conv2d(x, var("stem.w"), var("stem.b"), 1, 1));
    capture("stem", x);

    std::vector<Var> skips = {x};
    for (int i = 0; i < s_count; ++i) {
        const std::string base = "enc" + std::to_string(i);
        x = tape.gelu(tape.conv2d(x, var(base + ".w"), var(base + ".b"), 2, 1));
        capture(base, x);
        if (attend) {
            x = attention_block(i, x);
            capture("att" + std::to_string(i), x);
        }
        if (i < s_count - 1) skips.push_back(x);
    }

    // detection head on the bottleneck
    {
        Var h = tape.gelu(tape.conv2d(x, var("det.w1"), var("det.b1"), 1, 1));
        capture("det.hidden", h);
        const Var raw = tape.conv2d(h, var("det.w2"), var("det.b2"), 1, 0);
        const Var flat = tape.reshape(raw, {cfg.anchor_total(), cfg.class_count + 4});
        result.class_logits = tape.slice(flat, 1, 0, cfg.class_count);
        result.class_probs = tape.softmax(result.class_logits, 1);
        result.deltas = tape.slice(flat, 1, cfg.class_count, 4);
    }

    // decoder with skip concatenation
    Var d = x;
    for (int j = 0; j < s_count; ++j) {
        const std::string base = "dec" + std::to_string(j);
        const Var up = tape.gelu(tape.conv2d_transpose(d, var(base + ".up_w"),
                                                       var(base + ".up_b"), 2));
        const Var cat = tape.concat({up, skips[static_cast<std::size_t>(s_count - 1 - j)]}, 2);
        d = tape.gelu(tape.conv2d(cat, var(base + ".w"), var(base + ".b"), 1, 1));
        capture(base, d);
        if (attend && j < s_count - 1) {
            const int slot = s_count + j;
            d = attention_block(slot, d);
            capture("att" + std::to_string(slot), d);
        }
    }

    // segmentation head at full resolution
    {
        const Var h = tape.gelu(tape.conv2d(d, var("seg.w1"), var("seg.b1"), 1, 1));
        capture("seg.hidden", h);
        const Var logits = tape.conv2d(h, var("seg.w2"), var("seg.b2"), 1, 0);
        result.seg_prob = cfg.seg_mode == SegMode::kBinary ? tape.sigmoid(logits)
                                                           : tape.softmax(logits, 2);
    }
    return result;
}

ParamGroup classify_param(const NetworkConfig& cfg, const std::string& name) {
    if (name.rfind("det.", 0) == 0) return ParamGroup::kDetectionHead;
    if (name.rfind("seg.", 0) == 0 || name.rfind("dec", 0) == 0) {
        return ParamGroup::kSegmentationPath;
    }
    if (name.rfind("att", 0) == 0) {
        const int slot = std::stoi(name.substr(3));
        if (slot >= cfg.downsample_count()) return ParamGroup::kSegmentationPath;
    }
    return ParamGroup::kSharedEncoder;
}

std::vector<Detection> extract_detections(const NetworkConfig& cfg, const Tensor& class_probs,
                                          const Tensor& deltas, double score_threshold,
                                          double nms_iou, int max_detections) {
    const std::vector<Anchor> anchors =
        generate_anchors(cfg.stride(), cfg.anchor_scales, cfg.anchor_ratios, cfg.input_size);
    if (class_probs.rank() != 2 || class_probs.dim(0) != static_cast<int>(anchors.size()) ||
        deltas.dim(0) != static_cast<int>(anchors.size())) {
        throw ShapeError("extract_detections: outputs do not match the anchor grid");
    }
    const int K = class_probs.dim(1);

    struct Scored {
        Detection det;
        int index;
    };
    std::vector<Scored> kept;
    for (int i = 0; i < static_cast<int>(anchors.size()); ++i) {
        double best = class_probs.at(i, 0);
        for (int k = 1; k < K; ++k) best = std::max(best, class_probs.at(i, k));
        if (best < score_threshold) continue;
        Box box = decode_box(anchors[static_cast<std::size_t>(i)],
                             {deltas.at(i, 0), deltas.at(i, 1), deltas.at(i, 2), deltas.at(i, 3)});
        box.x0 = std::max(0.0, std::min<double>(box.x0, cfg.input_size));
        box.y0 = std::max(0.0, std::min<double>(box.y0, cfg.input_size));
        box.x1 = std::max(0.0, std::min<double>(box.x1, cfg.input_size));
        box.y1 = std::max(0.0, std::min<double>(box.y1, cfg.input_size));
        if (box.width() <= 1e-6 || box.height() <= 1e-6) continue;
        Detection det;
        det.box = box;
        det.class_probs.resize(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) det.class_probs[static_cast<std::size_t>(k)] =
            class_probs.at(i, k);
        kept.push_back({std::move(det), i});
    }
    std::sort(kept.begin(), kept.end(), [](const Scored& a, const Scored& b) {
        const double sa = a.det.score(), sb = b.det.score();
        if (sa != sb) return sa > sb;
        return a.index < b.index;
    });

    // greedy per-class NMS
    std::vector<Detection> out;
    for (const Scored& cand : kept) {
        if (static_cast<int>(out.size()) >= max_detections) break;
        bool suppressed = false;
        for (const Detection& sel : out) {
            if (sel.label() == cand.det.label() && box_iou(sel.box, cand.det.box) > nms_iou) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) out.push_back(cand.det);
    }
    return out;
}

}  // namespace scm
