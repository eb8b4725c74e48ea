#include "config_json.hpp"

namespace scm::detail {

nlohmann::json network_config_to_json(const NetworkConfig& cfg) {
    nlohmann::json j;
    j["input_size"] = cfg.input_size;
    j["stem_width"] = cfg.stem_width;
    j["stage_widths"] = cfg.stage_widths;
    j["variant"] = to_string(cfg.variant);
    j["seg_mode"] = to_string(cfg.seg_mode);
    j["class_count"] = cfg.class_count;
    j["attn_heads"] = cfg.attn_heads;
    j["attn_layers"] = cfg.attn_layers;
    j["attn_model_dim"] = cfg.attn_model_dim;
    j["attn_mlp_hidden"] = cfg.attn_mlp_hidden;
    j["attn_base_patch"] = cfg.attn_base_patch;
    j["attn_literal_gram"] = cfg.attn_literal_gram;
    j["det_head_width"] = cfg.det_head_width;
    j["seg_head_width"] = cfg.seg_head_width;
    j["anchor_scales"] = cfg.anchor_scales;
    j["anchor_ratios"] = cfg.anchor_ratios;
    return j;
}

namespace {

template <typename T>
T field(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config: bad value for field '") + key + "'");
    }
}

}  // namespace

NetworkConfig network_config_from_json(const nlohmann::json& j) {
    NetworkConfig cfg;
    cfg.input_size = field(j, "input_size", cfg.input_size);
    cfg.stem_width = field(j, "stem_width", cfg.stem_width);
    cfg.stage_widths = field(j, "stage_widths", cfg.stage_widths);
    cfg.variant = head_variant_from_string(
        field<std::string>(j, "variant", to_string(cfg.variant)));
    cfg.seg_mode = seg_mode_from_string(
        field<std::string>(j, "seg_mode", to_string(cfg.seg_mode)));
    cfg.class_count = field(j, "class_count", cfg.class_count);
    cfg.attn_heads = field(j, "attn_heads", cfg.attn_heads);
    cfg.attn_layers = field(j, "attn_layers", cfg.attn_layers);
    cfg.attn_model_dim = field(j, "attn_model_dim", cfg.attn_model_dim);
    cfg.attn_mlp_hidden = field(j, "attn_mlp_hidden", cfg.attn_mlp_hidden);
    cfg.attn_base_patch = field(j, "attn_base_patch", cfg.attn_base_patch);
    cfg.attn_literal_gram = field(j, "attn_literal_gram", cfg.attn_literal_gram);
    cfg.det_head_width = field(j, "det_head_width", cfg.det_head_width);
    cfg.seg_head_width = field(j, "seg_head_width", cfg.seg_head_width);
    cfg.anchor_scales = field(j, "anchor_scales", cfg.anchor_scales);
    cfg.anchor_ratios = field(j, "anchor_ratios", cfg.anchor_ratios);
    return cfg;
}

nlohmann::json scene_spec_to_json(const SceneSpec& spec) {
    nlohmann::json j;
    j["seed"] = spec.seed;
    j["image_size"] = spec.image_size;
    j["min_defects"] = spec.min_defects;
    j["max_defects"] = spec.max_defects;
    j["class_proportions"] = spec.class_proportions;
    j["noise_stddev"] = spec.noise_stddev;
    j["texture_amplitude"] = spec.texture_amplitude;
    return j;
}

SceneSpec scene_spec_from_json(const nlohmann::json& j) {
    SceneSpec spec;
    spec.seed = field(j, "seed", spec.seed);
    spec.image_size = field(j, "image_size", spec.image_size);
    spec.min_defects = field(j, "min_defects", spec.min_defects);
    spec.max_defects = field(j, "max_defects", spec.max_defects);
    if (j.contains("class_proportions")) {
        const auto props = j.at("class_proportions");
        if (props.size() != kClassCount) {
            throw ConfigError("config: bad value for field 'class_proportions'");
        }
        for (std::size_t i = 0; i < kClassCount; ++i) {
            spec.class_proportions[i] = props[i].get<double>();
        }
    }
    spec.noise_stddev = field(j, "noise_stddev", spec.noise_stddev);
    spec.texture_amplitude = field(j, "texture_amplitude", spec.texture_amplitude);
    return spec;
}

}  // namespace scm::detail
