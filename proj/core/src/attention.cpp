#include "scm/attention.hpp"

#include <cmath>

#include "scm/ops.hpp"

namespace scm {

using Var = GradientTape::Var;

void AttentionConfig::validate() const {
    if (patch_size < 1) throw ConfigError("attention: patch_size must be >= 1");
    if (head_count < 1) throw ConfigError("attention: head_count must be >= 1");
    if (layer_count < 0) throw ConfigError("attention: layer_count must be >= 0");
    if (model_dim < 1) throw ConfigError("attention: model_dim must be >= 1");
    if (model_dim % head_count != 0) {
        throw ConfigError("attention: model_dim " + std::to_string(model_dim) +
                          " not divisible by head_count " + std::to_string(head_count));
    }
}

Tensor sinusoidal_position_encoding(int length, int dim) {
    Tensor pe({length, dim});
    for (int pos = 0; pos < length; ++pos) {
        for (int j = 0; j < dim; ++j) {
            const double freq = std::pow(10000.0, -2.0 * (j / 2) / static_cast<double>(dim));
            const double angle = pos * freq;
            pe.at(pos, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

namespace {

Tensor normal_tensor(std::vector<int> shape, double stddev, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

}  // namespace

ScmLayerWeights make_scm_layer_weights(const AttentionConfig& cfg, int channels,
                                       std::mt19937_64& rng) {
    cfg.validate();
    const int patch_dim = cfg.patch_size * cfg.patch_size * channels;
    const int D = cfg.model_dim;
    const int dh = cfg.head_dim();
    const int hidden = cfg.hidden_dim();

    ScmLayerWeights w;
    w.w_embed = normal_tensor({patch_dim, D}, std::sqrt(1.0 / patch_dim), rng);
    w.ln1_gain = Tensor::full({D}, 1.0);
    w.ln1_bias = Tensor({D});
    for (int h = 0; h < cfg.head_count; ++h) {
        w.w_q.push_back(normal_tensor({D, dh}, std::sqrt(1.0 / D), rng));
        w.w_k.push_back(normal_tensor({D, dh}, std::sqrt(1.0 / D), rng));
        w.w_v.push_back(normal_tensor({D, dh}, std::sqrt(1.0 / D), rng));
    }
    w.ln2_gain = Tensor::full({dh}, 1.0);
    w.ln2_bias = Tensor({dh});
    w.mlp_w1 = normal_tensor({dh, hidden}, std::sqrt(2.0 / dh), rng);
    w.mlp_b1 = Tensor({hidden});
    w.mlp_w2 = normal_tensor({hidden, dh}, std::sqrt(2.0 / hidden), rng);
    w.mlp_b2 = Tensor({dh});
    w.w_out = normal_tensor({dh, patch_dim}, std::sqrt(1.0 / dh), rng);
    if (cfg.sequence_length > 0) {
        w.pos_encoding = sinusoidal_position_encoding(cfg.sequence_length, D);
    }
    return w;
}

ScmLayerVars bind_scm_layer(GradientTape& tape, const ScmLayerWeights& w, bool trainable) {
    ScmLayerVars v;
    auto bind = [&](const Tensor& t) { return tape.leaf(t, trainable); };
    v.w_embed = bind(w.w_embed);
    v.ln1_gain = bind(w.ln1_gain);
    v.ln1_bias = bind(w.ln1_bias);
    for (const Tensor& t : w.w_q) v.w_q.push_back(bind(t));
    for (const Tensor& t : w.w_k) v.w_k.push_back(bind(t));
    for (const Tensor& t : w.w_v) v.w_v.push_back(bind(t));
    v.ln2_gain = bind(w.ln2_gain);
    v.ln2_bias = bind(w.ln2_bias);
    v.mlp_w1 = bind(w.mlp_w1);
    v.mlp_b1 = bind(w.mlp_b1);
    v.mlp_w2 = bind(w.mlp_w2);
    v.mlp_b2 = bind(w.mlp_b2);
    v.w_out = bind(w.w_out);
    v.pos_encoding = tape.constant(w.pos_encoding);
    return v;
}

std::vector<Var> partition_patches(GradientTape& tape, Var f, int P) {
    const Tensor& vf = tape.value(f);
    if (vf.rank() != 3) throw ShapeError("partition_patches: expected [H,W,C] map");
    const int H = vf.dim(0), W = vf.dim(1), C = vf.dim(2);
    if (P < 1 || H % P != 0 || W % P != 0) {
        throw ConfigError("partition_patches: patch size " + std::to_string(P) +
                          " does not divide " + std::to_string(H) + "x" + std::to_string(W));
    }
    std::vector<Var> patches;
    patches.reserve(static_cast<std::size_t>((H / P) * (W / P)));
    for (int pr = 0; pr < H / P; ++pr) {
        for (int pc = 0; pc < W / P; ++pc) {
            std::vector<std::int64_t> idx;
            idx.reserve(static_cast<std::size_t>(P) * P * C);
            for (int y = 0; y < P; ++y) {
                for (int x = 0; x < P; ++x) {
                    const std::int64_t base =
                        (static_cast<std::int64_t>(pr * P + y) * W + (pc * P + x)) * C;
                    for (int c = 0; c < C; ++c) idx.push_back(base + c);
                }
            }
            patches.push_back(tape.gather(f, std::move(idx), {P, P, C}));
        }
    }
    return patches;
}

Var merge_patches(GradientTape& tape, const std::vector<Var>& patches, int P, int H, int W) {
    if (P < 1 || H % P != 0 || W % P != 0) {
        throw ShapeError("merge_patches: inconsistent patch size");
    }
    const int rows = H / P, cols = W / P;
    if (static_cast<int>(patches.size()) != rows * cols) {
        throw ShapeError("merge_patches: expected " + std::to_string(rows * cols) +
                         " patches, got " + std::to_string(patches.size()));
    }
    std::vector<Var> bands;
    bands.reserve(static_cast<std::size_t>(rows));
    for (int pr = 0; pr < rows; ++pr) {
        std::vector<Var> band(patches.begin() + static_cast<std::ptrdiff_t>(pr) * cols,
                              patches.begin() + static_cast<std::ptrdiff_t>(pr + 1) * cols);
        bands.push_back(cols == 1 ? band[0] : tape.concat(band, 1));
    }
    return rows == 1 ? bands[0] : tape.concat(bands, 0);
}

Var patch_channel_attention(GradientTape& tape, Var patch, bool literal_gram) {
    const Tensor& vp = tape.value(patch);
    if (vp.rank() != 3) throw ShapeError("patch_channel_attention: expected [h,w,C] patch");
    const int h = vp.dim(0), w = vp.dim(1), C = vp.dim(2);
    const Var obar = tape.reshape(patch, {h * w, C});
    Var attended;
    if (literal_gram) {
        const Var m = tape.matmul(obar, tape.transpose(obar));  // [hw, hw]
        attended = tape.matmul(m, obar);                        // [hw, C]
    } else {
        const Var m = tape.matmul(tape.transpose(obar), obar);  // [C, C]
        attended = tape.matmul(obar, m);                        // [hw, C]
    }
    const Var s = tape.softmax(attended, 1);  // across the channel axis
    return tape.add(patch, tape.reshape(s, {h, w, C}));
}

Var tokenize_with_position(GradientTape& tape, const std::vector<Var>& patches, Var w_embed,
                           Var pos_encoding) {
    if (patches.empty()) throw ShapeError("tokenize_with_position: no patches");
    const Tensor& first = tape.value(patches[0]);
    const int patch_dim = static_cast<int>(first.numel());
    std::vector<Var> rows;
    rows.reserve(patches.size());
    for (Var p : patches) {
        if (tape.value(p).numel() != patch_dim) {
            throw ShapeError("tokenize_with_position: patches differ in size");
        }
        rows.push_back(tape.reshape(p, {1, patch_dim}));
    }
    const Var flat = rows.size() == 1 ? rows[0] : tape.concat(rows, 0);  // [d, P*P*C]
    const Var projected = tape.matmul(flat, w_embed);                    // [d, D]
    const Tensor& pe = tape.value(pos_encoding);
    const int d = static_cast<int>(patches.size());
    if (pe.rank() != 2 || pe.dim(0) < d || pe.dim(1) != tape.value(projected).dim(1)) {
        throw ShapeError("tokenize_with_position: positional table too small");
    }
    const Var pe_rows = pe.dim(0) == d ? pos_encoding : tape.slice(pos_encoding, 0, 0, d);
    return tape.add(projected, pe_rows);
}

Var multi_head_attention(GradientTape& tape, Var tokens, const std::vector<Var>& w_q,
                         const std::vector<Var>& w_k, const std::vector<Var>& w_v) {
    const Tensor& vt = tape.value(tokens);
    if (vt.rank() != 2) throw ShapeError("multi_head_attention: expected [d, D] tokens");
    const int N = static_cast<int>(w_q.size());
    if (N < 1 || w_k.size() != w_q.size() || w_v.size() != w_q.size()) {
        throw ConfigError("multi_head_attention: inconsistent head weights");
    }
    const int D = vt.dim(1);
    const int dh = tape.value(w_q[0]).dim(1);
    if (D % N != 0 || tape.value(w_q[0]).dim(0) != D) {
        throw ConfigError("multi_head_attention: model dim not divisible by head count");
    }
    Var acc = -1;
    for (int n = 0; n < N; ++n) {
        const Var q = tape.matmul(tokens, w_q[static_cast<std::size_t>(n)]);
        const Var k = tape.matmul(tokens, w_k[static_cast<std::size_t>(n)]);
        const Var v = tape.matmul(tokens, w_v[static_cast<std::size_t>(n)]);
        Var logits = tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / std::sqrt(dh));
        logits = tape.instance_normalize(logits);
        const Var weights = tape.softmax(logits, 1);
        const Var head = tape.matmul(weights, v);  // [d, dh]
        acc = (n == 0) ? head : tape.add(acc, head);
    }
    return tape.scale(acc, 1.0 / N);  // heads averaged, no output projection
}

namespace {

Var mlp_forward(GradientTape& tape, Var x, const ScmLayerVars& v) {
    Var h = tape.add_rowvec(tape.matmul(x, v.mlp_w1), v.mlp_b1);
    h = tape.gelu(h);
    return tape.add_rowvec(tape.matmul(h, v.mlp_w2), v.mlp_b2);
}

}  // namespace

Var scm_layer_forward(GradientTape& tape, Var feature_map, const AttentionConfig& cfg,
                      const ScmLayerVars& vars) {
    cfg.validate();
    const Tensor& vf = tape.value(feature_map);
    const int H = vf.dim(0), W = vf.dim(1), C = vf.dim(2);

    std::vector<Var> patches = partition_patches(tape, feature_map, cfg.patch_size);
    if (cfg.channel_attention) {
        for (Var& p : patches) p = patch_channel_attention(tape, p, cfg.literal_channel_gram);
    }
    Var tokens = tokenize_with_position(tape, patches, vars.w_embed, vars.pos_encoding);
    tokens = tape.layer_normalize(tokens, vars.ln1_gain, vars.ln1_bias);
    const Var ma = multi_head_attention(tape, tokens, vars.w_q, vars.w_k, vars.w_v);
    const Var normed = tape.layer_normalize(ma, vars.ln2_gain, vars.ln2_bias);
    const Var out_tokens = tape.add(ma, mlp_forward(tape, normed, vars));  // O = MA + MLP(MA)

    const Var back = tape.matmul(out_tokens, vars.w_out);  // [d, P*P*C]
    const int P = cfg.patch_size;
    const int d = static_cast<int>(patches.size());
    std::vector<Var> out_patches;
    out_patches.reserve(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
        out_patches.push_back(tape.reshape(tape.slice(back, 0, i, 1), {P, P, C}));
    }
    return merge_patches(tape, out_patches, P, H, W);
}

Var scm_block_forward(GradientTape& tape, Var feature_map, const AttentionConfig& cfg,
                      const std::vector<ScmLayerVars>& layers) {
    if (static_cast<int>(layers.size()) != cfg.layer_count) {
        throw ConfigError("scm_block_forward: expected " + std::to_string(cfg.layer_count) +
                          " layer weight sets, got " + std::to_string(layers.size()));
    }
    Var out = feature_map;
    for (const ScmLayerVars& v : layers) out = scm_layer_forward(tape, out, cfg, v);
    return out;
}

Tensor scm_block_forward(const Tensor& feature_map, const AttentionConfig& cfg,
                         const std::vector<ScmLayerWeights>& layers) {
    GradientTape tape;
    const Var f = tape.constant(feature_map);
    std::vector<ScmLayerVars> vars;
    vars.reserve(layers.size());
    for (const ScmLayerWeights& w : layers) vars.push_back(bind_scm_layer(tape, w, false));
    return tape.value(scm_block_forward(tape, f, cfg, vars));
}

}  // namespace scm
