#include <cmath>
#include <random>

#include "doctest.h"
#include "scm/attention.hpp"
#include "scm/gradcheck.hpp"
#include "scm/ops.hpp"
#include "test_util.hpp"

using namespace scm;
using Var = GradientTape::Var;

namespace {

AttentionConfig small_config(int P, int heads, int layers, int D, int d) {
    AttentionConfig cfg;
    cfg.patch_size = P;
    cfg.head_count = heads;
    cfg.layer_count = layers;
    cfg.model_dim = D;
    cfg.mlp_hidden_dim = 2 * D;
    cfg.sequence_length = d;
    return cfg;
}

std::vector<ScmLayerWeights> make_layers(const AttentionConfig& cfg, int channels,
                                         std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<ScmLayerWeights> layers;
    for (int l = 0; l < cfg.layer_count; ++l) {
        layers.push_back(make_scm_layer_weights(cfg, channels, rng));
    }
    return layers;
}

}  // namespace

TEST_CASE("attention config validation") {
    CHECK_THROWS_AS(small_config(0, 1, 1, 4, 1).validate(), ConfigError);
    CHECK_THROWS_AS(small_config(2, 3, 1, 4, 1).validate(), ConfigError);  // 4 % 3 != 0
    CHECK_NOTHROW(small_config(2, 2, 1, 4, 1).validate());
}

TEST_CASE("partition_patches examples") {
    GradientTape tape;
    const Tensor f8 = testutil::random_tensor({8, 8, 4}, 1);
    const Var v8 = tape.constant(f8);

    // identity partition
    auto one = partition_patches(tape, v8, 8);
    REQUIRE(one.size() == 1);
    CHECK(tape.value(one[0]).data() == f8.data());

    // round trip through merge
    const Tensor f16 = testutil::random_tensor({16, 16, 4}, 2);
    const Var v16 = tape.constant(f16);
    auto four = partition_patches(tape, v16, 8);
    REQUIRE(four.size() == 4);
    const Var merged = merge_patches(tape, four, 8, 16, 16);
    CHECK(tape.value(merged).data() == f16.data());

    // patch count arithmetic at the full default scale
    const Var big = tape.constant(Tensor({224, 224, 1}));
    CHECK(partition_patches(tape, big, 16).size() == 196);

    // no silent padding
    CHECK_THROWS_AS(partition_patches(tape, v16, 5), ConfigError);
}

TEST_CASE("merge_patches is order-sensitive") {
    GradientTape tape;
    const Tensor f = testutil::random_tensor({4, 4, 2}, 3);
    const Var v = tape.constant(f);
    auto patches = partition_patches(tape, v, 2);
    REQUIRE(patches.size() == 4);
    std::swap(patches[1], patches[2]);
    const Tensor shuffled = tape.value(merge_patches(tape, patches, 2, 4, 4));
    // permutation oracle: block (0,1) now holds original block (1,0)
    for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) {
            for (int c = 0; c < 2; ++c) {
                CHECK(shuffled.at(y, 2 + x, c) == f.at(2 + y, x, c));
                CHECK(shuffled.at(2 + y, x, c) == f.at(y, 2 + x, c));
            }
        }
    }
    CHECK_THROWS_AS(merge_patches(tape, {patches[0]}, 2, 4, 4), ShapeError);
}

TEST_CASE("patch_channel_attention examples") {
    GradientTape tape;

    // all-zero patch: residual 0 + uniform channel softmax of zeros
    const Var zeros = tape.constant(Tensor({2, 2, 4}));
    const Tensor out = tape.value(patch_channel_attention(tape, zeros));
    for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(0.25));

    // shape contract
    const Var r = tape.constant(testutil::random_tensor({4, 4, 3}, 5));
    CHECK(tape.value(patch_channel_attention(tape, r)).shape() == std::vector<int>{4, 4, 3});
    CHECK(tape.value(patch_channel_attention(tape, r, true)).shape() ==
          std::vector<int>{4, 4, 3});

    // frozen hand evaluation: 1x1x2 patch [1,0] under the default channel Gram
    const Var p = tape.constant(Tensor({1, 1, 2}, {1.0, 0.0}));
    const Tensor q = tape.value(patch_channel_attention(tape, p));
    CHECK(q[0] == doctest::Approx(1.7310585786300049).epsilon(1e-12));
    CHECK(q[1] == doctest::Approx(0.2689414213699951).epsilon(1e-12));
}

TEST_CASE("channel-gram and spatial-gram routes agree by associativity") {
    // obar (obar^T obar) == (obar obar^T) obar, so the two readings compute
    // the same attended matrix, just in a different association order.
    GradientTape tape;
    const Var p = tape.constant(testutil::random_tensor({2, 2, 3}, 17));
    const Tensor a = tape.value(patch_channel_attention(tape, p, false));
    const Tensor b = tape.value(patch_channel_attention(tape, p, true));
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
    }
}

TEST_CASE("tokenize_with_position examples") {
    GradientTape tape;
    const int C = 2, P = 2, D = 6;
    const Tensor pe = sinusoidal_position_encoding(4, D);

    // zero projection weights: tokens equal the positional encodings alone
    const Var wz = tape.constant(Tensor({P * P * C, D}));
    const Var pev = tape.constant(pe);
    std::vector<Var> patches = {tape.constant(testutil::random_tensor({P, P, C}, 1)),
                                tape.constant(testutil::random_tensor({P, P, C}, 2))};
    const Tensor toks = tape.value(tokenize_with_position(tape, patches, wz, pev));
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < D; ++j) CHECK(toks.at(i, j) == doctest::Approx(pe.at(i, j)));
    }

    // single patch gets positional index 0; identical patches differ only by
    // the positional-encoding difference (subtraction oracle)
    const Var w = tape.constant(testutil::random_tensor({P * P * C, D}, 3));
    std::vector<Var> single = {patches[0]};
    const Tensor t1 = tape.value(tokenize_with_position(tape, single, w, pev));
    std::vector<Var> twin = {patches[0], patches[0]};
    const Tensor t2 = tape.value(tokenize_with_position(tape, twin, w, pev));
    for (int j = 0; j < D; ++j) {
        CHECK(t2.at(0, j) == doctest::Approx(t1.at(0, j)));
        CHECK(t2.at(1, j) - t2.at(0, j) ==
              doctest::Approx(pe.at(1, j) - pe.at(0, j)).epsilon(1e-9));
    }
}

TEST_CASE("multi_head_attention examples") {
    GradientTape tape;
    const int D = 4;

    // single token, one head: softmax over one key is 1, output = value vector
    const Tensor tok = testutil::random_tensor({1, D}, 4);
    const Var tv = tape.constant(tok);
    const Tensor wv = testutil::random_tensor({D, D}, 5);
    const Var q = tape.constant(testutil::random_tensor({D, D}, 6));
    const Var k = tape.constant(testutil::random_tensor({D, D}, 7));
    const Var v = tape.constant(wv);
    const Tensor out = tape.value(multi_head_attention(tape, tv, {q}, {k}, {v}));
    const Tensor expect = ops::matmul(tok, wv);
    for (int j = 0; j < D; ++j) CHECK(out.at(0, j) == doctest::Approx(expect.at(0, j)));

    // identical weights across two heads average to either head's output
    const int dh = D / 2;
    const Var q2 = tape.constant(testutil::random_tensor({D, dh}, 8));
    const Var k2 = tape.constant(testutil::random_tensor({D, dh}, 9));
    const Var v2 = tape.constant(testutil::random_tensor({D, dh}, 10));
    const Var toks = tape.constant(testutil::random_tensor({3, D}, 11));
    const Tensor avg = tape.value(multi_head_attention(tape, toks, {q2, q2}, {k2, k2}, {v2, v2}));
    const Tensor one = tape.value(multi_head_attention(tape, toks, {q2}, {k2}, {v2}));
    for (std::int64_t i = 0; i < avg.numel(); ++i) {
        CHECK(avg[i] == doctest::Approx(one[i]).epsilon(1e-12));
    }
}

TEST_CASE("multi_head_attention matches a step-by-step oracle") {
    // 2 tokens, 1 head: brute-force evaluation of
    // softmax(instance_normalize(QK^T / sqrt(dh))) V
    const int D = 3;
    const Tensor tokens = testutil::random_tensor({2, D}, 20);
    const Tensor wq = testutil::random_tensor({D, D}, 21);
    const Tensor wk = testutil::random_tensor({D, D}, 22);
    const Tensor wv = testutil::random_tensor({D, D}, 23);

    const Tensor qm = ops::matmul(tokens, wq);
    const Tensor km = ops::matmul(tokens, wk);
    const Tensor vm = ops::matmul(tokens, wv);
    Tensor logits({2, 2});
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            double dot = 0.0;
            for (int c = 0; c < D; ++c) dot += qm.at(i, c) * km.at(j, c);
            logits.at(i, j) = dot / std::sqrt(static_cast<double>(D));
        }
    }
    double mean = 0.0;
    for (int i = 0; i < 4; ++i) mean += logits[i];
    mean /= 4.0;
    double var = 0.0;
    for (int i = 0; i < 4; ++i) var += (logits[i] - mean) * (logits[i] - mean);
    var /= 4.0;
    for (int i = 0; i < 4; ++i) logits[i] = (logits[i] - mean) / std::sqrt(var + 1e-5);
    Tensor expect({2, D});
    for (int i = 0; i < 2; ++i) {
        const double m = std::max(logits.at(i, 0), logits.at(i, 1));
        const double e0 = std::exp(logits.at(i, 0) - m), e1 = std::exp(logits.at(i, 1) - m);
        const double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
        for (int c = 0; c < D; ++c) expect.at(i, c) = w0 * vm.at(0, c) + w1 * vm.at(1, c);
    }

    GradientTape tape;
    const Tensor got = tape.value(multi_head_attention(
        tape, tape.constant(tokens), {tape.constant(wq)}, {tape.constant(wk)},
        {tape.constant(wv)}));
    for (std::int64_t i = 0; i < got.numel(); ++i) {
        CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-10));
    }
}

TEST_CASE("head average stays inside the per-coordinate head envelope") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const int D = 8, N = 4, dh = 2;
        const Tensor tokens = testutil::random_tensor({5, D}, 30 + seed);
        GradientTape tape;
        const Var tv = tape.constant(tokens);
        std::vector<Var> q, k, v;
        for (int h = 0; h < N; ++h) {
            q.push_back(tape.constant(testutil::random_tensor({D, dh}, 100 * seed + h)));
            k.push_back(tape.constant(testutil::random_tensor({D, dh}, 100 * seed + 10 + h)));
            v.push_back(tape.constant(testutil::random_tensor({D, dh}, 100 * seed + 20 + h)));
        }
        const Tensor ma = tape.value(multi_head_attention(tape, tv, q, k, v));
        std::vector<Tensor> heads;
        for (int h = 0; h < N; ++h) {
            heads.push_back(tape.value(multi_head_attention(tape, tv, {q[h]}, {k[h]}, {v[h]})));
        }
        for (std::int64_t i = 0; i < ma.numel(); ++i) {
            double lo = heads[0][i], hi = heads[0][i];
            for (int h = 1; h < N; ++h) {
                lo = std::min(lo, heads[h][i]);
                hi = std::max(hi, heads[h][i]);
            }
            CHECK(ma[i] >= lo - 1e-12);
            CHECK(ma[i] <= hi + 1e-12);
        }
    }
}

TEST_CASE("permutation equivariance without positional encoding") {
    const int d = 4, D = 6;
    const Tensor tokens = testutil::random_tensor({d, D}, 40);
    const std::vector<int> perm = {2, 0, 3, 1};
    Tensor permuted({d, D});
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < D; ++j) permuted.at(i, j) = tokens.at(perm[i], j);
    }
    GradientTape tape;
    std::vector<Var> q = {tape.constant(testutil::random_tensor({D, 3}, 41))};
    std::vector<Var> k = {tape.constant(testutil::random_tensor({D, 3}, 42))};
    std::vector<Var> v = {tape.constant(testutil::random_tensor({D, 3}, 43))};
    const Tensor out = tape.value(multi_head_attention(tape, tape.constant(tokens), q, k, v));
    const Tensor out_p =
        tape.value(multi_head_attention(tape, tape.constant(permuted), q, k, v));
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < 3; ++j) {
            CHECK(out_p.at(i, j) == doctest::Approx(out.at(perm[i], j)).epsilon(1e-9));
        }
    }
}

TEST_CASE("scm_block_forward shape contract and identity at zero layers") {
    const AttentionConfig cfg0 = small_config(2, 2, 0, 8, 4);
    const Tensor f = testutil::random_tensor({4, 4, 3}, 50);
    CHECK(scm_block_forward(f, cfg0, {}).data() == f.data());

    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        AttentionConfig cfg = small_config(2, 2, 1, 8, 4);
        const Tensor out = scm_block_forward(f, cfg, make_layers(cfg, 3, seed));
        CHECK(out.shape() == f.shape());
    }
}

TEST_CASE("one layer equals the manual composition of the sub-ops") {
    const AttentionConfig cfg = small_config(2, 2, 1, 8, 4);
    const int C = 3, H = 4, W = 4;
    const auto layers = make_layers(cfg, C, 7);
    const Tensor f = testutil::random_tensor({H, W, C}, 51);

    GradientTape tape;
    const Var fv = tape.constant(f);
    const ScmLayerVars lv = bind_scm_layer(tape, layers[0], false);

    auto patches = partition_patches(tape, fv, cfg.patch_size);
    for (auto& p : patches) p = patch_channel_attention(tape, p, cfg.literal_channel_gram);
    Var tokens = tokenize_with_position(tape, patches, lv.w_embed, lv.pos_encoding);
    tokens = tape.layer_normalize(tokens, lv.ln1_gain, lv.ln1_bias);
    const Var ma = multi_head_attention(tape, tokens, lv.w_q, lv.w_k, lv.w_v);
    const Var normed = tape.layer_normalize(ma, lv.ln2_gain, lv.ln2_bias);
    Var h = tape.add_rowvec(tape.matmul(normed, lv.mlp_w1), lv.mlp_b1);
    h = tape.gelu(h);
    h = tape.add_rowvec(tape.matmul(h, lv.mlp_w2), lv.mlp_b2);
    const Var out_tokens = tape.add(ma, h);
    const Var back = tape.matmul(out_tokens, lv.w_out);
    std::vector<Var> out_patches;
    for (int i = 0; i < cfg.sequence_length; ++i) {
        out_patches.push_back(
            tape.reshape(tape.slice(back, 0, i, 1), {cfg.patch_size, cfg.patch_size, C}));
    }
    const Tensor manual = tape.value(merge_patches(tape, out_patches, cfg.patch_size, H, W));

    const Tensor block = scm_block_forward(f, cfg, layers);
    for (std::int64_t i = 0; i < block.numel(); ++i) {
        CHECK(block[i] == doctest::Approx(manual[i]).epsilon(1e-12));
    }
}

TEST_CASE("full attention block passes the gradient check") {
    AttentionConfig cfg = small_config(2, 2, 1, 4, 4);
    cfg.mlp_hidden_dim = 6;
    const int C = 2;
    const auto layers = make_layers(cfg, C, 13);
    const Tensor f = testutil::random_tensor({4, 4, C}, 52, -0.5, 0.5);

    std::vector<Tensor> inputs = {f, layers[0].w_embed, layers[0].ln1_gain, layers[0].ln1_bias};
    for (const auto& t : layers[0].w_q) inputs.push_back(t);
    for (const auto& t : layers[0].w_k) inputs.push_back(t);
    for (const auto& t : layers[0].w_v) inputs.push_back(t);
    inputs.push_back(layers[0].ln2_gain);
    inputs.push_back(layers[0].ln2_bias);
    inputs.push_back(layers[0].mlp_w1);
    inputs.push_back(layers[0].mlp_b1);
    inputs.push_back(layers[0].mlp_w2);
    inputs.push_back(layers[0].mlp_b2);
    inputs.push_back(layers[0].w_out);

    const double err = check_gradient(
        [&](GradientTape& tape, const std::vector<Var>& vars) {
            ScmLayerVars lv;
            std::size_t at = 1;
            auto next = [&]() { return vars[at++]; };
            lv.w_embed = next();
            lv.ln1_gain = next();
            lv.ln1_bias = next();
            for (int h = 0; h < cfg.head_count; ++h) lv.w_q.push_back(next());
            for (int h = 0; h < cfg.head_count; ++h) lv.w_k.push_back(next());
            for (int h = 0; h < cfg.head_count; ++h) lv.w_v.push_back(next());
            lv.ln2_gain = next();
            lv.ln2_bias = next();
            lv.mlp_w1 = next();
            lv.mlp_b1 = next();
            lv.mlp_w2 = next();
            lv.mlp_b2 = next();
            lv.w_out = next();
            lv.pos_encoding = tape.constant(layers[0].pos_encoding);
            const Var out = scm_layer_forward(tape, vars[0], cfg, lv);
            return tape.sum(tape.mul(out, out));
        },
        inputs);
    CHECK(err < 1e-4);
}
