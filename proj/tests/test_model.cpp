#include <doctest.h>

#include <cmath>

#include "htc/model.hpp"
#include "test_util.hpp"

using namespace htc;

namespace {

ModelSpec tiny_spec() {
    ModelSpec s;
    s.tf = TransformerConfig{16, 4, 2, 32, 10};
    s.layout = LayoutSpec{2, 4, 1, 2, Fusion::pre};
    s.image_size = 16;
    s.patch_size = 8;
    s.d_enc = 8;
    s.h_d = 16;
    s.proj_depth = 2;
    s.quant_downsample = 8;
    s.quant_groups = 2;
    s.quant_entries = 4;
    s.quant_group_dim = 4;
    s.max_text_len = 4;
    return s;
}

Codebook tiny_codebook(const ModelSpec& s, uint64_t seed) {
    Codebook cb;
    cb.groups = s.quant_groups;
    cb.entries = s.quant_entries;
    cb.group_dim = s.quant_group_dim;
    Rng rng(seed);
    cb.vectors = Tensor::randn({cb.groups, cb.entries, cb.group_dim}, rng);
    cb.frozen = true;
    return cb;
}

HtcModel tiny_model(uint64_t seed = 5) {
    ModelSpec s = tiny_spec();
    return HtcModel::init(s, tiny_codebook(s, seed + 1), seed);
}

Tensor rand_image(int n, uint64_t seed) {
    Rng rng(seed);
    return Tensor::randn({n, n, 1}, rng, 0.5f);
}

std::vector<float> text_logits(const HtcModel& m, const ForwardResult& fr) {
    const int ts = m.spec.layout.text_start();
    std::vector<float> out;
    for (int r = ts; r < fr.seq; ++r)
        for (int c = 0; c < m.spec.tf.vocab_size; ++c) out.push_back(fr.logits.at2(r, c));
    return out;
}

} // namespace

TEST_CASE("forward shapes, uniform logits under a zero head") {
    HtcModel m = tiny_model();
    SampleInput in = m.prepare(rand_image(16, 2), {8, 1});
    ForwardResult fr = m.forward_single(in);
    CHECK(fr.seq == m.spec.layout.total());
    CHECK(fr.logits.shape == std::vector<int>({fr.seq, 10}));
    CHECK(fr.z.shape == std::vector<int>({1, 16}));

    // zero output head: softmax over vocab is uniform at every position
    m.params.value(m.params.find("model.head.w")) = Tensor::zeros({16, 10});
    m.params.value(m.params.find("model.head.b")) = Tensor::zeros({10});
    ForwardResult fu = m.forward_single(in);
    Tensor probs = softmax(fu.logits);
    for (int r = 0; r < fu.seq; ++r)
        for (int c = 0; c < 10; ++c) CHECK(probs.at2(r, c) == doctest::Approx(0.1));
}

TEST_CASE("attention respects the mask exactly and rows are normalized") {
    HtcModel m = tiny_model();
    SampleInput in = m.prepare(rand_image(16, 3), {8, 1});
    ForwardHooks hooks;
    std::vector<std::vector<float>> attn;
    hooks.attn = &attn;
    (void)m.forward_single(in, nullptr, &hooks);
    REQUIRE(attn.size() == 2);
    const AttentionMask& mask = m.train_mask();
    const int total = m.spec.layout.total();
    for (const auto& layer : attn)
        for (int h = 0; h < 4; ++h)
            for (int i = 0; i < total; ++i) {
                double sum = 0.0;
                for (int j = 0; j < total; ++j) {
                    const float p = layer[(static_cast<size_t>(h) * total + i) * total + j];
                    if (!mask.at(i, j)) CHECK(p == 0.0f);
                    sum += p;
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
            }
}

TEST_CASE("five-token example: returned attention is zero off the allowed pairs") {
    ModelSpec s = tiny_spec();
    s.layout = LayoutSpec{1, 2, 1, 1, Fusion::pre};
    s.max_text_len = 2;
    HtcModel m = HtcModel::init(s, tiny_codebook(s, 1), 3);
    // n_v = 2 keeps only the first two patches of the 2x2 grid
    SampleInput in = m.prepare(rand_image(16, 9), {8});
    ForwardHooks hooks;
    std::vector<std::vector<float>> attn;
    hooks.attn = &attn;
    (void)m.forward_single(in, nullptr, &hooks);
    const bool allowed[5][5] = {{1, 0, 0, 0, 0},
                                {0, 1, 0, 0, 0},
                                {0, 0, 1, 0, 0},
                                {1, 1, 1, 1, 0},
                                {0, 0, 0, 1, 1}};
    for (const auto& layer : attn)
        for (int h = 0; h < 4; ++h)
            for (int i = 0; i < 5; ++i)
                for (int j = 0; j < 5; ++j)
                    if (!allowed[i][j])
                        CHECK(layer[(static_cast<size_t>(h) * 5 + i) * 5 + j] == 0.0f);
}

TEST_CASE("causal consistency: later tokens cannot change earlier logits") {
    HtcModel m = tiny_model();
    Tensor img = rand_image(16, 4);
    SampleInput a = m.prepare(img, {8, 1});
    SampleInput b = m.prepare(img, {8, 3}); // different final (answer) token
    ForwardResult fa = m.forward_single(a);
    ForwardResult fb = m.forward_single(b);
    const int last = m.spec.layout.total() - 1;
    for (int r = 0; r < last; ++r)
        for (int c = 0; c < 10; ++c) CHECK(fa.logits.at2(r, c) == fb.logits.at2(r, c));
}

TEST_CASE("voco interchange: text logits follow the transplanted bottleneck") {
    HtcModel m = tiny_model(11);
    SampleInput a = m.prepare(rand_image(16, 100), {8, 2});
    SampleInput b = m.prepare(rand_image(16, 200), {8, 2});

    ForwardHooks rec;
    std::vector<Tensor> voco_a;
    rec.record_voco = &voco_a;
    ForwardResult fa = m.forward_single(a, nullptr, &rec);

    ForwardResult fb = m.forward_single(b);
    CHECK(text_logits(m, fa) != text_logits(m, fb)); // sanity: visuals matter

    ForwardHooks swap;
    swap.override_voco = &voco_a;
    ForwardResult fswap = m.forward_single(b, nullptr, &swap);
    const auto la = text_logits(m, fa);
    const auto ls = text_logits(m, fswap);
    REQUIRE(la.size() == ls.size());
    for (size_t i = 0; i < la.size(); ++i) CHECK(std::fabs(la[i] - ls[i]) < 1e-5f);
}

TEST_CASE("zeroed bottleneck makes text logits blind to visual changes") {
    HtcModel m = tiny_model(13);
    SampleInput a = m.prepare(rand_image(16, 300), {9, 5});
    SampleInput b = m.prepare(rand_image(16, 400), {9, 5});
    ForwardHooks z;
    z.zero_voco = true;
    ForwardResult fa = m.forward_single(a, nullptr, &z);
    ForwardResult fb = m.forward_single(b, nullptr, &z);
    CHECK(text_logits(m, fa) == text_logits(m, fb));
}

TEST_CASE("batched forward equals per-sample forwards bitwise") {
    HtcModel m = tiny_model(17);
    SampleInput a = m.prepare(rand_image(16, 31), {8, 0});
    SampleInput b = m.prepare(rand_image(16, 32), {9, 6});
    ForwardResult fab = m.forward_batch({&a, &b}, m.spec.layout);
    ForwardResult fa = m.forward_single(a);
    ForwardResult fb = m.forward_single(b);
    const int t = m.spec.layout.total();
    for (int r = 0; r < t; ++r)
        for (int c = 0; c < 10; ++c) {
            CHECK(fab.logits.at2(r, c) == fa.logits.at2(r, c));
            CHECK(fab.logits.at2(t + r, c) == fb.logits.at2(r, c));
        }
}

TEST_CASE("generate: deterministic, equals argmax of forward logits") {
    HtcModel m = tiny_model(19);
    SampleInput q = m.prepare(rand_image(16, 77), {8});
    auto g1 = m.generate(q, 1);
    auto g2 = m.generate(q, 1);
    CHECK(g1.tokens == g2.tokens);
    CHECK_FALSE(g1.truncated);
    REQUIRE(g1.tokens.size() == 2);

    LayoutSpec l1 = m.spec.layout.with_text_len(1);
    ForwardResult fr = m.forward_single(q, l1);
    const int pred = argmax_lastdim(slice_rows(fr.logits, l1.total() - 1, 1))[0];
    CHECK(g1.tokens.back() == pred);

    // head forced toward token 1: generation emits token 1
    Tensor biased = Tensor::zeros({10});
    (*biased.data)[1] = 50.0f;
    m.params.value(m.params.find("model.head.b")) = biased;
    m.params.value(m.params.find("model.head.w")) = Tensor::zeros({16, 10});
    auto gb = m.generate(q, 2);
    REQUIRE(gb.tokens.size() == 3);
    CHECK(gb.tokens[1] == 1);
    CHECK(gb.tokens[2] == 1);

    // text region capacity: max_text_len 4, asking for more flags truncation
    auto gt = m.generate(q, 6);
    CHECK(gt.truncated);
    CHECK(gt.tokens.size() == static_cast<size_t>(1 + 4)); // filled up to capacity
}

TEST_CASE("attention op counts: dense formula and sparse text independence") {
    TransformerConfig tf{64, 4, 2, 256, 10};
    LayoutSpec small{4, 16, 1, 3, Fusion::pre};
    const AttnOpCounts c = attention_flop_count(small, tf);
    const uint64_t t = static_cast<uint64_t>(small.total());
    CHECK(c.dense_total == 2 * t * t * 64);
    CHECK(c.dense_qk == c.dense_av);
    CHECK(c.sparse_total < c.dense_total);
    CHECK(c.sparse_total == c.sparse_visual + c.sparse_voco + c.sparse_text);

    LayoutSpec big{4, 576, 1, 3, Fusion::pre};
    const AttnOpCounts cb = attention_flop_count(big, tf);
    CHECK(cb.sparse_text == c.sparse_text); // text cost independent of n_v
    CHECK(cb.sparse_voco > c.sparse_voco);

    // uncompressed vs compressed dense ratio at N=576, L -> 0 is exactly 576^2
    const uint64_t full = 2 * 576ull * 576ull * 64ull;
    const uint64_t comp = 2 * 1ull * 1ull * 64ull;
    CHECK(full / comp == 331776ull);
    CHECK(full % comp == 0ull);
}

TEST_CASE("full 2-layer model gradient agrees with finite differences") {
    // 9-token input: 1 anchor + 4 patches + voco + 3 text tokens
    ModelSpec s = tiny_spec();
    s.layout = LayoutSpec{1, 4, 1, 3, Fusion::pre};
    HtcModel m = HtcModel::init(s, tiny_codebook(s, 3), 23);
    SampleInput in = m.prepare(rand_image(16, 55), {8, 9, 4});
    REQUIRE(m.spec.layout.total() == 9);

    const std::vector<int> rows = {m.spec.layout.text_start() + 1};
    const std::vector<int> targets = {4};
    const float beta_kl = 0.1f;

    auto loss_value = [&](const HtcModel& model) {
        ForwardResult fr = model.forward_single(in);
        // double-precision reduction of the f32 forward outputs
        const int vocab = model.spec.tf.vocab_size;
        double total = 0.0;
        for (size_t i = 0; i < rows.size(); ++i) {
            double mx = -1e300;
            for (int c = 0; c < vocab; ++c) mx = std::max(mx, static_cast<double>(fr.logits.at2(rows[i], c)));
            double sum = 0.0;
            for (int c = 0; c < vocab; ++c) sum += std::exp(fr.logits.at2(rows[i], c) - mx);
            total += std::log(sum) + mx - fr.logits.at2(rows[i], targets[i]);
        }
        total /= static_cast<double>(rows.size());
        return total + 0.5 * beta_kl * test::sumsq_double(fr.z);
    };

    Tape tape;
    std::vector<Tensor> bound = m.bind(tape);
    ForwardResult fr = m.forward_batch({&in}, m.spec.layout, &tape, &bound);
    Tensor ce = cross_entropy_rows(fr.logits, rows, targets, &tape);
    Tensor loss = add(ce, scale(sumsq(fr.z, &tape), beta_kl / 2.0f, &tape), &tape);
    auto grads = tape.backward(loss);

    Rng pick(999);
    const float h = 3e-3f;
    for (size_t pi = 0; pi < m.params.size(); ++pi) {
        const Tensor& g = grads[static_cast<size_t>(bound[pi].node)];
        if (g.numel() == 0) continue;
        const Tensor& value = m.params.entries[pi].value;
        double worst_abs = 0.0, ref = 0.0;
        const int n_probe = static_cast<int>(std::min<int64_t>(4, value.numel()));
        for (int t = 0; t < n_probe; ++t) {
            const int64_t idx = static_cast<int64_t>(pick.below(static_cast<uint64_t>(value.numel())));
            HtcModel probe = m;
            Tensor tweaked = value;
            tweaked.data = std::make_shared<std::vector<float>>(*value.data);

            (*tweaked.data)[static_cast<size_t>(idx)] += h;
            probe.params.entries[pi].value = tweaked;
            const double up = loss_value(probe);

            Tensor down = value;
            down.data = std::make_shared<std::vector<float>>(*value.data);
            (*down.data)[static_cast<size_t>(idx)] -= h;
            probe.params.entries[pi].value = down;
            const double dn = loss_value(probe);

            const double num = (up - dn) / (2.0 * h);
            const double ana = g.at(idx);
            worst_abs = std::max(worst_abs, std::fabs(num - ana));
            ref = std::max({ref, std::fabs(ana), std::fabs(num)});
        }
        INFO("param ", m.params.entries[pi].name);
        CHECK(worst_abs / std::max(ref, 1e-3) < 1e-2);
    }
}

TEST_CASE("model init is deterministic per seed") {
    HtcModel a = tiny_model(42), b = tiny_model(42), c = tiny_model(43);
    for (size_t i = 0; i < a.params.size(); ++i)
        CHECK(*a.params.entries[i].value.data == *b.params.entries[i].value.data);
    CHECK(*a.params.entries[0].value.data != *c.params.entries[0].value.data);
}
