#include <doctest.h>

#include <cmath>

#include "htc/ops.hpp"
#include "test_util.hpp"

using namespace htc;
using htc::test::fd_max_rel_err;
using htc::test::rand_tensor;

namespace {

Tensor grad_of(Tape& tape, const Tensor& leaf, const Tensor& loss) {
    auto grads = tape.backward(loss);
    REQUIRE(leaf.node >= 0);
    Tensor g = grads[static_cast<size_t>(leaf.node)];
    REQUIRE(g.numel() == leaf.numel());
    return g;
}

} // namespace

TEST_CASE("matmul identity and hand arithmetic") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor m = rand_tensor({2, 2}, 3);
    Tensor out = matmul(eye, m);
    CHECK(*out.data == *m.data);

    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 1}, {5, 6});
    Tensor c = matmul(a, b);
    CHECK(c.at(0) == 17.0f);
    CHECK(c.at(1) == 39.0f);

    CHECK_THROWS_AS(matmul(a, Tensor({3, 1}, {1, 2, 3})), Error);
}

TEST_CASE("matmul associativity is exact on small integers") {
    Rng rng(9);
    auto int_tensor = [&](int r, int c) {
        std::vector<float> v(static_cast<size_t>(r) * c);
        for (auto& x : v) x = static_cast<float>(static_cast<int>(rng.below(7)) - 3);
        return Tensor({r, c}, std::move(v));
    };
    for (int trial = 0; trial < 10; ++trial) {
        Tensor a = int_tensor(3, 4), b = int_tensor(4, 2), c = int_tensor(2, 5);
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        CHECK(*left.data == *right.data);
    }
}

TEST_CASE("matmul gradient matches finite differences over 20 seeds") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Tensor a0 = rand_tensor({3, 4}, seed);
        Tensor b0 = rand_tensor({4, 2}, seed + 100);
        Tape tape;
        Tensor a = tape.leaf(a0);
        Tensor b = tape.leaf(b0);
        Tensor loss = sum_all(matmul(a, b, &tape), &tape);
        auto grads = tape.backward(loss);
        const Tensor ga = grads[static_cast<size_t>(a.node)];
        const Tensor gb = grads[static_cast<size_t>(b.node)];
        auto loss_a = [&](const Tensor& x) { return test::sum_double(matmul(x, b0)); };
        auto loss_b = [&](const Tensor& x) { return test::sum_double(matmul(a0, x)); };
        CHECK(fd_max_rel_err(a0, loss_a, ga) < 1e-3);
        CHECK(fd_max_rel_err(b0, loss_b, gb) < 1e-3);
    }
}

TEST_CASE("softmax basics") {
    Tensor u({3}, {0, 0, 0});
    Tensor su = softmax(u);
    for (int i = 0; i < 3; ++i) CHECK(su.at(i) == doctest::Approx(1.0 / 3));

    Tensor big({2}, {1000, 1000});
    Tensor sb = softmax(big);
    CHECK(sb.at(0) == doctest::Approx(0.5));
    CHECK(sb.at(1) == doctest::Approx(0.5));

    constexpr float ninf = -std::numeric_limits<float>::infinity();
    Tensor masked({2}, {0, ninf});
    Tensor sm = softmax(masked);
    CHECK(sm.at(0) == 1.0f);
    CHECK(sm.at(1) == 0.0f); // exactly zero

    // fully masked row: zeros plus a flag; an error without the flag out-param
    Tensor blocked({1, 2}, {ninf, ninf});
    std::vector<int> zeroed;
    Tensor sz = softmax(blocked, nullptr, &zeroed);
    CHECK(zeroed == std::vector<int>{0});
    CHECK(sz.at(0) == 0.0f);
    CHECK(sz.at(1) == 0.0f);
    CHECK_THROWS_AS(softmax(blocked), Error);
}

TEST_CASE("softmax rows are non-negative and normalized") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Tensor x = rand_tensor({5, 7}, seed, 3.0f);
        Tensor y = softmax(x);
        for (int r = 0; r < 5; ++r) {
            double sum = 0.0;
            for (int c = 0; c < 7; ++c) {
                CHECK(y.at2(r, c) >= 0.0f);
                sum += y.at2(r, c);
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("softmax gradient matches finite differences") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Tensor x0 = rand_tensor({3, 5}, seed);
        Tensor w = rand_tensor({3, 5}, seed + 50); // random projection to scalar
        auto loss_fn = [&](const Tensor& x) { return test::dot_double(softmax(x), w); };
        Tape tape;
        Tensor x = tape.leaf(x0);
        Tensor loss = sum_all(mul(softmax(x, &tape), w, &tape), &tape);
        Tensor g = grad_of(tape, x, loss);
        CHECK(fd_max_rel_err(x0, loss_fn, g) < 1e-3);
    }
}

TEST_CASE("gelu uses the exact Gaussian CDF") {
    CHECK(gelu(Tensor::scalar(0.0f)).item() == 0.0f);
    const double phi3 = 0.5 * (1.0 + std::erf(3.0 / std::sqrt(2.0)));
    CHECK(gelu(Tensor::scalar(3.0f)).item() == doctest::Approx(3.0 * phi3).epsilon(1e-6));
    // x * Phi(x) for a negative point, checked against double evaluation
    const double phim1 = 0.5 * (1.0 + std::erf(-1.0 / std::sqrt(2.0)));
    CHECK(gelu(Tensor::scalar(-1.0f)).item() == doctest::Approx(-phim1).epsilon(1e-6));
}

TEST_CASE("gelu gradient matches finite differences") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Tensor x0 = rand_tensor({4, 3}, seed);
        auto loss_fn = [&](const Tensor& x) { return test::sum_double(gelu(x)); };
        Tape tape;
        Tensor x = tape.leaf(x0);
        Tensor g = grad_of(tape, x, sum_all(gelu(x, &tape), &tape));
        CHECK(fd_max_rel_err(x0, loss_fn, g) < 1e-3);
    }
}

TEST_CASE("layer_norm gradient matches finite differences") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Tensor x0 = rand_tensor({3, 8}, seed);
        Tensor g0 = rand_tensor({8}, seed + 30, 0.5f);
        Tensor b0 = rand_tensor({8}, seed + 60, 0.5f);
        Tensor w = rand_tensor({3, 8}, seed + 90);
        auto loss_with = [&](const Tensor& x, const Tensor& g, const Tensor& b) {
            return test::dot_double(layer_norm(x, g, b, 1e-5f), w);
        };
        Tape tape;
        Tensor x = tape.leaf(x0), g = tape.leaf(g0), b = tape.leaf(b0);
        Tensor loss = sum_all(mul(layer_norm(x, g, b, 1e-5f, &tape), w, &tape), &tape);
        auto grads = tape.backward(loss);
        CHECK(fd_max_rel_err(x0, [&](const Tensor& t) { return loss_with(t, g0, b0); },
                             grads[static_cast<size_t>(x.node)]) < 1e-3);
        CHECK(fd_max_rel_err(g0, [&](const Tensor& t) { return loss_with(x0, t, b0); },
                             grads[static_cast<size_t>(g.node)]) < 1e-3);
        CHECK(fd_max_rel_err(b0, [&](const Tensor& t) { return loss_with(x0, g0, t); },
                             grads[static_cast<size_t>(b.node)]) < 1e-3);
    }
}

TEST_CASE("cross entropy examples and errors") {
    CHECK(cross_entropy(Tensor({2}, {0, 0}), 0).item() == doctest::Approx(std::log(2.0)));
    CHECK_THROWS_AS(cross_entropy(Tensor({2}, {0, 0}), 2), Error);
    CHECK_THROWS_AS(cross_entropy(Tensor({2}, {0, 0}), -1), Error);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Tensor x0 = rand_tensor({6}, seed);
        const int target = static_cast<int>(seed % 6);
        auto loss_fn = [&](const Tensor& x) { return static_cast<double>(cross_entropy(x, target).item()); };
        Tape tape;
        Tensor x = tape.leaf(x0);
        Tensor g = grad_of(tape, x, cross_entropy(x, target, &tape));
        CHECK(fd_max_rel_err(x0, loss_fn, g) < 1e-3);
    }
}

TEST_CASE("cross_entropy_rows equals the mean of per-row cross entropies") {
    Tensor logits = rand_tensor({5, 4}, 77);
    const std::vector<int> rows = {1, 3, 4};
    const std::vector<int> targets = {0, 2, 3};
    Tensor fused = cross_entropy_rows(logits, rows, targets);
    double manual = 0.0;
    for (size_t i = 0; i < rows.size(); ++i)
        manual += cross_entropy(slice_rows(logits, rows[i], 1), targets[i]).item();
    CHECK(fused.item() == doctest::Approx(manual / 3.0));

    // rows not listed carry no gradient
    Tape tape;
    Tensor x = tape.leaf(logits);
    Tensor g = grad_of(tape, x, cross_entropy_rows(x, rows, targets, &tape));
    for (int c = 0; c < 4; ++c) {
        CHECK(g.at2(0, c) == 0.0f);
        CHECK(g.at2(2, c) == 0.0f);
    }
}

TEST_CASE("structural ops gradients match finite differences") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Tensor x0 = rand_tensor({4, 6}, seed);
        Tensor w = rand_tensor({2, 3}, seed + 7);
        auto loss_fn = [&](const Tensor& x) {
            return test::dot_double(slice_cols(slice_rows(x, 1, 2), 2, 3), w);
        };
        Tape tape;
        Tensor x = tape.leaf(x0);
        Tensor s = slice_cols(slice_rows(x, 1, 2, &tape), 2, 3, &tape);
        Tensor g = grad_of(tape, x, sum_all(mul(s, w, &tape), &tape));
        CHECK(fd_max_rel_err(x0, loss_fn, g) < 1e-3);
    }

    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Tensor x0 = rand_tensor({3, 4}, seed);
        Tensor y0 = rand_tensor({2, 4}, seed + 5);
        auto loss_fn = [&](const Tensor& x) {
            return test::sumsq_double(transpose2d(concat_rows({x, y0})));
        };
        Tape tape;
        Tensor x = tape.leaf(x0);
        Tensor cat = concat_rows({x, y0}, &tape);
        Tensor g = grad_of(tape, x, sumsq(transpose2d(cat, &tape), &tape));
        CHECK(fd_max_rel_err(x0, loss_fn, g) < 1e-3);
    }

    // gather with repeated indices accumulates
    Tensor x0 = rand_tensor({4, 3}, 123);
    auto loss_fn = [&](const Tensor& x) { return test::sum_double(gather_rows(x, {0, 2, 0})); };
    Tape tape;
    Tensor x = tape.leaf(x0);
    Tensor g = grad_of(tape, x, sum_all(gather_rows(x, {0, 2, 0}, &tape), &tape));
    CHECK(fd_max_rel_err(x0, loss_fn, g) < 1e-3);
    CHECK(g.at2(0, 0) == 2.0f);
    CHECK(g.at2(1, 0) == 0.0f);
}

TEST_CASE("rowvec/mean/scale gradients match finite differences") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Tensor x0 = rand_tensor({5, 3}, seed);
        Tensor v0 = rand_tensor({3}, seed + 11);
        auto loss_x = [&](const Tensor& x) { return test::sumsq_double(add_rowvec(x, v0)); };
        auto loss_v = [&](const Tensor& v) { return test::sumsq_double(add_rowvec(x0, v)); };
        Tape tape;
        Tensor x = tape.leaf(x0), v = tape.leaf(v0);
        Tensor loss = sumsq(add_rowvec(x, v, &tape), &tape);
        auto grads = tape.backward(loss);
        CHECK(fd_max_rel_err(x0, loss_x, grads[static_cast<size_t>(x.node)]) < 1e-3);
        CHECK(fd_max_rel_err(v0, loss_v, grads[static_cast<size_t>(v.node)]) < 1e-3);
    }

    Tensor x0 = rand_tensor({4, 4}, 5);
    auto loss_fn = [&](const Tensor& x) { return test::sumsq_double(scale(mean_rows(x), 2.5f)); };
    Tape tape;
    Tensor x = tape.leaf(x0);
    Tensor g = grad_of(tape, x, sumsq(scale(mean_rows(x, &tape), 2.5f, &tape), &tape));
    CHECK(fd_max_rel_err(x0, loss_fn, g) < 1e-3);
}

TEST_CASE("masked attention: zeros on blocked pairs, rows normalized") {
    const int batch = 2, seq = 4, d_model = 8, heads = 2;
    Tensor q0 = rand_tensor({batch * seq, d_model}, 1);
    Tensor k0 = rand_tensor({batch * seq, d_model}, 2);
    Tensor v0 = rand_tensor({batch * seq, d_model}, 3);
    constexpr float ninf = -std::numeric_limits<float>::infinity();
    Tensor mask = Tensor::zeros({seq, seq});
    for (int i = 0; i < seq; ++i)
        for (int j = 0; j < seq; ++j)
            if (j > i || (i == 2 && j == 0))
                (*mask.data)[static_cast<size_t>(i) * seq + j] = ninf;

    std::vector<float> probs;
    (void)masked_attention(q0, k0, v0, mask, batch, heads, nullptr, &probs);
    REQUIRE(probs.size() == static_cast<size_t>(batch) * heads * seq * seq);
    for (int b = 0; b < batch; ++b)
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < seq; ++i) {
                double sum = 0.0;
                for (int j = 0; j < seq; ++j) {
                    const float p = probs[((static_cast<size_t>(b) * heads + h) * seq + i) * seq + j];
                    if (j > i || (i == 2 && j == 0)) CHECK(p == 0.0f);
                    sum += p;
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
            }
}

TEST_CASE("masked attention gradients match finite differences") {
    const int batch = 2, seq = 3, d_model = 4, heads = 2;
    constexpr float ninf = -std::numeric_limits<float>::infinity();
    Tensor mask = Tensor::zeros({seq, seq});
    for (int i = 0; i < seq; ++i)
        for (int j = i + 1; j < seq; ++j) (*mask.data)[static_cast<size_t>(i) * seq + j] = ninf;

    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Tensor q0 = rand_tensor({batch * seq, d_model}, seed);
        Tensor k0 = rand_tensor({batch * seq, d_model}, seed + 21);
        Tensor v0 = rand_tensor({batch * seq, d_model}, seed + 42);
        Tensor w = rand_tensor({batch * seq, d_model}, seed + 63);
        auto loss_with = [&](const Tensor& q, const Tensor& k, const Tensor& v) {
            return test::dot_double(masked_attention(q, k, v, mask, batch, heads), w);
        };
        Tape tape;
        Tensor q = tape.leaf(q0), k = tape.leaf(k0), v = tape.leaf(v0);
        Tensor loss =
            sum_all(mul(masked_attention(q, k, v, mask, batch, heads, &tape), w, &tape), &tape);
        auto grads = tape.backward(loss);
        CHECK(fd_max_rel_err(q0, [&](const Tensor& t) { return loss_with(t, k0, v0); },
                             grads[static_cast<size_t>(q.node)]) < 1e-3);
        CHECK(fd_max_rel_err(k0, [&](const Tensor& t) { return loss_with(q0, t, v0); },
                             grads[static_cast<size_t>(k.node)]) < 1e-3);
        CHECK(fd_max_rel_err(v0, [&](const Tensor& t) { return loss_with(q0, k0, t); },
                             grads[static_cast<size_t>(v.node)]) < 1e-3);
    }
}
