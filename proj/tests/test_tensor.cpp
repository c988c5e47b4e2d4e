#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "htc/ops.hpp"
#include "test_util.hpp"

using namespace htc;

TEST_CASE("tensor shape/data consistency is enforced") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), Error);
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.at2(1, 2) == 6.0f);
}

TEST_CASE("randn is deterministic per seed") {
    Rng a(42), b(42), c(43);
    Tensor ta = Tensor::randn({4, 4}, a);
    Tensor tb = Tensor::randn({4, 4}, b);
    Tensor tc = Tensor::randn({4, 4}, c);
    CHECK(*ta.data == *tb.data);
    CHECK(*ta.data != *tc.data);
}

TEST_CASE("tape parents always precede children") {
    Tape tape;
    Tensor x = tape.leaf(test::rand_tensor({3, 3}, 1));
    Tensor y = mul(x, x, &tape);
    Tensor z = sum_all(add(y, x, &tape), &tape);
    (void)z;
    TapeIntrospect ti(tape);
    for (size_t id = 0; id < ti.parents().size(); ++id)
        for (int p : ti.parents()[id]) CHECK(p < static_cast<int>(id));
}

TEST_CASE("backward requires a tracked scalar") {
    Tape tape;
    Tensor x = tape.leaf(test::rand_tensor({2, 2}, 7));
    Tensor y = mul(x, x, &tape);
    CHECK_THROWS_AS(tape.backward(y), Error); // not scalar
    Tensor untracked = Tensor::scalar(1.0f);
    CHECK_THROWS_AS(tape.backward(untracked), Error);
}

TEST_CASE("loss = sum(x) gives a gradient of ones") {
    Tape tape;
    Tensor x = tape.leaf(test::rand_tensor({3, 5}, 11));
    Tensor loss = sum_all(x, &tape);
    auto grads = tape.backward(loss);
    const Tensor& g = grads[static_cast<size_t>(x.node)];
    REQUIRE(g.numel() == 15);
    for (int64_t i = 0; i < g.numel(); ++i) CHECK(g.at(i) == 1.0f);
}

TEST_CASE("loss = x*x at x=3 gives gradient 6") {
    Tape tape;
    Tensor x = tape.leaf(Tensor::scalar(3.0f));
    Tensor loss = sum_all(mul(x, x, &tape), &tape);
    auto grads = tape.backward(loss);
    CHECK(grads[static_cast<size_t>(x.node)].item() == doctest::Approx(6.0f));
}

TEST_CASE("reused nodes accumulate gradient exactly once per use") {
    // z = x*x + x*x => dz/dx = 4x, exact in f32 for small integers
    Tape tape;
    Tensor x = tape.leaf(Tensor({2}, {2.0f, -3.0f}));
    Tensor z = sum_all(add(mul(x, x, &tape), mul(x, x, &tape), &tape), &tape);
    auto grads = tape.backward(z);
    const Tensor& g = grads[static_cast<size_t>(x.node)];
    CHECK(g.at(0) == 8.0f);
    CHECK(g.at(1) == -12.0f);
}

TEST_CASE("backward is bitwise deterministic for an identical tape") {
    auto run = [] {
        Tape tape;
        Tensor x = tape.leaf(test::rand_tensor({4, 4}, 5));
        Tensor w = tape.leaf(test::rand_tensor({4, 4}, 6));
        Tensor loss = mean_all(gelu(matmul(x, w, &tape), &tape), &tape);
        auto grads = tape.backward(loss);
        return *grads[static_cast<size_t>(w.node)].data;
    };
    CHECK(run() == run());
}

TEST_CASE("NaN inputs are rejected at op boundaries") {
    Tensor bad({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
    CHECK_THROWS_AS(softmax(bad), Error);
    CHECK_THROWS_AS(add(bad, bad), Error);
    Tensor inf_row({1, 2}, {std::numeric_limits<float>::infinity(), 1.0f});
    CHECK_THROWS_AS(matmul(inf_row, Tensor({2, 1}, {1.0f, 1.0f})), Error);
}
