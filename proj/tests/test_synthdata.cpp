#include <doctest.h>

#include <cmath>
#include <set>

#include "htc/analysis.hpp"
#include "htc/checkpoint.hpp"
#include "htc/synthdata.hpp"
#include "htc/training.hpp"

#include <functional>
#include "test_util.hpp"

using namespace htc;

namespace {

DataConfig small_cfg() {
    DataConfig c;
    c.n_train = 64;
    c.n_test = 32;
    c.seed = 9;
    return c;
}

} // namespace

TEST_CASE("render is deterministic and validates inputs") {
    DataConfig cfg = small_cfg();
    SceneSpec s{3, 0.42f, 777};
    Tensor a = render(s, cfg);
    Tensor b = render(s, cfg);
    CHECK(*a.data == *b.data);
    CHECK(a.shape == std::vector<int>({32, 32, 1}));
    CHECK_THROWS_AS(render(SceneSpec{9, 0.1f, 1}, cfg), Error);
    CHECK_THROWS_AS(render(SceneSpec{0, 1.0f, 1}, cfg), Error);
}

TEST_CASE("class changes touch only the shape mask region") {
    DataConfig cfg = small_cfg();
    for (int a = 0; a < cfg.n_s; ++a) {
        const int b = (a + 3) % cfg.n_s;
        Tensor ia = render(SceneSpec{a, 0.3f, 5}, cfg);
        Tensor ib = render(SceneSpec{b, 0.3f, 5}, cfg); // same d, same noise seed
        const auto ma = shape_mask(a, cfg);
        const auto mb = shape_mask(b, cfg);
        bool any_diff = false;
        for (int64_t i = 0; i < ia.numel(); ++i) {
            const bool diff = ia.at(i) != ib.at(i);
            any_diff |= diff;
            if (diff) CHECK((ma[static_cast<size_t>(i)] || mb[static_cast<size_t>(i)]));
        }
        CHECK(any_diff);
    }
}

TEST_CASE("d_value sweeps move pixels continuously") {
    DataConfig cfg = small_cfg();
    cfg.noise_sigma = 0.02f;
    float worst = 0.0f;
    Tensor prev = render(SceneSpec{2, 0.0f, 31}, cfg);
    for (int k = 1; k <= 99; ++k) {
        const float d = 0.01f * static_cast<float>(k);
        Tensor cur = render(SceneSpec{2, d, 31}, cfg); // same noise seed
        for (int64_t i = 0; i < cur.numel(); ++i)
            worst = std::max(worst, std::fabs(cur.at(i) - prev.at(i)));
        prev = cur;
    }
    CHECK(worst < 0.2f);
}

TEST_CASE("dataset balance is exact by construction") {
    DataConfig cfg = small_cfg();
    cfg.n_train = 800;
    Dataset ds = make_dataset(cfg);
    std::vector<int> counts(8, 0);
    int s_task = 0;
    for (const auto& s : ds.train) {
        ++counts[static_cast<size_t>(s.scene.s_class)];
        s_task += s.task == kTaskS;
    }
    for (int c : counts) CHECK(c == 100);
    CHECK(s_task == 400);
}

TEST_CASE("semantic and detail factors are uncorrelated") {
    DataConfig cfg = small_cfg();
    cfg.n_train = 10000;
    cfg.n_test = 1;
    Dataset ds = make_dataset(cfg);
    double ss = 0, sd = 0, s1 = 0, d1 = 0, dd = 0;
    for (const auto& s : ds.train) {
        const double a = s.scene.s_class, b = s.scene.d_value;
        s1 += a;
        d1 += b;
        ss += a * a;
        dd += b * b;
        sd += a * b;
    }
    const double n = cfg.n_train;
    const double corr = (sd / n - s1 / n * d1 / n) /
                        std::sqrt((ss / n - s1 / n * s1 / n) * (dd / n - d1 / n * d1 / n));
    CHECK(std::fabs(corr) < 0.05);
}

TEST_CASE("answers re-derive from the scene; questions carry the task token") {
    Dataset ds = make_dataset(small_cfg());
    for (const auto& split : {ds.train, ds.test})
        for (const auto& s : split) {
            CHECK(s.answer == answer_for(s.scene, s.task, ds.cfg));
            REQUIRE(s.question.size() == 1);
            CHECK(s.question[0] == ds.cfg.task_token(s.task));
            if (s.task == kTaskS)
                CHECK(s.answer == s.scene.s_class);
            else
                CHECK(s.answer == ds.cfg.n_s + detail_bin(s.scene.d_value, ds.cfg.n_d_bins));
        }
}

TEST_CASE("train and test images are disjoint") {
    Dataset ds = make_dataset(small_cfg());
    std::set<uint32_t> hashes;
    for (const auto& s : ds.train)
        hashes.insert(crc32(reinterpret_cast<const uint8_t*>(s.image.ptr()),
                            static_cast<size_t>(s.image.numel()) * sizeof(float)));
    CHECK(hashes.size() == ds.train.size());
    for (const auto& s : ds.test)
        CHECK(hashes.count(crc32(reinterpret_cast<const uint8_t*>(s.image.ptr()),
                                 static_cast<size_t>(s.image.numel()) * sizeof(float))) == 0);
}

namespace {

// Small dense classifier on raw pixels, trained with the verified autodiff.
double mlp_oracle_top1(const std::vector<const QASample*>& train,
                       const std::vector<const QASample*>& test,
                       const std::function<int(const QASample&)>& label_of, int n_classes) {
    const int dim = static_cast<int>(train.front()->image.numel());
    const int hidden = 32;
    auto stack = [&](const std::vector<const QASample*>& ss) {
        std::vector<float> v;
        v.reserve(ss.size() * static_cast<size_t>(dim));
        for (const QASample* s : ss) v.insert(v.end(), s->image.data->begin(), s->image.data->end());
        return Tensor({static_cast<int>(ss.size()), dim}, std::move(v));
    };
    Tensor xtr = stack(train), xte = stack(test);
    std::vector<int> ytr, rows;
    for (size_t i = 0; i < train.size(); ++i) {
        ytr.push_back(label_of(*train[i]));
        rows.push_back(static_cast<int>(i));
    }

    Rng rng(4242);
    ParamSet params;
    params.add("w1", Tensor::randn({dim, hidden}, rng, 0.03f));
    params.add("b1", Tensor::zeros({hidden}));
    params.add("w2", Tensor::randn({hidden, n_classes}, rng, 0.1f));
    params.add("b2", Tensor::zeros({n_classes}));
    TrainConfig tc;
    tc.lr = 0.01f;
    tc.weight_decay = 0.0f;
    tc.warmup_steps = 10;
    tc.total_steps = 200;
    tc.batch_size = 1;
    AdamState state;
    Tape tape;
    for (int step = 1; step <= tc.total_steps; ++step) {
        tape.clear();
        std::vector<Tensor> bound;
        for (auto& e : params.entries) bound.push_back(tape.leaf(e.value));
        Tensor h = gelu(add_rowvec(matmul(xtr, bound[0], &tape), bound[1], &tape), &tape);
        Tensor logits = add_rowvec(matmul(h, bound[2], &tape), bound[3], &tape);
        Tensor loss = cross_entropy_rows(logits, rows, ytr, &tape);
        auto grads_by_node = tape.backward(loss);
        std::vector<Tensor> grads(params.size());
        for (size_t i = 0; i < bound.size(); ++i) grads[i] = grads_by_node[static_cast<size_t>(bound[i].node)];
        adamw_step(params, grads, state, tc, step);
    }
    Tensor h = gelu(add_rowvec(matmul(xte, params.value(0), nullptr), params.value(1)));
    Tensor logits = add_rowvec(matmul(h, params.value(2), nullptr), params.value(3));
    const auto pred = argmax_lastdim(logits);
    int hits = 0;
    for (size_t i = 0; i < test.size(); ++i) hits += pred[i] == label_of(*test[i]);
    return static_cast<double>(hits) / static_cast<double>(test.size());
}

} // namespace

TEST_CASE("a direct classifier on raw pixels solves both tasks") {
    // the bottleneck is the only thing standing between the model and the
    // answers; verify the dataset itself is easy
    DataConfig cfg = small_cfg();
    cfg.n_train = 512;
    cfg.n_test = 1;
    Dataset ds = make_dataset(cfg);
    std::vector<const QASample*> tr, te;
    for (int i = 0; i < cfg.n_train; ++i)
        (i < cfg.n_train / 2 ? tr : te).push_back(&ds.train[static_cast<size_t>(i)]);
    const double s_acc =
        mlp_oracle_top1(tr, te, [](const QASample& s) { return s.scene.s_class; }, cfg.n_s);
    const double d_acc = mlp_oracle_top1(
        tr, te, [&](const QASample& s) { return detail_bin(s.scene.d_value, cfg.n_d_bins); },
        cfg.n_d_bins);
    CHECK(s_acc > 0.95);
    CHECK(d_acc > 0.95);
}
