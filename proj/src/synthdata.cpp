#include "htc/synthdata.hpp"

#include <cmath>

#include "htc/rng.hpp"

namespace htc {

void DataConfig::validate() const {
    HTC_CHECK(n_s >= 2 && n_s <= 8, config, "data: n_s must be in [2, 8]");
    HTC_CHECK(n_d_bins >= 2 && n_d_bins <= 16, config, "data: n_d_bins must be in [2, 16]");
    HTC_CHECK(n_train >= 1 && n_test >= 1, config, "data: empty split");
    HTC_CHECK(image_size >= 16 && image_size % 2 == 0, config, "data: image_size must be even, >= 16");
    HTC_CHECK(noise_sigma >= 0.0f, config, "data: negative noise");
    HTC_CHECK(stripe_freq >= 1, config, "data: stripe_freq must be >= 1");
}

DataConfig DataConfig::from_run_config(const RunConfig& rc) {
    DataConfig c;
    c.n_s = rc.get_int("data.n_s");
    c.n_d_bins = rc.get_int("data.n_d_bins");
    c.n_train = rc.get_int("data.n_train");
    c.n_test = rc.get_int("data.n_test");
    c.image_size = rc.get_int("data.image_size");
    c.noise_sigma = static_cast<float>(rc.get_double("data.noise_sigma"));
    c.stripe_freq = rc.get_int("data.stripe_freq");
    c.seed = rc.get_u64("run.seed");
    c.validate();
    return c;
}

std::vector<uint8_t> shape_mask(int s_class, const DataConfig& cfg) {
    HTC_CHECK(s_class >= 0 && s_class < cfg.n_s, invalid_argument, "shape_mask: class out of range");
    const int n = cfg.image_size;
    const int shape_id = s_class / 2;
    const int pos_id = s_class % 2;
    const int cy = n / 2;
    const int cx = pos_id == 0 ? n / 4 : 3 * n / 4;
    const int r = n / 4 - 2; // template half-extent

    std::vector<uint8_t> mask(static_cast<size_t>(n) * n, 0);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const int dy = y - cy, dx = x - cx;
            bool on = false;
            switch (shape_id) {
                case 0: on = std::abs(dx) <= r - 1 && std::abs(dy) <= r - 1; break;      // square
                case 1: on = dx * dx + dy * dy <= r * r; break;                          // disc
                case 2:                                                                  // cross
                    on = (std::abs(dx) <= r / 3 && std::abs(dy) <= r) ||
                         (std::abs(dy) <= r / 3 && std::abs(dx) <= r);
                    break;
                default: {                                                               // ring
                    const int dd = dx * dx + dy * dy;
                    on = dd <= r * r && dd >= (r - 3) * (r - 3);
                    break;
                }
            }
            if (on) mask[static_cast<size_t>(y) * n + x] = 1;
        }
    return mask;
}

Tensor render(const SceneSpec& spec, const DataConfig& cfg) {
    cfg.validate();
    HTC_CHECK(spec.s_class >= 0 && spec.s_class < cfg.n_s, invalid_argument,
              "render: s_class out of range");
    HTC_CHECK(spec.d_value >= 0.0f && spec.d_value < 1.0f, invalid_argument,
              "render: d_value must be in [0, 1)");
    const int n = cfg.image_size;
    const std::vector<uint8_t> mask = shape_mask(spec.s_class, cfg);

    Tensor img = Tensor::zeros({n, n, 1});
    float* p = img.data->data();
    Rng noise(spec.seed);
    const double two_pi = 6.283185307179586;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double stripe =
                std::cos(two_pi * (static_cast<double>(cfg.stripe_freq) * x / n - spec.d_value));
            double v = 0.35 + 0.30 * stripe;
            if (mask[static_cast<size_t>(y) * n + x]) v += 0.35;
            v += cfg.noise_sigma * noise.normal();
            p[static_cast<size_t>(y) * n + x] = static_cast<float>(v);
        }
    return img;
}

int detail_bin(float d_value, int n_bins) {
    int b = static_cast<int>(d_value * static_cast<float>(n_bins));
    if (b >= n_bins) b = n_bins - 1;
    return b;
}

int answer_for(const SceneSpec& spec, int task, const DataConfig& cfg) {
    return task == kTaskS ? spec.s_class : cfg.n_s + detail_bin(spec.d_value, cfg.n_d_bins);
}

namespace {

QASample make_sample(int index, int split_tag, const DataConfig& cfg) {
    QASample s;
    s.scene.s_class = index % cfg.n_s;
    s.task = (index / cfg.n_s) % 2;
    Rng rng(Rng::mix(cfg.seed, (static_cast<uint64_t>(split_tag) << 32) | static_cast<uint64_t>(index)));
    s.scene.d_value = static_cast<float>(rng.uniform());
    s.scene.seed = rng.next_u64();
    s.image = render(s.scene, cfg);
    s.question = {cfg.task_token(s.task)};
    s.answer = answer_for(s.scene, s.task, cfg);
    return s;
}

} // namespace

Dataset make_dataset(const DataConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.cfg = cfg;
    ds.train.reserve(static_cast<size_t>(cfg.n_train));
    ds.test.reserve(static_cast<size_t>(cfg.n_test));
    for (int i = 0; i < cfg.n_train; ++i) ds.train.push_back(make_sample(i, 1, cfg));
    for (int i = 0; i < cfg.n_test; ++i) ds.test.push_back(make_sample(i, 2, cfg));
    return ds;
}

} // namespace htc
