#pragma once

#include <cstdint>
#include <vector>

#include "htc/config.hpp"
#include "htc/tensor.hpp"

namespace htc {

struct DataConfig {
    int n_s = 8;        // semantic classes (shape identity x coarse position)
    int n_d_bins = 8;   // detail answer bins
    int n_train = 512;
    int n_test = 256;
    int image_size = 32;
    float noise_sigma = 0.02f;
    int stripe_freq = 3;
    uint64_t seed = 7;

    // token ids: [0, n_s) semantic answers, [n_s, n_s + n_d_bins) detail
    // answers, then the two task-selector tokens
    int vocab_size() const { return n_s + n_d_bins + 2; }
    int task_token(int task) const { return n_s + n_d_bins + task; }
    void validate() const;

    static DataConfig from_run_config(const RunConfig& rc);
};

constexpr int kTaskS = 0;
constexpr int kTaskD = 1;

struct SceneSpec {
    int s_class = 0;
    float d_value = 0.0f; // in [0, 1)
    uint64_t seed = 0;
};

struct QASample {
    Tensor image; // [H x W x 1]
    std::vector<int> question;
    int answer = 0;
    int task = kTaskS;
    SceneSpec scene;
};

struct Dataset {
    DataConfig cfg;
    std::vector<QASample> train;
    std::vector<QASample> test;
};

// Deterministic renderer: one of n_s shape/position templates over a stripe
// texture whose phase encodes d_value, plus seeded Gaussian pixel noise.
Tensor render(const SceneSpec& spec, const DataConfig& cfg);

// Boolean template mask for a class, used by tests to localize pixel diffs.
std::vector<uint8_t> shape_mask(int s_class, const DataConfig& cfg);

int detail_bin(float d_value, int n_bins);
int answer_for(const SceneSpec& spec, int task, const DataConfig& cfg);

Dataset make_dataset(const DataConfig& cfg);

} // namespace htc
