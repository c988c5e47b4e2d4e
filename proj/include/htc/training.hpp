#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "htc/config.hpp"
#include "htc/model.hpp"
#include "htc/synthdata.hpp"

namespace htc {

struct TrainConfig {
    float lr = 3e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
    float beta_kl = 0.1f;
    int warmup_steps = 100;
    int total_steps = 3000;
    int batch_size = 8;
    uint64_t seed = 7;

    void validate() const;
    static TrainConfig from_run_config(const RunConfig& rc);
};

// Linear warmup to cfg.lr at step == warmup_steps, cosine decay to 0 at
// step == total_steps. Steps are 1-based.
float lr_at(const TrainConfig& cfg, int step);

struct LossParts {
    Tensor loss; // ce + beta_kl * |z|^2 / 2, per-sample mean
    float ce = 0.0f;
    float kl = 0.0f;
};

// Cross-entropy over the rows that predict answer tokens (question tokens
// carry no loss) plus the KL-style pull of z toward the origin.
LossParts loss_htc(const Tensor& logits, const std::vector<int>& answer_rows,
                   const std::vector<int>& answer_targets, const Tensor& z, float beta_kl,
                   int batch, Tape* tape);

struct AdamState {
    std::vector<std::vector<float>> m, v;
};

// Decoupled-weight-decay Adam with bias correction. Params without a
// gradient this step are updated as if their gradient were zero.
void adamw_step(ParamSet& params, const std::vector<Tensor>& grads, AdamState& state,
                const TrainConfig& cfg, int step);

struct StepMetrics {
    int step;
    float loss, ce, kl, lr;
};

struct TrainResult {
    std::vector<StepMetrics> metrics;
};

// Rows of logits that predict the answer tokens of each batch element.
std::vector<int> answer_rows_for_batch(const LayoutSpec& layout, int question_len, int batch);

TrainResult train(HtcModel& model, const Dataset& ds, const TrainConfig& cfg);

std::string metrics_csv(const TrainResult& r);

} // namespace htc
