#include "htc/training.hpp"

#include <cmath>
#include <sstream>

#include "htc/rng.hpp"

namespace htc {

void TrainConfig::validate() const {
    HTC_CHECK(lr > 0.0f, config, "train: lr must be > 0");
    HTC_CHECK(beta_kl >= 0.0f, config, "train: beta_kl must be >= 0");
    HTC_CHECK(beta1 >= 0.0f && beta1 < 1.0f && beta2 >= 0.0f && beta2 < 1.0f, config,
              "train: betas must be in [0, 1)");
    HTC_CHECK(weight_decay >= 0.0f, config, "train: negative weight decay");
    HTC_CHECK(warmup_steps >= 0 && total_steps >= 1 && warmup_steps <= total_steps, config,
              "train: bad step counts");
    HTC_CHECK(batch_size >= 1, config, "train: batch_size must be >= 1");
}

TrainConfig TrainConfig::from_run_config(const RunConfig& rc) {
    TrainConfig c;
    c.lr = static_cast<float>(rc.get_double("train.lr"));
    c.beta1 = static_cast<float>(rc.get_double("train.beta1"));
    c.beta2 = static_cast<float>(rc.get_double("train.beta2"));
    c.weight_decay = static_cast<float>(rc.get_double("train.weight_decay"));
    c.beta_kl = static_cast<float>(rc.get_double("train.beta_kl"));
    c.warmup_steps = rc.get_int("train.warmup_steps");
    c.total_steps = rc.get_int("train.total_steps");
    c.batch_size = rc.get_int("train.batch_size");
    c.seed = rc.get_u64("run.seed");
    c.validate();
    return c;
}

float lr_at(const TrainConfig& cfg, int step) {
    HTC_CHECK(step >= 1, invalid_argument, "lr_at: steps are 1-based");
    if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps)
        return cfg.lr * static_cast<float>(step) / static_cast<float>(cfg.warmup_steps);
    const int span = std::max(1, cfg.total_steps - cfg.warmup_steps);
    const double t = static_cast<double>(step - cfg.warmup_steps) / span;
    return static_cast<float>(cfg.lr * 0.5 * (1.0 + std::cos(3.141592653589793 * std::min(1.0, t))));
}

LossParts loss_htc(const Tensor& logits, const std::vector<int>& answer_rows,
                   const std::vector<int>& answer_targets, const Tensor& z, float beta_kl,
                   int batch, Tape* tape) {
    HTC_CHECK(!answer_rows.empty(), invalid_argument, "loss_htc: no answer positions");
    HTC_CHECK(batch >= 1, invalid_argument, "loss_htc: bad batch");
    LossParts parts;
    Tensor ce = cross_entropy_rows(logits, answer_rows, answer_targets, tape);
    parts.ce = ce.item();
    if (beta_kl > 0.0f) {
        Tensor kl = scale(sumsq(z, tape), beta_kl / (2.0f * static_cast<float>(batch)), tape);
        parts.kl = kl.item();
        parts.loss = add(ce, kl, tape);
    } else {
        parts.kl = 0.0f;
        parts.loss = ce;
    }
    return parts;
}

void adamw_step(ParamSet& params, const std::vector<Tensor>& grads, AdamState& state,
                const TrainConfig& cfg, int step) {
    HTC_CHECK(step >= 1, invalid_argument, "adamw_step: steps are 1-based");
    HTC_CHECK(grads.size() == params.size(), invalid_argument, "adamw_step: grads/params mismatch");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(static_cast<size_t>(params.entries[i].value.numel()), 0.0f);
            state.v[i].assign(static_cast<size_t>(params.entries[i].value.numel()), 0.0f);
        }
    }
    const float lr = lr_at(cfg, step);
    const float bc1 = 1.0f - std::pow(cfg.beta1, static_cast<float>(step));
    const float bc2 = 1.0f - std::pow(cfg.beta2, static_cast<float>(step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params.entries[i].value;
        const int64_t n = p.numel();
        const Tensor& g = grads[i];
        const bool has_g = g.data && g.numel() == n;
        HTC_CHECK(has_g || g.numel() == 0, shape, "adamw_step: gradient shape mismatch for " +
                                                      params.entries[i].name);
        std::vector<float> next(static_cast<size_t>(n));
        float* m = state.m[i].data();
        float* v = state.v[i].data();
        const float* pv = p.ptr();
        for (int64_t j = 0; j < n; ++j) {
            const float gj = has_g ? g.at(j) : 0.0f;
            m[j] = cfg.beta1 * m[j] + (1.0f - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0f - cfg.beta2) * gj * gj;
            const float mhat = m[j] / bc1;
            const float vhat = v[j] / bc2;
            next[static_cast<size_t>(j)] =
                pv[j] - lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * pv[j]);
        }
        p = Tensor(p.shape, std::move(next));
    }
}

std::vector<int> answer_rows_for_batch(const LayoutSpec& layout, int question_len, int batch) {
    HTC_CHECK(question_len >= 1 && question_len < layout.n_w, invalid_argument,
              "answer rows: question must be a strict prefix of the text region");
    std::vector<int> rows;
    const int total = layout.total();
    const int ts = layout.text_start();
    for (int b = 0; b < batch; ++b)
        for (int t = question_len; t < layout.n_w; ++t)
            rows.push_back(b * total + ts + t - 1); // row predicting text token t
    return rows;
}

TrainResult train(HtcModel& model, const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    HTC_CHECK(!ds.train.empty(), invalid_argument, "train: empty dataset");
    const int q_len = static_cast<int>(ds.train.front().question.size());
    HTC_CHECK(model.spec.layout.n_w == q_len + 1, config,
              "train: layout.n_w must equal question length + 1");

    // frozen preprocessing is hoisted out of the step loop
    std::vector<SampleInput> inputs;
    inputs.reserve(ds.train.size());
    for (const QASample& s : ds.train) {
        std::vector<int> text = s.question;
        text.push_back(s.answer);
        inputs.push_back(model.prepare(s.image, std::move(text)));
    }

    Rng batch_rng(Rng::mix(cfg.seed, 0xb17c));
    AdamState state;
    TrainResult result;
    result.metrics.reserve(static_cast<size_t>(cfg.total_steps));

    Tape tape;
    for (int step = 1; step <= cfg.total_steps; ++step) {
        try {
            tape.clear();
            std::vector<const SampleInput*> batch;
            std::vector<int> targets;
            batch.reserve(static_cast<size_t>(cfg.batch_size));
            for (int b = 0; b < cfg.batch_size; ++b) {
                const size_t idx = static_cast<size_t>(batch_rng.below(ds.train.size()));
                batch.push_back(&inputs[idx]);
                targets.push_back(ds.train[idx].answer);
            }

            std::vector<Tensor> bound = model.bind(tape);
            ForwardResult fr = model.forward_batch(batch, model.spec.layout, &tape, &bound);
            const std::vector<int> rows =
                answer_rows_for_batch(model.spec.layout, q_len, cfg.batch_size);
            LossParts parts =
                loss_htc(fr.logits, rows, targets, fr.z, cfg.beta_kl, cfg.batch_size, &tape);
            const float loss_val = parts.loss.item();
            if (std::isnan(loss_val)) fail(ErrorCode::numeric, "NaN loss");

            std::vector<Tensor> node_grads = tape.backward(parts.loss);
            std::vector<Tensor> grads(model.params.size());
            for (size_t i = 0; i < bound.size(); ++i) {
                const int node = bound[i].node;
                if (node >= 0 && node < static_cast<int>(node_grads.size()))
                    grads[i] = std::move(node_grads[static_cast<size_t>(node)]);
            }
            adamw_step(model.params, grads, state, cfg, step);
            result.metrics.push_back({step, loss_val, parts.ce, parts.kl, lr_at(cfg, step)});
        } catch (const Error& e) {
            fail(e.code, "train aborted at step " + std::to_string(step) + ": " + e.what());
        }
    }
    return result;
}

std::string metrics_csv(const TrainResult& r) {
    std::ostringstream os;
    os << "step,loss,ce,kl,lr\n";
    for (const auto& m : r.metrics)
        os << m.step << "," << m.loss << "," << m.ce << "," << m.kl << "," << m.lr << "\n";
    return os.str();
}

} // namespace htc
