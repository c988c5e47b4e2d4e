#pragma once

#include <optional>
#include <string>
#include <vector>

#include "htc/runner.hpp"

namespace htc {

struct EvalResult {
    double acc_s = 0.0, acc_d = 0.0, acc_all = 0.0;
    int n_s = 0, n_d = 0;
};

// Greedy single-token decoding against the stored answers.
EvalResult evaluate(const HtcModel& model, const std::vector<QASample>& samples);

struct RepSet {
    std::vector<float> z_voco;                // voco latent (mean over n_b rows)
    std::optional<std::vector<float>> v_d_mean; // anchors mean-pooled, pre-transformer
    std::optional<std::vector<float>> v_mean;   // patches mean-pooled, pre-transformer
};

RepSet extract_representations(const HtcModel& model, const QASample& sample);

struct ProbeOutcome {
    double top1 = 0.0;
    int n = 0;
};

// Multinomial logistic regression, full-batch gradient descent with a fixed
// iteration budget; features standardized on the train split. Deterministic.
ProbeOutcome linear_probe(const std::vector<std::vector<float>>& features,
                          const std::vector<int>& labels, const std::vector<int>& train_idx,
                          const std::vector<int>& test_idx, int n_classes, int iters, float lr);

std::vector<int> shuffle_labels(const std::vector<int>& labels, uint64_t seed);

struct AttnMassResult {
    std::vector<double> anchor_mean;      // per sample
    std::vector<double> patch_mean;       // per sample
    std::vector<std::vector<float>> heat; // per sample: n_d anchor cols + first <=12 patch cols
    double frac_anchor_dominant = 0.0;
    int heat_anchor_cols = 0;
};

// Final-layer, head-averaged attention of the last bottleneck row, split
// into anchor vs patch positions (indices derived from the layout). With
// tied_null, anchor rows are swapped for randomly drawn patch rows, the
// null hypothesis that anchors carry nothing special.
AttnMassResult attn_mass(const HtcModel& model, const std::vector<QASample>& samples,
                         bool tied_null = false, uint64_t null_seed = 0);

struct SweepRow {
    std::string axis;
    std::string value;
    uint64_t seed = 0;
    double acc_s = 0.0, acc_d = 0.0, acc_all = 0.0;
    double retention = 0.0; // NaN when no reference was run
    bool failed = false;
    std::string error;
};

// Trains one model per (value, seed); the per-seed reference is an
// uncompressed run (full causal mask, continuous tokens only).
std::vector<SweepRow> run_sweep(const RunConfig& base, const std::string& axis,
                                const std::vector<std::string>& values,
                                const std::vector<uint64_t>& seeds, bool with_reference);

RunConfig apply_axis(const RunConfig& base, const std::string& axis, const std::string& value);
RunConfig reference_config(const RunConfig& base);
std::vector<std::string> default_axis_values(const std::string& axis);

std::string sweep_csv(const std::vector<SweepRow>& rows);

} // namespace htc
