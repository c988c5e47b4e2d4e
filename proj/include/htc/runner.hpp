#pragma once

#include "htc/checkpoint.hpp"
#include "htc/config.hpp"
#include "htc/model.hpp"
#include "htc/synthdata.hpp"
#include "htc/training.hpp"

namespace htc {

ModelSpec model_spec_from(const RunConfig& rc);

// Fits the frozen codebook on the training images named by the config.
Codebook fit_codebook_for(const RunConfig& rc, const std::vector<QASample>& train_samples,
                          std::vector<double>* iter_errors = nullptr);

// Fresh model (codebook fitted when the layout uses anchors).
HtcModel build_model(const RunConfig& rc, const std::vector<QASample>& train_samples);

Checkpoint model_to_checkpoint(const HtcModel& model);
HtcModel model_from_checkpoint(const Checkpoint& ckpt);

// Structural keys of `current` that were explicitly set must agree with the
// checkpoint they are applied to.
void check_config_compat(const RunConfig& current, const RunConfig& from_ckpt);
// Checkpoint config with the caller's non-structural overrides applied.
RunConfig merge_for_eval(const RunConfig& current, const RunConfig& from_ckpt);

struct TrainedRun {
    HtcModel model;
    TrainResult metrics;
    Dataset data;
};

TrainedRun run_training(const RunConfig& rc);

} // namespace htc
