#pragma once

#include <string>

#include "htc/config.hpp"

namespace htc {

// Each command writes only under <run.out>/<run.id>/ (resolved_config first)
// and returns a short human-readable summary.
std::string cmd_fit_quantizer(const RunConfig& rc);
std::string cmd_train(const RunConfig& rc);
std::string cmd_eval(const RunConfig& rc, const std::string& checkpoint_path);
std::string cmd_probe(const RunConfig& rc, const std::string& checkpoint_path);
std::string cmd_attn(const RunConfig& rc, const std::string& checkpoint_path);
std::string cmd_sweep(const RunConfig& rc, const std::string& axis);
std::string cmd_mask_dump(const RunConfig& rc); // returns the CSV itself
std::string cmd_bench(const RunConfig& rc);
std::string cmd_data_stats(const RunConfig& rc);

std::string run_dir(const RunConfig& rc);

} // namespace htc
