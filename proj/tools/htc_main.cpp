// htc: every experiment as a subcommand over the htcvlm C API.
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "htcvlm.h"

namespace {

struct ConfigDeleter {
    void operator()(htc_config* c) const { htc_config_free(c); }
};
using ConfigPtr = std::unique_ptr<htc_config, ConfigDeleter>;

struct Common {
    std::string config_path;
    std::string seed;
    std::string out;
    std::string run_id;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "config file (key = value lines)");
    cmd->add_option("--seed", c.seed, "run.seed override");
    cmd->add_option("--out", c.out, "run.out override (output directory)");
    cmd->add_option("--run-id", c.run_id, "run.id override");
    cmd->add_option("--set", c.sets, "config override key=value (repeatable)")
        ->take_all()
        ->expected(-1);
}

int die(htc_status st) {
    std::fprintf(stderr, "error: %s: %s\n", htc_status_name(st), htc_last_error());
    return static_cast<int>(st);
}

int build_config(const Common& c, ConfigPtr& cfg) {
    htc_config* raw = nullptr;
    htc_status st =
        c.config_path.empty() ? htc_config_create(&raw) : htc_config_load(c.config_path.c_str(), &raw);
    if (st != HTC_OK) return die(st);
    cfg.reset(raw);
    auto set = [&](const char* key, const std::string& value) -> int {
        if (value.empty()) return 0;
        htc_status s = htc_config_set(cfg.get(), key, value.c_str());
        return s == HTC_OK ? 0 : die(s);
    };
    if (int rc = set("run.seed", c.seed)) return rc;
    if (int rc = set("run.out", c.out)) return rc;
    if (int rc = set("run.id", c.run_id)) return rc;
    for (const std::string& kv : c.sets) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "error: config: --set expects key=value, got '%s'\n", kv.c_str());
            return static_cast<int>(HTC_ERR_CONFIG);
        }
        htc_status s = htc_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
        if (s != HTC_OK) return die(s);
    }
    return 0;
}

int print_result(htc_status st, char* text) {
    if (st != HTC_OK) {
        htc_string_free(text);
        return die(st);
    }
    const std::string out = text ? text : "";
    htc_string_free(text);
    std::printf("%s", out.c_str());
    if (out.empty() || out.back() != '\n') std::printf("\n");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hybrid token-compression experiments"};
    app.require_subcommand(1);

    Common common;
    std::string checkpoint;
    std::string axis = "channel";
    std::string n_d, n_v, n_b, n_w;

    auto* fitq = app.add_subcommand("fit-quantizer", "fit the frozen multi-group codebook");
    add_common(fitq, common);

    auto* train = app.add_subcommand("train", "train a model; writes metrics + checkpoint");
    add_common(train, common);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(eval, common);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

    auto* probe = app.add_subcommand("probe", "linear probes over z/v_d/V representations");
    add_common(probe, common);
    probe->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

    auto* attn = app.add_subcommand("attn", "bottleneck attention mass analysis");
    add_common(attn, common);
    attn->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

    auto* sweep = app.add_subcommand("sweep", "train/eval across one config axis");
    add_common(sweep, common);
    sweep->add_option("--axis", axis,
                      "axis: channel|n_d|n_b|fusion|k|g|beta|proj_depth|mask");

    auto* mask = app.add_subcommand("mask-dump", "emit the attention mask as 0/1 CSV");
    add_common(mask, common);
    mask->add_option("--n_d", n_d, "layout.n_d override");
    mask->add_option("--n_v", n_v, "layout.n_v override");
    mask->add_option("--n_b", n_b, "layout.n_b override");
    mask->add_option("--n_w", n_w, "layout.n_w override");

    auto* bench = app.add_subcommand("bench", "attention op-count accounting and local timing");
    add_common(bench, common);
    bench->add_option("--n_v", n_v, "layout.n_v override");
    bench->add_option("--n_b", n_b, "layout.n_b override");
    bench->add_option("--n_w", n_w, "layout.n_w override");

    auto* stats = app.add_subcommand("data-stats", "synthetic dataset balance and correlation");
    add_common(stats, common);

    CLI11_PARSE(app, argc, argv);

    ConfigPtr cfg;
    if (int rc = build_config(common, cfg)) return rc;
    auto maybe_set = [&](const char* key, const std::string& v) -> int {
        if (v.empty()) return 0;
        htc_status s = htc_config_set(cfg.get(), key, v.c_str());
        return s == HTC_OK ? 0 : die(s);
    };
    if (int rc = maybe_set("layout.n_d", n_d)) return rc;
    if (int rc = maybe_set("layout.n_v", n_v)) return rc;
    if (int rc = maybe_set("layout.n_b", n_b)) return rc;
    if (int rc = maybe_set("layout.n_w", n_w)) return rc;

    char* text = nullptr;
    htc_status st = HTC_ERR_INVALID_ARGUMENT;
    if (fitq->parsed()) st = htc_run_fit_quantizer(cfg.get(), &text);
    else if (train->parsed()) st = htc_run_train(cfg.get(), &text);
    else if (eval->parsed()) st = htc_run_eval(cfg.get(), checkpoint.c_str(), &text);
    else if (probe->parsed()) st = htc_run_probe(cfg.get(), checkpoint.c_str(), &text);
    else if (attn->parsed()) st = htc_run_attn(cfg.get(), checkpoint.c_str(), &text);
    else if (sweep->parsed()) st = htc_run_sweep(cfg.get(), axis.c_str(), &text);
    else if (mask->parsed()) st = htc_run_mask_dump(cfg.get(), &text);
    else if (bench->parsed()) st = htc_run_bench(cfg.get(), &text);
    else if (stats->parsed()) st = htc_run_data_stats(cfg.get(), &text);
    return print_result(st, text);
}
