#include "htcvlm.h"

#include <cstring>
#include <new>
#include <string>

#include "htc/commands.hpp"
#include "htc/config.hpp"
#include "htc/runner.hpp"

struct htc_config {
    htc::RunConfig rc;
};

struct htc_model {
    htc::HtcModel model;
    std::string config_text;
};

namespace {

thread_local std::string g_last_error;

htc_status code_of(htc::ErrorCode c) {
    using htc::ErrorCode;
    switch (c) {
        case ErrorCode::invalid_argument: return HTC_ERR_INVALID_ARGUMENT;
        case ErrorCode::config: return HTC_ERR_CONFIG;
        case ErrorCode::io: return HTC_ERR_IO;
        case ErrorCode::checkpoint: return HTC_ERR_CHECKPOINT;
        case ErrorCode::shape: return HTC_ERR_SHAPE;
        case ErrorCode::numeric: return HTC_ERR_NUMERIC;
        case ErrorCode::unsupported: return HTC_ERR_UNSUPPORTED;
        default: return HTC_ERR_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* out = new (std::nothrow) char[s.size() + 1];
    if (!out) return nullptr;
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

template <typename Fn>
htc_status guarded(Fn&& fn) {
    try {
        fn();
        return HTC_OK;
    } catch (const htc::Error& e) {
        g_last_error = e.what();
        return code_of(e.code);
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return HTC_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return HTC_ERR_INTERNAL;
    }
}

htc_status require(bool ok, const char* msg) {
    if (ok) return HTC_OK;
    g_last_error = msg;
    return HTC_ERR_INVALID_ARGUMENT;
}

htc_status out_string(char** out, const std::string& s) {
    *out = dup_string(s);
    if (*out) return HTC_OK;
    g_last_error = "allocation failure";
    return HTC_ERR_INTERNAL;
}

} // namespace

extern "C" {

const char* htc_version(void) {
    return "htcvlm 0.1.0";
}

const char* htc_status_name(htc_status status) {
    switch (status) {
        case HTC_OK: return "ok";
        case HTC_ERR_INVALID_ARGUMENT: return "invalid_argument";
        case HTC_ERR_CONFIG: return "config";
        case HTC_ERR_IO: return "io";
        case HTC_ERR_CHECKPOINT: return "checkpoint";
        case HTC_ERR_SHAPE: return "shape";
        case HTC_ERR_NUMERIC: return "numeric";
        case HTC_ERR_UNSUPPORTED: return "unsupported";
        default: return "internal";
    }
}

const char* htc_last_error(void) {
    return g_last_error.c_str();
}

void htc_string_free(char* s) {
    delete[] s;
}

htc_status htc_config_create(htc_config** out) {
    if (htc_status st = require(out != nullptr, "null out pointer")) return st;
    return guarded([&] { *out = new htc_config{htc::RunConfig::defaults()}; });
}

htc_status htc_config_load(const char* path, htc_config** out) {
    if (htc_status st = require(path && out, "null argument")) return st;
    return guarded([&] { *out = new htc_config{htc::RunConfig::from_file(path)}; });
}

htc_status htc_config_set(htc_config* cfg, const char* key, const char* value) {
    if (htc_status st = require(cfg && key && value, "null argument")) return st;
    return guarded([&] { cfg->rc.set(key, value); });
}

htc_status htc_config_get(const htc_config* cfg, const char* key, char** value_out) {
    if (htc_status st = require(cfg && key && value_out, "null argument")) return st;
    htc_status rc = HTC_OK;
    htc_status st = guarded([&] { rc = out_string(value_out, cfg->rc.get(key)); });
    return st != HTC_OK ? st : rc;
}

htc_status htc_config_resolved(const htc_config* cfg, char** text_out) {
    if (htc_status st = require(cfg && text_out, "null argument")) return st;
    htc_status rc = HTC_OK;
    htc_status st = guarded([&] { rc = out_string(text_out, cfg->rc.resolved_text()); });
    return st != HTC_OK ? st : rc;
}

void htc_config_free(htc_config* cfg) {
    delete cfg;
}

htc_status htc_model_open(const char* checkpoint_path, htc_model** out) {
    if (htc_status st = require(checkpoint_path && out, "null argument")) return st;
    return guarded([&] {
        htc::Checkpoint ckpt = htc::load_checkpoint(checkpoint_path);
        auto* m = new htc_model{htc::model_from_checkpoint(ckpt),
                                htc::RunConfig::from_lines(ckpt.config).resolved_text()};
        *out = m;
    });
}

htc_status htc_model_config(const htc_model* model, char** text_out) {
    if (htc_status st = require(model && text_out, "null argument")) return st;
    return out_string(text_out, model->config_text);
}

void htc_model_free(htc_model* model) {
    delete model;
}

htc_status htc_run_fit_quantizer(const htc_config* cfg, char** summary_out) {
    if (htc_status st = require(cfg && summary_out, "null argument")) return st;
    htc_status rc = HTC_OK;
    htc_status st = guarded([&] { rc = out_string(summary_out, htc::cmd_fit_quantizer(cfg->rc)); });
    return st != HTC_OK ? st : rc;
}

htc_status htc_run_train(const htc_config* cfg, char** summary_out) {
    if (htc_status st = require(cfg && summary_out, "null argument")) return st;
    htc_status rc = HTC_OK;
    htc_status st = guarded([&] { rc = out_string(summary_out, htc::cmd_train(cfg->rc)); });
    return st != HTC_OK ? st : rc;
}

htc_status htc_run_eval(const htc_config* cfg, const char* checkpoint, char** summary_out) {
    if (htc_status st = require(cfg && checkpoint && summary_out, "null argument")) return st;
    htc_status rc = HTC_OK;
    htc_status st =
        guarded([&] { rc = out_string(summary_out, htc::cmd_eval(cfg->rc, checkpoint)); });
    return st != HTC_OK ? st : rc;
}

htc_status htc_run_probe(const htc_config* cfg, const char* checkpoint, char** summary_out) {
    if (htc_status st = require(cfg && checkpoint && summary_out, "null argument")) return st;
    htc_status rc = HTC_OK;
    htc_status st =
        guarded([&] { rc = out_string(summary_out, htc::cmd_probe(cfg->rc, checkpoint)); });
    return st != HTC_OK ? st : rc;
}

htc_status htc_run_attn(const htc_config* cfg, const char* checkpoint, char** summary_out) {
    if (htc_status st = require(cfg && checkpoint && summary_out, "null argument")) return st;
    htc_status rc = HTC_OK;
    htc_status st =
        guarded([&] { rc = out_string(summary_out, htc::cmd_attn(cfg->rc, checkpoint)); });
    return st != HTC_OK ? st : rc;
}

htc_status htc_run_sweep(const htc_config* cfg, const char* axis, char** summary_out) {
    if (htc_status st = require(cfg && axis && summary_out, "null argument")) return st;
    htc_status rc = HTC_OK;
    htc_status st = guarded([&] { rc = out_string(summary_out, htc::cmd_sweep(cfg->rc, axis)); });
    return st != HTC_OK ? st : rc;
}

htc_status htc_run_mask_dump(const htc_config* cfg, char** csv_out) {
    if (htc_status st = require(cfg && csv_out, "null argument")) return st;
    htc_status rc = HTC_OK;
    htc_status st = guarded([&] { rc = out_string(csv_out, htc::cmd_mask_dump(cfg->rc)); });
    return st != HTC_OK ? st : rc;
}

htc_status htc_run_bench(const htc_config* cfg, char** report_out) {
    if (htc_status st = require(cfg && report_out, "null argument")) return st;
    htc_status rc = HTC_OK;
    htc_status st = guarded([&] { rc = out_string(report_out, htc::cmd_bench(cfg->rc)); });
    return st != HTC_OK ? st : rc;
}

htc_status htc_run_data_stats(const htc_config* cfg, char** report_out) {
    if (htc_status st = require(cfg && report_out, "null argument")) return st;
    htc_status rc = HTC_OK;
    htc_status st = guarded([&] { rc = out_string(report_out, htc::cmd_data_stats(cfg->rc)); });
    return st != HTC_OK ? st : rc;
}

} // extern "C"
