#include "htc/runner.hpp"

#include <algorithm>

namespace htc {

ModelSpec model_spec_from(const RunConfig& rc) {
    ModelSpec s;
    s.tf.d_model = rc.get_int("model.d_model");
    s.tf.n_heads = rc.get_int("model.n_heads");
    s.tf.n_layers = rc.get_int("model.n_layers");
    s.tf.d_ff = rc.get_int("model.d_ff");
    const DataConfig dc = DataConfig::from_run_config(rc);
    s.tf.vocab_size = dc.vocab_size();
    s.layout.n_d = rc.get_int("layout.n_d");
    s.layout.n_v = rc.get_int("layout.n_v");
    s.layout.n_b = rc.get_int("layout.n_b");
    s.layout.n_w = rc.get_int("layout.n_w");
    s.layout.fusion = parse_fusion(rc.get("layout.fusion"));
    s.topology = parse_topology(rc.get("layout.mask"));
    s.image_size = rc.get_int("data.image_size");
    s.patch_size = rc.get_int("enc.patch_size");
    s.d_enc = rc.get_int("enc.d_enc");
    s.h_d = rc.get_int("model.h_d");
    s.proj_depth = rc.get_int("model.proj_depth");
    s.quant_downsample = rc.get_int("quant.downsample");
    s.quant_groups = rc.get_int("quant.groups");
    s.quant_entries = rc.get_int("quant.entries");
    s.quant_group_dim = rc.get_int("quant.group_dim");
    s.max_text_len = rc.get_int("model.max_text_len");
    s.validate();
    return s;
}

Codebook fit_codebook_for(const RunConfig& rc, const std::vector<QASample>& train_samples,
                          std::vector<double>* iter_errors) {
    const int groups = rc.get_int("quant.groups");
    const int group_dim = rc.get_int("quant.group_dim");
    const int downsample = rc.get_int("quant.downsample");
    std::vector<Tensor> feats;
    feats.reserve(train_samples.size());
    for (const QASample& s : train_samples)
        feats.push_back(extract_group_features(s.image, downsample, groups, group_dim));
    return fit_codebook(feats, rc.get_int("quant.entries"), rc.get_int("quant.kmeans_iters"),
                        rc.get_u64("run.seed"), nullptr, iter_errors);
}

HtcModel build_model(const RunConfig& rc, const std::vector<QASample>& train_samples) {
    ModelSpec spec = model_spec_from(rc);
    Codebook cb;
    if (spec.layout.n_d > 0) cb = fit_codebook_for(rc, train_samples);
    HtcModel m = HtcModel::init(spec, std::move(cb), rc.get_u64("run.seed"));
    m.origin_config = rc.lines();
    return m;
}

Checkpoint model_to_checkpoint(const HtcModel& model) {
    HTC_CHECK(!model.origin_config.empty(), internal, "model has no config to serialize");
    Checkpoint c;
    c.config = model.origin_config;
    if (model.enc_embed.numel() > 0) c.tensors.emplace_back("enc.embed", model.enc_embed);
    if (!model.codebook.empty()) c.tensors.emplace_back("quant.codebook", model.codebook.vectors);
    for (const auto& e : model.params.entries) c.tensors.emplace_back(e.name, e.value);
    return c;
}

HtcModel model_from_checkpoint(const Checkpoint& ckpt) {
    RunConfig rc = RunConfig::from_lines(ckpt.config);
    ModelSpec spec = model_spec_from(rc);

    Codebook cb;
    if (spec.layout.n_d > 0) {
        const Tensor* cbt = ckpt.find("quant.codebook");
        HTC_CHECK(cbt != nullptr, checkpoint, "checkpoint: missing quant.codebook");
        HTC_CHECK(cbt->shape ==
                      std::vector<int>({spec.quant_groups, spec.quant_entries, spec.quant_group_dim}),
                  checkpoint, "checkpoint: codebook shape disagrees with config");
        cb.groups = spec.quant_groups;
        cb.entries = spec.quant_entries;
        cb.group_dim = spec.quant_group_dim;
        cb.vectors = *cbt;
        cb.frozen = true;
    }

    HtcModel m = HtcModel::init(spec, std::move(cb), rc.get_u64("run.seed"));
    m.origin_config = ckpt.config;
    if (spec.layout.n_v > 0) {
        const Tensor* emb = ckpt.find("enc.embed");
        HTC_CHECK(emb != nullptr, checkpoint, "checkpoint: missing enc.embed");
        HTC_CHECK(emb->shape == m.enc_embed.shape, checkpoint, "checkpoint: enc.embed shape mismatch");
        m.enc_embed = *emb;
    }
    for (auto& e : m.params.entries) {
        const Tensor* t = ckpt.find(e.name);
        HTC_CHECK(t != nullptr, checkpoint, "checkpoint: missing tensor " + e.name);
        HTC_CHECK(t->shape == e.value.shape, checkpoint,
                  "checkpoint: tensor " + e.name + " has shape " + t->shape_str() + ", expected " +
                      e.value.shape_str());
        e.value = *t;
    }
    return m;
}

namespace {

const char* kStructuralPrefixes[] = {"model.", "layout.", "quant.", "enc."};
const char* kStructuralKeys[] = {"data.n_s", "data.n_d_bins", "data.image_size", "data.stripe_freq"};

bool is_structural(const std::string& key) {
    for (const char* p : kStructuralPrefixes)
        if (key.rfind(p, 0) == 0) return true;
    for (const char* k : kStructuralKeys)
        if (key == k) return true;
    return false;
}

} // namespace

void check_config_compat(const RunConfig& current, const RunConfig& from_ckpt) {
    for (const auto& [key, value] : current.lines()) {
        if (!is_structural(key)) continue;
        if (current.is_default(key)) continue;
        HTC_CHECK(value == from_ckpt.get(key), config,
                  "config-mismatch: " + key + " = " + value + " but checkpoint was built with " +
                      from_ckpt.get(key));
    }
}

RunConfig merge_for_eval(const RunConfig& current, const RunConfig& from_ckpt) {
    check_config_compat(current, from_ckpt);
    RunConfig merged = from_ckpt;
    for (const auto& [key, value] : current.lines())
        if (!is_structural(key) && !current.is_default(key)) merged.set(key, value);
    return merged;
}

TrainedRun run_training(const RunConfig& rc) {
    TrainedRun out{HtcModel{}, TrainResult{}, make_dataset(DataConfig::from_run_config(rc))};
    out.model = build_model(rc, out.data.train);
    out.metrics = train(out.model, out.data, TrainConfig::from_run_config(rc));
    return out;
}

} // namespace htc
