#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "htc/encoders.hpp"
#include "htc/hybrid.hpp"
#include "htc/quantizer.hpp"

namespace htc {

struct TransformerConfig {
    int d_model = 64;
    int n_heads = 4;
    int n_layers = 2;
    int d_ff = 256;
    int vocab_size = 10;

    int d_k() const { return d_model / n_heads; }
    void validate() const {
        HTC_CHECK(n_heads > 0 && d_model % n_heads == 0, config,
                  "transformer: d_model must be divisible by n_heads");
        HTC_CHECK(n_layers >= 1 && d_ff >= 1 && vocab_size >= 2, config, "transformer: bad dims");
    }
};

// Ordered named tensors; the order fixes checkpoint layout and the gradient
// accumulation order.
struct ParamSet {
    struct Entry {
        std::string name;
        Tensor value;
    };
    std::vector<Entry> entries;

    int add(const std::string& name, Tensor t);
    int find(const std::string& name) const; // -1 when missing
    Tensor& value(int id) { return entries[static_cast<size_t>(id)].value; }
    const Tensor& value(int id) const { return entries[static_cast<size_t>(id)].value; }
    size_t size() const { return entries.size(); }
    int64_t total_elems() const;
};

struct ModelSpec {
    TransformerConfig tf;
    LayoutSpec layout; // training layout; n_w = question + answer length
    MaskTopology topology = MaskTopology::star;
    int image_size = 32;
    int patch_size = 8;
    int d_enc = 32;
    int h_d = 128;      // discrete projector hidden width
    int proj_depth = 2; // 1 = linear, 2 = two-layer MLP, 3 = deeper
    int quant_downsample = 8;
    int quant_groups = 4;
    int quant_entries = 32;
    int quant_group_dim = 4;
    int max_text_len = 4;

    int n_patches_full() const {
        const int g = image_size / patch_size;
        return g * g;
    }
    int quant_positions() const {
        const int g = image_size / quant_downsample;
        return g * g;
    }
    int q_dim() const { return quant_positions() * quant_groups * quant_group_dim; }
    void validate() const;
};

struct ForwardHooks {
    // filled with the post-block bottleneck rows of every layer
    std::vector<Tensor>* record_voco = nullptr;
    // replaces the post-block bottleneck rows of layer l with (*override_voco)[l]
    const std::vector<Tensor>* override_voco = nullptr;
    bool zero_voco = false;
    // null-hypothesis construction: anchor rows are replaced by patch rows
    // drawn at random (per sample), so anchors carry no special content
    bool tie_anchors = false;
    uint64_t tie_seed = 0;
    // per layer: batch*heads*seq*seq post-softmax attention probabilities
    std::vector<std::vector<float>>* attn = nullptr;
};

struct ForwardResult {
    Tensor logits; // [batch*seq x vocab]
    Tensor z;      // [batch*n_b x d_model], post final block, pre final norm
    int batch = 1;
    int seq = 0;
};

// Per-sample inputs with the frozen preprocessing (patchify + quantize)
// already applied; training reuses these across steps.
struct SampleInput {
    Tensor patches;               // [n_v x patch_dim]
    Tensor q;                     // [1 x q_dim]; empty when the layout has no anchors
    std::vector<int> text_tokens; // question (+ teacher-forced answer during training)
};

class HtcModel {
public:
    ModelSpec spec;
    Codebook codebook; // frozen; empty when layout.n_d == 0
    Tensor enc_embed;  // frozen featurizer weights [patch_dim x d_enc]
    ParamSet params;
    // full resolved run config, echoed into checkpoints
    std::vector<std::pair<std::string, std::string>> origin_config;

    static HtcModel init(const ModelSpec& spec, Codebook codebook, uint64_t seed);

    SampleInput prepare(const Tensor& image, std::vector<int> text_tokens) const;

    std::vector<Tensor> bind(Tape& tape) const;

    ForwardResult forward_batch(const std::vector<const SampleInput*>& batch,
                                const LayoutSpec& layout, Tape* tape = nullptr,
                                const std::vector<Tensor>* bound = nullptr,
                                const ForwardHooks* hooks = nullptr) const;

    ForwardResult forward_single(const SampleInput& input, Tape* tape = nullptr,
                                 const ForwardHooks* hooks = nullptr) const;
    ForwardResult forward_single(const SampleInput& input, const LayoutSpec& layout,
                                 Tape* tape = nullptr, const ForwardHooks* hooks = nullptr) const;

    // raw channel outputs (no positional terms); probing reads these
    Tensor continuous_tokens(const SampleInput& input) const; // [n_v x d_model]
    Tensor discrete_tokens(const SampleInput& input) const;   // [n_d x d_model]

    struct GenerateResult {
        std::vector<int> tokens; // question plus generated answer tokens
        bool truncated = false;
    };
    // Greedy decoding; generated tokens extend the text region under the
    // text-region mask rules.
    GenerateResult generate(const SampleInput& prefix, int max_new) const;

    const AttentionMask& train_mask() const { return mask_; }

private:
    AttentionMask mask_;    // for spec.layout
    Tensor addmask_;        // additive form of mask_
    struct LayerIds {
        int ln1_g, ln1_b, wq, bq, wk, wv, bv, wo, bo;
        int ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
    };
    struct Ids {
        int proj_v = -1, proj_vb = -1;
        std::vector<int> disc_w, disc_b;
        int voco = -1, pos_anchor = -1, pos_patch = -1, pos_text = -1, tok_emb = -1;
        std::vector<LayerIds> layers;
        int lnf_g = -1, lnf_b = -1, head_w = -1, head_b = -1;
    } ids_;
    friend class ModelIo;
};

// Exact multiply-add counts for one masked attention layer. Dense mode
// charges every (i, j) pair; sparse mode charges only pairs the mask allows.
// Region fields are sparse qk+av totals over rows of that region.
struct AttnOpCounts {
    uint64_t dense_qk = 0, dense_av = 0, dense_total = 0;
    uint64_t sparse_qk = 0, sparse_av = 0, sparse_total = 0;
    uint64_t sparse_visual = 0, sparse_voco = 0, sparse_text = 0;
};

AttnOpCounts attention_flop_count(const LayoutSpec& layout, const TransformerConfig& cfg,
                                  MaskTopology topology = MaskTopology::star);

} // namespace htc
