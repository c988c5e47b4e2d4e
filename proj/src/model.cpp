#include "htc/model.hpp"

#include <algorithm>
#include <cmath>

namespace htc {

int ParamSet::add(const std::string& name, Tensor t) {
    HTC_CHECK(find(name) < 0, internal, "duplicate param name " + name);
    entries.push_back({name, std::move(t)});
    return static_cast<int>(entries.size()) - 1;
}

int ParamSet::find(const std::string& name) const {
    for (size_t i = 0; i < entries.size(); ++i)
        if (entries[i].name == name) return static_cast<int>(i);
    return -1;
}

int64_t ParamSet::total_elems() const {
    int64_t n = 0;
    for (const auto& e : entries) n += e.value.numel();
    return n;
}

void ModelSpec::validate() const {
    tf.validate();
    layout.validate();
    HTC_CHECK(image_size > 0 && patch_size > 0 && image_size % patch_size == 0, config,
              "model: image_size must be divisible by patch_size");
    HTC_CHECK(quant_downsample > 0 && image_size % quant_downsample == 0, config,
              "model: image_size must be divisible by quant_downsample");
    HTC_CHECK(layout.n_v <= n_patches_full(), config,
              "model: layout.n_v exceeds available patches (" + std::to_string(n_patches_full()) + ")");
    HTC_CHECK(d_enc >= 1 && h_d >= 1, config, "model: bad encoder dims");
    HTC_CHECK(proj_depth >= 1 && proj_depth <= 3, config, "model: proj_depth must be 1..3");
    HTC_CHECK(max_text_len >= layout.n_w, config, "model: max_text_len below layout.n_w");
    HTC_CHECK(quant_groups >= 1 && quant_entries >= 1 && quant_group_dim >= 1, config,
              "model: bad quantizer dims");
}

HtcModel HtcModel::init(const ModelSpec& spec, Codebook codebook, uint64_t seed) {
    spec.validate();
    if (spec.layout.n_d > 0) {
        HTC_CHECK(!codebook.empty(), invalid_argument, "model: layout has anchors but codebook is empty");
        HTC_CHECK(codebook.groups == spec.quant_groups && codebook.entries == spec.quant_entries &&
                      codebook.group_dim == spec.quant_group_dim,
                  config, "model: codebook dims disagree with spec");
        HTC_CHECK(codebook.frozen, invalid_argument, "model: codebook must be frozen");
    }

    HtcModel m;
    m.spec = spec;
    m.codebook = std::move(codebook);

    Rng rng(seed);
    const int d = spec.tf.d_model;
    // fan-in scaling; a flat small init starves cross-token signal at this width
    auto mat = [&](std::vector<int> shp) {
        const float sd = 1.0f / std::sqrt(static_cast<float>(shp[0]));
        return Tensor::randn(std::move(shp), rng, sd);
    };
    auto emb = [&](std::vector<int> shp) { return Tensor::randn(std::move(shp), rng, 0.1f); };

    const int patch_dim = spec.patch_size * spec.patch_size;
    m.enc_embed = spec.layout.n_v > 0 ? Tensor::randn({patch_dim, spec.d_enc}, rng, 1.0f / 8.0f)
                                      : Tensor();

    auto& P = m.params;
    auto& ids = m.ids_;
    if (spec.layout.n_v > 0) {
        ids.proj_v = P.add("enc.proj_v", mat({spec.d_enc, d}));
        ids.proj_vb = P.add("enc.proj_v.bias", Tensor::zeros({d}));
    }
    if (spec.layout.n_d > 0) {
        const int out = spec.layout.n_d * d;
        std::vector<std::pair<int, int>> dims;
        if (spec.proj_depth == 1) {
            dims = {{spec.q_dim(), out}};
        } else if (spec.proj_depth == 2) {
            dims = {{spec.q_dim(), spec.h_d}, {spec.h_d, out}};
        } else {
            dims = {{spec.q_dim(), spec.h_d}, {spec.h_d, spec.h_d}, {spec.h_d, out}};
        }
        for (size_t i = 0; i < dims.size(); ++i) {
            // anchors start loud: the projector doubles the fan-in scale so the
            // quantized codes are separable in the latent from step one
            ids.disc_w.push_back(P.add("disc.w" + std::to_string(i),
                                       scale(mat({dims[i].first, dims[i].second}), 2.0f)));
            ids.disc_b.push_back(
                P.add("disc.b" + std::to_string(i), Tensor::zeros({dims[i].second})));
        }
    }
    ids.voco = P.add("model.voco", emb({spec.layout.n_b, d}));
    if (spec.layout.n_d > 0 && spec.layout.fusion != Fusion::mean)
        ids.pos_anchor = P.add("model.pos_anchor", emb({spec.layout.n_d, d}));
    if (spec.layout.n_v > 0) ids.pos_patch = P.add("model.pos_patch", emb({spec.layout.n_v, d}));
    ids.pos_text = P.add("model.pos_text", emb({spec.max_text_len, d}));
    ids.tok_emb = P.add("model.tok_emb", emb({spec.tf.vocab_size, d}));

    for (int l = 0; l < spec.tf.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        LayerIds L;
        L.ln1_g = P.add(pre + "ln1.g", Tensor::full({d}, 1.0f));
        L.ln1_b = P.add(pre + "ln1.b", Tensor::zeros({d}));
        L.wq = P.add(pre + "attn.wq", mat({d, d}));
        L.bq = P.add(pre + "attn.bq", Tensor::zeros({d}));
        // no key bias: softmax is invariant to the per-row constant it adds
        L.wk = P.add(pre + "attn.wk", mat({d, d}));
        L.wv = P.add(pre + "attn.wv", mat({d, d}));
        L.bv = P.add(pre + "attn.bv", Tensor::zeros({d}));
        L.wo = P.add(pre + "attn.wo", mat({d, d}));
        L.bo = P.add(pre + "attn.bo", Tensor::zeros({d}));
        L.ln2_g = P.add(pre + "ln2.g", Tensor::full({d}, 1.0f));
        L.ln2_b = P.add(pre + "ln2.b", Tensor::zeros({d}));
        L.ff1_w = P.add(pre + "ff.w1", mat({d, spec.tf.d_ff}));
        L.ff1_b = P.add(pre + "ff.b1", Tensor::zeros({spec.tf.d_ff}));
        L.ff2_w = P.add(pre + "ff.w2", mat({spec.tf.d_ff, d}));
        L.ff2_b = P.add(pre + "ff.b2", Tensor::zeros({d}));
        ids.layers.push_back(L);
    }
    ids.lnf_g = P.add("model.ln_f.g", Tensor::full({d}, 1.0f));
    ids.lnf_b = P.add("model.ln_f.b", Tensor::zeros({d}));
    ids.head_w = P.add("model.head.w", mat({d, spec.tf.vocab_size}));
    ids.head_b = P.add("model.head.b", Tensor::zeros({spec.tf.vocab_size}));

    m.mask_ = build_mask(spec.layout, spec.topology);
    m.addmask_ = mask_to_additive(m.mask_);
    return m;
}

SampleInput HtcModel::prepare(const Tensor& image, std::vector<int> text_tokens) const {
    SampleInput s;
    s.text_tokens = std::move(text_tokens);
    const int patch_dim = spec.patch_size * spec.patch_size;
    if (spec.layout.n_v > 0) {
        Tensor all = patchify(image, spec.patch_size);
        s.patches = spec.layout.n_v == all.shape[0] ? all : slice_rows(all, 0, spec.layout.n_v);
    } else {
        s.patches = Tensor::zeros({0, patch_dim});
    }
    if (spec.layout.n_d > 0) {
        Tensor feats = extract_group_features(image, spec.quant_downsample, spec.quant_groups,
                                              spec.quant_group_dim);
        QuantizedImage qi = quantize(feats, codebook);
        s.q = reshape(qi.q, {1, spec.q_dim()});
    }
    return s;
}

std::vector<Tensor> HtcModel::bind(Tape& tape) const {
    std::vector<Tensor> bound;
    bound.reserve(params.size());
    for (const auto& e : params.entries) bound.push_back(tape.leaf(e.value));
    return bound;
}

ForwardResult HtcModel::forward_batch(const std::vector<const SampleInput*>& batch,
                                      const LayoutSpec& layout, Tape* tape,
                                      const std::vector<Tensor>* bound,
                                      const ForwardHooks* hooks) const {
    const int nb = static_cast<int>(batch.size());
    HTC_CHECK(nb >= 1, invalid_argument, "forward: empty batch");
    layout.validate();
    HTC_CHECK(layout.n_d == spec.layout.n_d && layout.n_v == spec.layout.n_v &&
                  layout.n_b == spec.layout.n_b && layout.fusion == spec.layout.fusion,
              shape, "forward: layout differs from the model beyond the text region");
    HTC_CHECK(layout.n_w <= spec.max_text_len, shape, "forward: text region exceeds max_text_len");
    const int d = spec.tf.d_model;
    const int n_d = layout.n_d, n_v = layout.n_v, n_w = layout.n_w;
    const int total = layout.total();

    const bool hook_mutates = hooks && (hooks->override_voco || hooks->zero_voco);
    if (hook_mutates) {
        HTC_CHECK(nb == 1, unsupported, "forward: voco hooks support batch == 1");
        HTC_CHECK(tape == nullptr, unsupported, "forward: voco hooks are eval-only");
    }
    if (hooks && hooks->override_voco)
        HTC_CHECK(static_cast<int>(hooks->override_voco->size()) == spec.tf.n_layers, invalid_argument,
                  "forward: override_voco needs one tensor per layer");

    auto P = [&](int id) -> const Tensor& {
        return bound ? (*bound)[static_cast<size_t>(id)] : params.value(id);
    };

    // channel encoders over the whole batch
    Tensor v_all, vd_all;
    if (n_v > 0) {
        std::vector<Tensor> ps;
        ps.reserve(static_cast<size_t>(nb));
        for (const SampleInput* s : batch) {
            HTC_CHECK(s->patches.shape[0] == n_v, shape, "forward: sample patch count mismatch");
            ps.push_back(s->patches);
        }
        v_all = encode_continuous(concat_rows(ps), enc_embed, P(ids_.proj_v), P(ids_.proj_vb), tape);
    }
    if (n_d > 0) {
        std::vector<Tensor> qs;
        qs.reserve(static_cast<size_t>(nb));
        for (const SampleInput* s : batch) {
            HTC_CHECK(s->q.numel() == spec.q_dim(), shape, "forward: sample |q| mismatch");
            qs.push_back(s->q);
        }
        std::vector<Tensor> ws, bs;
        for (size_t i = 0; i < ids_.disc_w.size(); ++i) {
            ws.push_back(P(ids_.disc_w[i]));
            bs.push_back(P(ids_.disc_b[i]));
        }
        vd_all = encode_discrete(concat_rows(qs), ws, bs, n_d, d, tape);
    }

    const bool tie_anchors = hooks && hooks->tie_anchors;
    if (tie_anchors) {
        HTC_CHECK(tape == nullptr, unsupported, "forward: tied-anchor null is eval-only");
        HTC_CHECK(n_d > 0 && n_v > 0, unsupported, "forward: tied-anchor null needs both regions");
    }

    // per-sample assembly, then stack
    std::vector<Tensor> rows;
    rows.reserve(static_cast<size_t>(nb));
    for (int b = 0; b < nb; ++b) {
        Tensor anchors = n_d > 0 ? slice_rows(vd_all, b * n_d, n_d, tape) : Tensor::zeros({0, d});
        if (n_d > 0 && layout.fusion != Fusion::mean) anchors = add(anchors, P(ids_.pos_anchor), tape);
        Tensor patches = n_v > 0 ? add(slice_rows(v_all, b * n_v, n_v, tape), P(ids_.pos_patch), tape)
                                 : Tensor::zeros({0, d});
        if (tie_anchors) {
            Rng pick(Rng::mix(hooks->tie_seed, static_cast<uint64_t>(b)));
            std::vector<int> idx;
            for (int k = 0; k < n_d; ++k)
                idx.push_back(static_cast<int>(pick.below(static_cast<uint64_t>(n_v))));
            anchors = gather_rows(patches, idx);
        }
        const auto& toks = batch[static_cast<size_t>(b)]->text_tokens;
        HTC_CHECK(static_cast<int>(toks.size()) == n_w, shape, "forward: text length mismatch");
        for (int t : toks)
            HTC_CHECK(t >= 0 && t < spec.tf.vocab_size, invalid_argument, "forward: token id out of range");
        Tensor w = n_w > 0 ? add(gather_rows(P(ids_.tok_emb), toks, tape),
                                 slice_rows(P(ids_.pos_text), 0, n_w, tape), tape)
                           : Tensor::zeros({0, d});
        rows.push_back(assemble(anchors, patches, P(ids_.voco), w, layout.fusion, tape));
    }
    Tensor h = nb == 1 ? rows[0] : concat_rows(rows, tape);

    const bool default_layout = layout.n_w == spec.layout.n_w;
    AttentionMask mask = default_layout ? mask_ : build_mask(layout, spec.topology);
    Tensor addmask = default_layout ? addmask_ : mask_to_additive(mask);

    const int vs = layout.voco_start();
    std::vector<int> voco_idx;
    for (int b = 0; b < nb; ++b)
        for (int k = 0; k < layout.n_b; ++k) voco_idx.push_back(b * total + vs + k);

    const float eps = 1e-5f;
    for (int l = 0; l < spec.tf.n_layers; ++l) {
        const auto& L = ids_.layers[static_cast<size_t>(l)];
        Tensor a_in = layer_norm(h, P(L.ln1_g), P(L.ln1_b), eps, tape);
        Tensor q = add_rowvec(matmul(a_in, P(L.wq), tape), P(L.bq), tape);
        Tensor k = matmul(a_in, P(L.wk), tape);
        Tensor v = add_rowvec(matmul(a_in, P(L.wv), tape), P(L.bv), tape);
        std::vector<float> probs;
        Tensor ctx = masked_attention(q, k, v, addmask, nb, spec.tf.n_heads, tape,
                                      hooks && hooks->attn ? &probs : nullptr);
        if (hooks && hooks->attn) hooks->attn->push_back(std::move(probs));
        h = add(h, add_rowvec(matmul(ctx, P(L.wo), tape), P(L.bo), tape), tape);

        Tensor m_in = layer_norm(h, P(L.ln2_g), P(L.ln2_b), eps, tape);
        Tensor ff = gelu(add_rowvec(matmul(m_in, P(L.ff1_w), tape), P(L.ff1_b), tape), tape);
        ff = add_rowvec(matmul(ff, P(L.ff2_w), tape), P(L.ff2_b), tape);
        h = add(h, ff, tape);

        if (hook_mutates) {
            Tensor repl = hooks->zero_voco
                              ? Tensor::zeros({layout.n_b, d})
                              : (*hooks->override_voco)[static_cast<size_t>(l)];
            HTC_CHECK(repl.shape == std::vector<int>({layout.n_b, d}), shape,
                      "forward: override_voco shape mismatch");
            Tensor head = slice_rows(h, 0, vs);
            Tensor tail = slice_rows(h, vs + layout.n_b, total - vs - layout.n_b);
            h = concat_rows({head, repl, tail});
        }
        if (hooks && hooks->record_voco) hooks->record_voco->push_back(gather_rows(h, voco_idx));
    }

    ForwardResult out;
    out.batch = nb;
    out.seq = total;
    out.z = gather_rows(h, voco_idx, tape);
    Tensor hn = layer_norm(h, P(ids_.lnf_g), P(ids_.lnf_b), eps, tape);
    out.logits = add_rowvec(matmul(hn, P(ids_.head_w), tape), P(ids_.head_b), tape);
    return out;
}

ForwardResult HtcModel::forward_single(const SampleInput& input, Tape* tape,
                                       const ForwardHooks* hooks) const {
    return forward_batch({&input}, spec.layout, tape, nullptr, hooks);
}

ForwardResult HtcModel::forward_single(const SampleInput& input, const LayoutSpec& layout,
                                       Tape* tape, const ForwardHooks* hooks) const {
    return forward_batch({&input}, layout, tape, nullptr, hooks);
}

Tensor HtcModel::continuous_tokens(const SampleInput& input) const {
    HTC_CHECK(spec.layout.n_v > 0, unsupported, "continuous_tokens: layout has no patches");
    return encode_continuous(input.patches, enc_embed, params.value(ids_.proj_v),
                             params.value(ids_.proj_vb));
}

Tensor HtcModel::discrete_tokens(const SampleInput& input) const {
    HTC_CHECK(spec.layout.n_d > 0, unsupported, "discrete_tokens: layout has no anchors");
    std::vector<Tensor> ws, bs;
    for (size_t i = 0; i < ids_.disc_w.size(); ++i) {
        ws.push_back(params.value(ids_.disc_w[i]));
        bs.push_back(params.value(ids_.disc_b[i]));
    }
    return encode_discrete(input.q, ws, bs, spec.layout.n_d, spec.tf.d_model);
}

HtcModel::GenerateResult HtcModel::generate(const SampleInput& prefix, int max_new) const {
    HTC_CHECK(max_new >= 1, invalid_argument, "generate: max_new must be >= 1");
    GenerateResult res;
    res.tokens = prefix.text_tokens;
    SampleInput cur = prefix;
    for (int step = 0; step < max_new; ++step) {
        const int n_w = static_cast<int>(res.tokens.size());
        if (n_w > spec.max_text_len) {
            res.truncated = true;
            break;
        }
        cur.text_tokens = res.tokens;
        LayoutSpec layout = spec.layout.with_text_len(n_w);
        ForwardResult fr = forward_batch({&cur}, layout);
        Tensor last = slice_rows(fr.logits, layout.total() - 1, 1);
        res.tokens.push_back(argmax_lastdim(last)[0]);
    }
    return res;
}

AttnOpCounts attention_flop_count(const LayoutSpec& layout, const TransformerConfig& cfg,
                                  MaskTopology topology) {
    cfg.validate();
    AttentionMask mask = build_mask(layout, topology);
    const uint64_t total = static_cast<uint64_t>(layout.total());
    const uint64_t d = static_cast<uint64_t>(cfg.d_model);

    AttnOpCounts c;
    c.dense_qk = total * total * d;
    c.dense_av = total * total * d;
    c.dense_total = c.dense_qk + c.dense_av;

    const int vs = layout.voco_start();
    const int ts = layout.text_start();
    for (int i = 0; i < static_cast<int>(total); ++i) {
        uint64_t row = 0;
        for (int j = 0; j < static_cast<int>(total); ++j)
            if (mask.at(i, j)) ++row;
        const uint64_t cost = 2 * row * d; // qk + av
        c.sparse_qk += row * d;
        c.sparse_av += row * d;
        if (i < vs)
            c.sparse_visual += cost;
        else if (i < ts)
            c.sparse_voco += cost;
        else
            c.sparse_text += cost;
    }
    c.sparse_total = c.sparse_qk + c.sparse_av;
    return c;
}

} // namespace htc
