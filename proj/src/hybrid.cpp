#include "htc/hybrid.hpp"

#include <limits>
#include <sstream>

namespace htc {

Fusion parse_fusion(const std::string& s) {
    if (s == "pre") return Fusion::pre;
    if (s == "post") return Fusion::post;
    if (s == "mean") return Fusion::mean;
    fail(ErrorCode::config, "unknown fusion mode '" + s + "' (pre|post|mean)");
}

MaskTopology parse_topology(const std::string& s) {
    if (s == "star") return MaskTopology::star;
    if (s == "full_visual") return MaskTopology::full_visual;
    if (s == "causal") return MaskTopology::causal;
    fail(ErrorCode::config, "unknown mask topology '" + s + "' (star|full_visual|causal)");
}

std::string to_string(Fusion f) {
    switch (f) {
        case Fusion::pre: return "pre";
        case Fusion::post: return "post";
        default: return "mean";
    }
}

std::string to_string(MaskTopology t) {
    switch (t) {
        case MaskTopology::star: return "star";
        case MaskTopology::full_visual: return "full_visual";
        default: return "causal";
    }
}

void LayoutSpec::validate() const {
    HTC_CHECK(n_d >= 0 && n_v >= 0 && n_w >= 0, config, "layout: negative region length");
    HTC_CHECK(n_b >= 1, config, "layout: n_b must be >= 1");
    if (fusion == Fusion::mean)
        HTC_CHECK(n_d >= 1 && n_v >= 1, config, "layout: mean fusion needs n_d >= 1 and n_v >= 1");
}

AttentionMask build_mask(const LayoutSpec& layout, MaskTopology topology) {
    layout.validate();
    const int total = layout.total();
    const int vl = layout.visual_len();
    const int vs = layout.voco_start();
    const int ts = layout.text_start();

    AttentionMask m;
    m.layout = layout;
    m.allow.assign(static_cast<size_t>(total) * total, 0);
    auto set = [&](int i, int j) { m.allow[static_cast<size_t>(i) * total + j] = 1; };

    for (int i = 0; i < total; ++i) {
        set(i, i);
        if (topology == MaskTopology::causal) {
            for (int j = 0; j < i; ++j) set(i, j);
            continue;
        }
        if (i < vl) {
            // visual row: self only under star; causal within the visual
            // block under full_visual
            if (topology == MaskTopology::full_visual)
                for (int j = 0; j < i; ++j) set(i, j);
        } else if (i < ts) {
            // bottleneck row: every visual position plus earlier bottlenecks
            for (int j = 0; j < vl; ++j) set(i, j);
            for (int j = vs; j < i; ++j) set(i, j);
        } else {
            // text row: every bottleneck position plus earlier text
            for (int j = vs; j < ts; ++j) set(i, j);
            for (int j = ts; j < i; ++j) set(i, j);
        }
    }
    return m;
}

Tensor mask_to_additive(const AttentionMask& mask) {
    const int total = mask.total();
    Tensor t = Tensor::zeros({total, total});
    float* p = t.data->data();
    constexpr float neg_inf = -std::numeric_limits<float>::infinity();
    for (int i = 0; i < total; ++i)
        for (int j = 0; j < total; ++j)
            if (!mask.at(i, j)) p[static_cast<size_t>(i) * total + j] = neg_inf;
    return t;
}

std::vector<uint8_t> reachability(const AttentionMask& mask, int depth, bool exclude_voco) {
    HTC_CHECK(depth >= 0, invalid_argument, "reachability: negative depth");
    const int total = mask.total();
    const int vs = mask.layout.voco_start();
    const int ts = mask.layout.text_start();
    auto is_voco = [&](int p) { return p >= vs && p < ts; };

    // edge p -> r iff r may attend to p
    std::vector<uint8_t> adj(static_cast<size_t>(total) * total, 0);
    for (int r = 0; r < total; ++r)
        for (int p = 0; p < total; ++p) {
            if (exclude_voco && (is_voco(p) || is_voco(r))) continue;
            if (mask.at(r, p)) adj[static_cast<size_t>(p) * total + r] = 1;
        }

    // identity = zero layers
    std::vector<uint8_t> reach(static_cast<size_t>(total) * total, 0);
    for (int p = 0; p < total; ++p) reach[static_cast<size_t>(p) * total + p] = 1;

    std::vector<uint8_t> next(reach.size());
    for (int step = 0; step < depth; ++step) {
        std::fill(next.begin(), next.end(), 0);
        for (int p = 0; p < total; ++p)
            for (int mid = 0; mid < total; ++mid) {
                if (!reach[static_cast<size_t>(p) * total + mid]) continue;
                for (int r = 0; r < total; ++r)
                    if (adj[static_cast<size_t>(mid) * total + r])
                        next[static_cast<size_t>(p) * total + r] = 1;
            }
        reach.swap(next);
    }
    return reach;
}

Tensor assemble(const Tensor& v_d, const Tensor& V, const Tensor& voco_emb, const Tensor& W,
                Fusion fusion, Tape* tape) {
    const int d = voco_emb.shape.size() == 2 ? voco_emb.shape[1] : -1;
    HTC_CHECK(d > 0, shape, "assemble: voco_emb must be rank-2");
    auto check_d = [&](const Tensor& t, const char* name) {
        HTC_CHECK(t.shape.size() == 2 && t.shape[1] == d, shape,
                  std::string("assemble: ") + name + " width mismatch");
    };
    check_d(v_d, "v_d");
    check_d(V, "V");
    check_d(W, "W");

    switch (fusion) {
        case Fusion::pre:
            return concat_rows({v_d, V, voco_emb, W}, tape);
        case Fusion::post:
            return concat_rows({V, v_d, voco_emb, W}, tape);
        case Fusion::mean: {
            HTC_CHECK(v_d.shape[0] >= 1, shape, "assemble: mean fusion needs anchors");
            Tensor folded = add_rowvec(V, mean_rows(v_d, tape), tape);
            return concat_rows({folded, voco_emb, W}, tape);
        }
    }
    fail(ErrorCode::internal, "assemble: bad fusion");
}

std::string mask_to_csv(const AttentionMask& mask) {
    std::ostringstream os;
    const int total = mask.total();
    for (int i = 0; i < total; ++i) {
        for (int j = 0; j < total; ++j) {
            if (j) os << ",";
            os << (mask.at(i, j) ? 1 : 0);
        }
        os << "\n";
    }
    return os.str();
}

} // namespace htc
