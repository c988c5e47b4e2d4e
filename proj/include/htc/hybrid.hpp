#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "htc/ops.hpp"
#include "htc/tensor.hpp"

namespace htc {

enum class Fusion { pre, post, mean };

// star: visual tokens attend only to themselves, text attends only to the
//       bottleneck tokens (and text); the bottleneck attends to everything
//       before it.
// full_visual: like star, but visual tokens attend causally to each other.
// causal: plain lower-triangular mask (the uncompressed reference).
enum class MaskTopology { star, full_visual, causal };

Fusion parse_fusion(const std::string& s);
MaskTopology parse_topology(const std::string& s);
std::string to_string(Fusion f);
std::string to_string(MaskTopology t);

// Token layout [anchors | patches | bottleneck | text]. Mean fusion folds
// the anchors into the patch rows, so they occupy no positions of their own.
struct LayoutSpec {
    int n_d = 4;
    int n_v = 16;
    int n_b = 1;
    int n_w = 2;
    Fusion fusion = Fusion::pre;

    int visual_len() const { return fusion == Fusion::mean ? n_v : n_d + n_v; }
    int voco_start() const { return visual_len(); }
    int text_start() const { return visual_len() + n_b; }
    int total() const { return visual_len() + n_b + n_w; }

    LayoutSpec with_text_len(int n) const {
        LayoutSpec l = *this;
        l.n_w = n;
        return l;
    }

    void validate() const;
};

struct AttentionMask {
    LayoutSpec layout;
    std::vector<uint8_t> allow; // total x total, row = attending position

    int total() const { return layout.total(); }
    bool at(int i, int j) const {
        return allow[static_cast<size_t>(i) * total() + j] != 0;
    }
};

AttentionMask build_mask(const LayoutSpec& layout, MaskTopology topology = MaskTopology::star);

// allow -> 0, block -> -inf
Tensor mask_to_additive(const AttentionMask& mask);

// influence[p * total + r] != 0 iff position p can influence position r
// through `depth` stacked attention layers (residual self-loops included via
// the always-allowed diagonal). With exclude_voco, bottleneck positions are
// removed from the graph entirely.
std::vector<uint8_t> reachability(const AttentionMask& mask, int depth, bool exclude_voco = false);

// Rows ordered per fusion mode: pre [v_d|V|voco|W], post [V|v_d|voco|W],
// mean [V + mean(v_d) | voco | W].
Tensor assemble(const Tensor& v_d, const Tensor& V, const Tensor& voco_emb, const Tensor& W,
                Fusion fusion, Tape* tape = nullptr);

std::string mask_to_csv(const AttentionMask& mask);

} // namespace htc
