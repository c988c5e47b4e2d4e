#pragma once

#include <cstdint>
#include <vector>

#include "htc/tensor.hpp"

namespace htc {

// Per-group codebook of a multi-group quantizer. Immutable once frozen;
// the main training loop never updates it.
struct Codebook {
    int groups = 0;
    int entries = 0;
    int group_dim = 0;
    Tensor vectors; // [groups, entries, group_dim]
    bool frozen = false;

    bool empty() const { return groups == 0; }
    const float* codeword(int g, int k) const {
        return vectors.ptr() + (static_cast<size_t>(g) * entries + k) * group_dim;
    }
    // smallest pairwise codeword distance within any group
    float min_pairwise_l2() const;
};

struct QuantizedImage {
    std::vector<int> indices; // [positions x groups], position-major
    Tensor q;                 // flat [positions * groups * group_dim]
    float recon_error = 0.0f; // mean squared residual per feature element
};

// Fixed deterministic featurizer: pooled per-patch statistics, split into
// `groups` blocks of `group_dim` values. Every statistic is invariant to a
// 180-degree rotation of its patch. Output [positions x groups x group_dim]
// with positions in row-major grid order.
Tensor extract_group_features(const Tensor& image, int downsample, int groups, int group_dim);

// Per-group k-means (k-means++ init, fixed Lloyd iteration count). Empty
// clusters are reseeded at the point farthest from its centroid. A warm
// start seeds the first entries from an existing codebook, which makes the
// quantization error monotone in the codebook size for nested fits.
Codebook fit_codebook(const std::vector<Tensor>& features, int entries, int iters, uint64_t seed,
                      const Codebook* warm_start = nullptr,
                      std::vector<double>* iter_errors = nullptr);

QuantizedImage quantize(const Tensor& features, const Codebook& cb);

} // namespace htc
