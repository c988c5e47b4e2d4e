#pragma once

#include <vector>

#include "htc/ops.hpp"
#include "htc/tensor.hpp"

namespace htc {

// [H x W x 1] image -> [n_patches x patch_size*patch_size] raw pixel rows,
// patches in row-major grid order.
Tensor patchify(const Tensor& image, int patch_size);

Tensor rot180(const Tensor& image);

// Frozen featurizer (fixed random linear map + layer norm) followed by the
// trainable linear projector. `patches` may stack several images; rows are
// independent.
Tensor encode_continuous(const Tensor& patches, const Tensor& embed, const Tensor& proj,
                         const Tensor& proj_bias, Tape* tape = nullptr);

// MLP projector for the quantized feature vector. One GELU per layer for
// depth >= 2; a depth-1 projector is a plain linear map. q_rows may stack a
// batch; output is [batch*n_d x d_model].
Tensor encode_discrete(const Tensor& q_rows, const std::vector<Tensor>& weights,
                       const std::vector<Tensor>& biases, int n_d, int d_model,
                       Tape* tape = nullptr);

} // namespace htc
