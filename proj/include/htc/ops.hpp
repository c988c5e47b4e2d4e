#pragma once

#include <vector>

#include "htc/tensor.hpp"

namespace htc {

// All ops compute eagerly and, when `tape` is non-null and any input is
// tracked, record a backward closure. Untracked inputs receive no gradient.

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor add_rowvec(const Tensor& x, const Tensor& v, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& x, float c, Tape* tape = nullptr);
Tensor sum_all(const Tensor& x, Tape* tape = nullptr);
Tensor mean_all(const Tensor& x, Tape* tape = nullptr);
Tensor mean_rows(const Tensor& x, Tape* tape = nullptr);
Tensor sumsq(const Tensor& x, Tape* tape = nullptr);
Tensor gelu(const Tensor& x, Tape* tape = nullptr);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps,
                  Tape* tape = nullptr);

// Softmax over the last dimension. Entries at -inf come out exactly 0. A row
// whose entries are all -inf yields zeros; its index is appended to
// `zeroed_rows` when given, otherwise such a row is an error.
Tensor softmax(const Tensor& x, Tape* tape = nullptr, std::vector<int>* zeroed_rows = nullptr);

Tensor cross_entropy(const Tensor& logits, int target, Tape* tape = nullptr);
// Mean cross-entropy over the listed rows of a [n x vocab] logits matrix.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& rows,
                          const std::vector<int>& targets, Tape* tape = nullptr);

Tensor concat_rows(const std::vector<Tensor>& parts, Tape* tape = nullptr);
Tensor slice_rows(const Tensor& x, int start, int len, Tape* tape = nullptr);
Tensor slice_cols(const Tensor& x, int start, int len, Tape* tape = nullptr);
Tensor gather_rows(const Tensor& x, const std::vector<int>& indices, Tape* tape = nullptr);
Tensor reshape(const Tensor& x, std::vector<int> new_shape, Tape* tape = nullptr);
Tensor transpose2d(const Tensor& x, Tape* tape = nullptr);

// Fused multi-head scaled-dot-product attention over a batch of equal-length
// sequences. q/k/v are [batch*seq_len x d_model]; the additive mask is
// [seq_len x seq_len] and shared across the batch. Returns the context
// [batch*seq_len x d_model]; post-softmax probabilities (batch x heads x
// seq_len x seq_len) are written to `probs_out` when given.
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const Tensor& addmask, int batch, int heads, Tape* tape = nullptr,
                        std::vector<float>* probs_out = nullptr);

std::vector<int> argmax_lastdim(const Tensor& x);

namespace detail {
// Raw GEMM kernels, row-major. C must be zero-initialized.
void mm_nn(const float* a, const float* b, float* c, int m, int k, int n);
void mm_nt(const float* a, const float* b, float* c, int m, int k, int n); // C = A * B^T, B is [n x k]
void mm_tn(const float* a, const float* b, float* c, int m, int k, int n); // C = A^T * B, A is [k x m]
} // namespace detail

} // namespace htc
