#include "htc/encoders.hpp"

namespace htc {

Tensor patchify(const Tensor& image, int patch_size) {
    HTC_CHECK(image.shape.size() == 3 && image.shape[2] == 1, shape,
              "patchify: expected [H x W x 1] image");
    const int h = image.shape[0], w = image.shape[1];
    HTC_CHECK(patch_size > 0 && h % patch_size == 0 && w % patch_size == 0, invalid_argument,
              "patchify: image dims not divisible by patch size");
    const int gh = h / patch_size, gw = w / patch_size;
    const int pd = patch_size * patch_size;
    Tensor out = Tensor::zeros({gh * gw, pd});
    float* po = out.data->data();
    const float* pi = image.ptr();
    for (int py = 0; py < gh; ++py)
        for (int px = 0; px < gw; ++px) {
            float* row = po + static_cast<size_t>(py * gw + px) * pd;
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x)
                    row[y * patch_size + x] =
                        pi[static_cast<size_t>(py * patch_size + y) * w + (px * patch_size + x)];
        }
    return out;
}

Tensor rot180(const Tensor& image) {
    HTC_CHECK(image.shape.size() == 3 && image.shape[2] == 1, shape, "rot180: expected [H x W x 1]");
    const int64_t n = image.numel();
    Tensor out = Tensor::zeros(image.shape);
    for (int64_t i = 0; i < n; ++i) (*out.data)[static_cast<size_t>(i)] = image.at(n - 1 - i);
    return out;
}

Tensor encode_continuous(const Tensor& patches, const Tensor& embed, const Tensor& proj,
                         const Tensor& proj_bias, Tape* tape) {
    HTC_CHECK(patches.shape.size() == 2 && patches.shape[1] == embed.shape[0], shape,
              "encode_continuous: patch dim does not match featurizer");
    Tensor e = matmul(patches, embed, tape);
    const int d_enc = embed.shape[1];
    // frozen, non-affine normalization
    Tensor ones = Tensor::full({d_enc}, 1.0f);
    Tensor zeros = Tensor::zeros({d_enc});
    e = layer_norm(e, ones, zeros, 1e-5f, tape);
    return add_rowvec(matmul(e, proj, tape), proj_bias, tape);
}

Tensor encode_discrete(const Tensor& q_rows, const std::vector<Tensor>& weights,
                       const std::vector<Tensor>& biases, int n_d, int d_model, Tape* tape) {
    HTC_CHECK(!weights.empty() && weights.size() == biases.size(), invalid_argument,
              "encode_discrete: empty projector");
    HTC_CHECK(q_rows.shape.size() == 2 && q_rows.shape[1] == weights.front().shape[0], shape,
              "encode_discrete: |q| does not match W1");
    const int batch = q_rows.shape[0];
    Tensor h = q_rows;
    for (size_t i = 0; i < weights.size(); ++i) {
        h = add_rowvec(matmul(h, weights[i], tape), biases[i], tape);
        if (weights.size() >= 2) h = gelu(h, tape);
    }
    HTC_CHECK(h.shape[1] == n_d * d_model, shape, "encode_discrete: projector output size mismatch");
    return reshape(h, {batch * n_d, d_model}, tape);
}

} // namespace htc
