#include "htc/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace htc {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int e : shape) {
        HTC_CHECK(e >= 0, shape, "negative extent");
        n *= e;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shp, std::vector<float> values)
    : shape(std::move(shp)), data(std::make_shared<std::vector<float>>(std::move(values))) {
    HTC_CHECK(shape_numel(shape) == static_cast<int64_t>(data->size()), shape,
              "data length does not match shape " + shape_str());
}

Tensor Tensor::zeros(std::vector<int> shp) {
    int64_t n = shape_numel(shp);
    return Tensor(std::move(shp), std::vector<float>(static_cast<size_t>(n), 0.0f));
}

Tensor Tensor::full(std::vector<int> shp, float value) {
    int64_t n = shape_numel(shp);
    return Tensor(std::move(shp), std::vector<float>(static_cast<size_t>(n), value));
}

Tensor Tensor::randn(std::vector<int> shp, Rng& rng, float scale) {
    int64_t n = shape_numel(shp);
    std::vector<float> v(static_cast<size_t>(n));
    for (auto& x : v) x = static_cast<float>(rng.normal()) * scale;
    return Tensor(std::move(shp), std::move(v));
}

int64_t Tensor::numel() const {
    return static_cast<int64_t>(data->size());
}

int Tensor::rows() const {
    HTC_CHECK(!shape.empty(), shape, "rank-0 tensor has no rows");
    return shape[0];
}

int Tensor::cols() const {
    HTC_CHECK(!shape.empty(), shape, "rank-0 tensor has no cols");
    int64_t c = 1;
    for (size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return static_cast<int>(c);
}

float Tensor::item() const {
    HTC_CHECK(is_scalar(), shape, "item() on non-scalar tensor " + shape_str());
    return (*data)[0];
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

bool Tensor::all_finite() const {
    for (float v : *data)
        if (!std::isfinite(v)) return false;
    return true;
}

bool Tensor::has_nan() const {
    for (float v : *data)
        if (std::isnan(v)) return true;
    return false;
}

void Tape::GradSink::add(int node, const std::vector<int>& shape, const float* g, int64_t n) {
    auto& slot = slots[static_cast<size_t>(node)];
    if (slot.empty()) slot.assign(static_cast<size_t>(n), 0.0f);
    HTC_CHECK(static_cast<int64_t>(slot.size()) == n, shape, "gradient shape mismatch");
    (void)shape;
    float* dst = slot.data();
    for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

int Tape::record(std::vector<int> parents, std::vector<int> shape, BackwardFn backward) {
    int id = static_cast<int>(parents_.size());
    for (int p : parents) HTC_CHECK(p >= 0 && p < id, internal, "tape parent out of order");
    parents_.push_back(std::move(parents));
    backward_.push_back(std::move(backward));
    shapes_.push_back(std::move(shape));
    return id;
}

Tensor Tape::leaf(const Tensor& value) {
    Tensor t = value;
    t.node = record({}, value.shape, nullptr);
    return t;
}

void Tape::clear() {
    parents_.clear();
    backward_.clear();
    shapes_.clear();
}

std::vector<Tensor> Tape::backward(const Tensor& loss) {
    HTC_CHECK(loss.is_scalar(), shape, "backward() requires a scalar loss");
    HTC_CHECK(loss.tracked(), invalid_argument, "backward() requires a grad-enabled loss");
    HTC_CHECK(loss.node < static_cast<int>(parents_.size()), internal, "loss not on this tape");

    std::vector<std::vector<float>> grads(parents_.size());
    grads[static_cast<size_t>(loss.node)] = {1.0f};
    GradSink sink{grads};

    for (int id = loss.node; id >= 0; --id) {
        if (grads[static_cast<size_t>(id)].empty()) continue;
        if (backward_[static_cast<size_t>(id)])
            backward_[static_cast<size_t>(id)](grads[static_cast<size_t>(id)], sink);
    }

    std::vector<Tensor> out(parents_.size());
    for (size_t id = 0; id < grads.size(); ++id) {
        if (!grads[id].empty()) out[id] = Tensor(shapes_[id], std::move(grads[id]));
    }
    return out;
}

} // namespace htc
