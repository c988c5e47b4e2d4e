#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "htc/common.hpp"
#include "htc/rng.hpp"

namespace htc {

// Dense row-major f32 tensor. Values are immutable once built; ops return
// fresh tensors. `node` links the tensor into a Tape when gradients are
// being recorded (-1 = untracked).
struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<float>> data;
    int node = -1;

    Tensor() : data(std::make_shared<std::vector<float>>()) {}
    Tensor(std::vector<int> shp, std::vector<float> values);

    static Tensor zeros(std::vector<int> shp);
    static Tensor full(std::vector<int> shp, float value);
    static Tensor scalar(float value) { return Tensor({1}, {value}); }
    static Tensor randn(std::vector<int> shp, Rng& rng, float scale = 1.0f);

    int64_t numel() const;
    int rows() const;    // first extent (rank >= 1)
    int cols() const;    // trailing extent product
    bool is_scalar() const { return numel() == 1; }
    float item() const;
    bool tracked() const { return node >= 0; }

    const float* ptr() const { return data->data(); }
    float at(int64_t i) const { return (*data)[static_cast<size_t>(i)]; }
    float at2(int r, int c) const { return (*data)[static_cast<size_t>(r) * cols() + c]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    std::string shape_str() const;

    bool all_finite() const;
    bool has_nan() const;
};

int64_t shape_numel(const std::vector<int>& shape);

// Reverse-mode tape. Single-threaded; one tape per forward pass. Nodes are
// appended in execution order, so parents always precede children.
class Tape {
public:
    // Accumulates grad contributions during the backward sweep.
    struct GradSink {
        std::vector<std::vector<float>>& slots;
        void add(int node, const std::vector<int>& shape, const float* g, int64_t n);
    };
    using BackwardFn = std::function<void(const std::vector<float>& grad_out, GradSink& sink)>;

    int record(std::vector<int> parents, std::vector<int> shape, BackwardFn backward);
    Tensor leaf(const Tensor& value);

    size_t size() const { return parents_.size(); }
    void clear();

    // Gradients for every tracked node reachable from `loss`, indexed by
    // node id (empty vector = no gradient). Deterministic: single reverse
    // sweep over the recording order, each node visited exactly once.
    std::vector<Tensor> backward(const Tensor& loss);

private:
    std::vector<std::vector<int>> parents_;
    std::vector<BackwardFn> backward_;
    std::vector<std::vector<int>> shapes_;
    friend class TapeIntrospect;
};

// Test hook: exposes recorded topology for invariant checks.
class TapeIntrospect {
public:
    explicit TapeIntrospect(const Tape& t) : tape_(t) {}
    const std::vector<std::vector<int>>& parents() const { return tape_.parents_; }

private:
    const Tape& tape_;
};

} // namespace htc
