#include "htc/ops.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace htc {

namespace detail {

// a[m x k], b[k x n], c[m x n] = a * b
void mm_nn(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* ai = a + static_cast<size_t>(i) * k;
        float* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const float av = ai[p];
            const float* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// a[m x k], b[n x k], c[m x n] = a * b^T
void mm_nt(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* ai = a + static_cast<size_t>(i) * k;
        float* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const float* bj = b + static_cast<size_t>(j) * k;
            float acc = 0.0f;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    }
}

// a[k x m], b[k x n], c[m x n] = a^T * b
void mm_tn(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const float* ap = a + static_cast<size_t>(p) * m;
        const float* bp = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const float av = ap[i];
            float* ci = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

} // namespace detail

namespace {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

void check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) fail(ErrorCode::numeric, std::string(op) + ": non-finite result");
}

void check_no_nan(const Tensor& t, const char* op) {
    if (t.has_nan()) fail(ErrorCode::numeric, std::string(op) + ": NaN result");
}

bool want_grad(Tape* tape, std::initializer_list<const Tensor*> ins) {
    if (!tape) return false;
    for (const Tensor* t : ins)
        if (t->tracked()) return true;
    return false;
}

std::vector<int> parent_ids(std::initializer_list<const Tensor*> ins) {
    std::vector<int> p;
    for (const Tensor* t : ins)
        if (t->tracked()) p.push_back(t->node);
    return p;
}

// rows x cols view of an arbitrary-rank tensor, last dim = cols
void as2d(const Tensor& t, int& rows, int& cols) {
    HTC_CHECK(!t.shape.empty(), shape, "rank-0 tensor");
    cols = t.shape.back();
    rows = cols == 0 ? 0 : static_cast<int>(t.numel() / cols);
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
    HTC_CHECK(a.shape.size() == 2 && b.shape.size() == 2, shape, "matmul: rank-2 inputs required");
    const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    HTC_CHECK(b.shape[0] == k, shape,
              "matmul: inner dims mismatch " + a.shape_str() + " x " + b.shape_str());
    Tensor out = Tensor::zeros({m, n});
    detail::mm_nn(a.ptr(), b.ptr(), out.data->data(), m, k, n);
    check_finite(out, "matmul");
    if (want_grad(tape, {&a, &b})) {
        auto ad = a.data;
        auto bd = b.data;
        const int an = a.node, bn = b.node;
        out.node = tape->record(
            parent_ids({&a, &b}), out.shape,
            [ad, bd, an, bn, m, k, n](const std::vector<float>& g, Tape::GradSink& sink) {
                // explicit transposes keep both products on the fast kernel
                if (an >= 0) {
                    std::vector<float> bt(static_cast<size_t>(k) * n);
                    for (int p = 0; p < k; ++p)
                        for (int j = 0; j < n; ++j)
                            bt[static_cast<size_t>(j) * k + p] = (*bd)[static_cast<size_t>(p) * n + j];
                    std::vector<float> da(static_cast<size_t>(m) * k, 0.0f);
                    detail::mm_nn(g.data(), bt.data(), da.data(), m, n, k);
                    sink.add(an, {m, k}, da.data(), static_cast<int64_t>(m) * k);
                }
                if (bn >= 0) {
                    std::vector<float> at(static_cast<size_t>(m) * k);
                    for (int i = 0; i < m; ++i)
                        for (int p = 0; p < k; ++p)
                            at[static_cast<size_t>(p) * m + i] = (*ad)[static_cast<size_t>(i) * k + p];
                    std::vector<float> db(static_cast<size_t>(k) * n, 0.0f);
                    detail::mm_nn(at.data(), g.data(), db.data(), k, m, n);
                    sink.add(bn, {k, n}, db.data(), static_cast<int64_t>(k) * n);
                }
            });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    HTC_CHECK(a.same_shape(b), shape, "add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor out = Tensor::zeros(a.shape);
    const float* pa = a.ptr();
    const float* pb = b.ptr();
    float* po = out.data->data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    check_no_nan(out, "add");
    if (want_grad(tape, {&a, &b})) {
        const int an = a.node, bn = b.node;
        auto shape = a.shape;
        out.node = tape->record(parent_ids({&a, &b}), out.shape,
                                [an, bn, shape, n](const std::vector<float>& g, Tape::GradSink& sink) {
                                    if (an >= 0) sink.add(an, shape, g.data(), n);
                                    if (bn >= 0) sink.add(bn, shape, g.data(), n);
                                });
    }
    return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v, Tape* tape) {
    int rows, cols;
    as2d(x, rows, cols);
    HTC_CHECK(static_cast<int64_t>(cols) == v.numel(), shape,
              "add_rowvec: " + x.shape_str() + " vs " + v.shape_str());
    Tensor out = Tensor::zeros(x.shape);
    const float* px = x.ptr();
    const float* pv = v.ptr();
    float* po = out.data->data();
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < cols; ++j)
            po[static_cast<size_t>(r) * cols + j] = px[static_cast<size_t>(r) * cols + j] + pv[j];
    check_no_nan(out, "add_rowvec");
    if (want_grad(tape, {&x, &v})) {
        const int xn = x.node, vn = v.node;
        auto xshape = x.shape;
        auto vshape = v.shape;
        out.node = tape->record(
            parent_ids({&x, &v}), out.shape,
            [xn, vn, xshape, vshape, rows, cols](const std::vector<float>& g, Tape::GradSink& sink) {
                if (xn >= 0) sink.add(xn, xshape, g.data(), static_cast<int64_t>(rows) * cols);
                if (vn >= 0) {
                    std::vector<float> dv(static_cast<size_t>(cols), 0.0f);
                    for (int r = 0; r < rows; ++r)
                        for (int j = 0; j < cols; ++j) dv[j] += g[static_cast<size_t>(r) * cols + j];
                    sink.add(vn, vshape, dv.data(), cols);
                }
            });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
    HTC_CHECK(a.same_shape(b), shape, "mul: shape mismatch");
    Tensor out = Tensor::zeros(a.shape);
    const float* pa = a.ptr();
    const float* pb = b.ptr();
    float* po = out.data->data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    check_no_nan(out, "mul");
    if (want_grad(tape, {&a, &b})) {
        auto ad = a.data;
        auto bd = b.data;
        const int an = a.node, bn = b.node;
        auto shape = a.shape;
        out.node = tape->record(parent_ids({&a, &b}), out.shape,
                                [ad, bd, an, bn, shape, n](const std::vector<float>& g, Tape::GradSink& sink) {
                                    std::vector<float> d(static_cast<size_t>(n));
                                    if (an >= 0) {
                                        for (int64_t i = 0; i < n; ++i) d[i] = g[i] * (*bd)[i];
                                        sink.add(an, shape, d.data(), n);
                                    }
                                    if (bn >= 0) {
                                        for (int64_t i = 0; i < n; ++i) d[i] = g[i] * (*ad)[i];
                                        sink.add(bn, shape, d.data(), n);
                                    }
                                });
    }
    return out;
}

Tensor scale(const Tensor& x, float c, Tape* tape) {
    Tensor out = Tensor::zeros(x.shape);
    const float* px = x.ptr();
    float* po = out.data->data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = px[i] * c;
    check_no_nan(out, "scale");
    if (want_grad(tape, {&x})) {
        const int xn = x.node;
        auto shape = x.shape;
        out.node = tape->record({xn}, out.shape,
                                [xn, c, shape, n](const std::vector<float>& g, Tape::GradSink& sink) {
                                    std::vector<float> d(static_cast<size_t>(n));
                                    for (int64_t i = 0; i < n; ++i) d[i] = g[i] * c;
                                    sink.add(xn, shape, d.data(), n);
                                });
    }
    return out;
}

Tensor sum_all(const Tensor& x, Tape* tape) {
    double acc = 0.0;
    for (float v : *x.data) acc += v;
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    check_finite(out, "sum_all");
    if (want_grad(tape, {&x})) {
        const int xn = x.node;
        auto shape = x.shape;
        const int64_t n = x.numel();
        out.node = tape->record({xn}, out.shape,
                                [xn, shape, n](const std::vector<float>& g, Tape::GradSink& sink) {
                                    std::vector<float> d(static_cast<size_t>(n), g[0]);
                                    sink.add(xn, shape, d.data(), n);
                                });
    }
    return out;
}

Tensor mean_all(const Tensor& x, Tape* tape) {
    const int64_t n = x.numel();
    HTC_CHECK(n > 0, shape, "mean_all: empty tensor");
    double acc = 0.0;
    for (float v : *x.data) acc += v;
    Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
    check_finite(out, "mean_all");
    if (want_grad(tape, {&x})) {
        const int xn = x.node;
        auto shape = x.shape;
        out.node = tape->record({xn}, out.shape,
                                [xn, shape, n](const std::vector<float>& g, Tape::GradSink& sink) {
                                    std::vector<float> d(static_cast<size_t>(n), g[0] / static_cast<float>(n));
                                    sink.add(xn, shape, d.data(), n);
                                });
    }
    return out;
}

Tensor mean_rows(const Tensor& x, Tape* tape) {
    int rows, cols;
    as2d(x, rows, cols);
    HTC_CHECK(rows > 0, shape, "mean_rows: no rows");
    Tensor out = Tensor::zeros({cols});
    const float* px = x.ptr();
    float* po = out.data->data();
    for (int j = 0; j < cols; ++j) {
        double acc = 0.0;
        for (int r = 0; r < rows; ++r) acc += px[static_cast<size_t>(r) * cols + j];
        po[j] = static_cast<float>(acc / rows);
    }
    check_finite(out, "mean_rows");
    if (want_grad(tape, {&x})) {
        const int xn = x.node;
        auto shape = x.shape;
        out.node = tape->record({xn}, out.shape,
                                [xn, shape, rows, cols](const std::vector<float>& g, Tape::GradSink& sink) {
                                    std::vector<float> d(static_cast<size_t>(rows) * cols);
                                    for (int r = 0; r < rows; ++r)
                                        for (int j = 0; j < cols; ++j)
                                            d[static_cast<size_t>(r) * cols + j] = g[j] / static_cast<float>(rows);
                                    sink.add(xn, shape, d.data(), static_cast<int64_t>(rows) * cols);
                                });
    }
    return out;
}

Tensor sumsq(const Tensor& x, Tape* tape) {
    double acc = 0.0;
    for (float v : *x.data) acc += static_cast<double>(v) * v;
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    check_finite(out, "sumsq");
    if (want_grad(tape, {&x})) {
        const int xn = x.node;
        auto xd = x.data;
        auto shape = x.shape;
        const int64_t n = x.numel();
        out.node = tape->record({xn}, out.shape,
                                [xn, xd, shape, n](const std::vector<float>& g, Tape::GradSink& sink) {
                                    std::vector<float> d(static_cast<size_t>(n));
                                    for (int64_t i = 0; i < n; ++i) d[i] = 2.0f * (*xd)[i] * g[0];
                                    sink.add(xn, shape, d.data(), n);
                                });
    }
    return out;
}

Tensor gelu(const Tensor& x, Tape* tape) {
    // Exact Gaussian-CDF form, x * Phi(x), with Phi via erf (no tanh
    // approximation).
    Tensor out = Tensor::zeros(x.shape);
    const float* px = x.ptr();
    float* po = out.data->data();
    const int64_t n = x.numel();
    constexpr float inv_sqrt2 = 0.70710678f;
    const bool grad = want_grad(tape, {&x});
    auto phis = grad ? std::make_shared<std::vector<float>>(static_cast<size_t>(n))
                     : std::shared_ptr<std::vector<float>>();
    for (int64_t i = 0; i < n; ++i) {
        const float xv = px[i];
        const float phi = 0.5f * (1.0f + std::erff(xv * inv_sqrt2));
        if (grad) (*phis)[static_cast<size_t>(i)] = phi;
        po[i] = xv * phi;
    }
    check_finite(out, "gelu");
    if (grad) {
        const int xn = x.node;
        auto xd = x.data;
        auto shape = x.shape;
        out.node = tape->record({xn}, out.shape,
                                [xn, xd, phis, shape, n](const std::vector<float>& g, Tape::GradSink& sink) {
                                    constexpr float inv_sqrt2pi = 0.39894228f;
                                    std::vector<float> d(static_cast<size_t>(n));
                                    for (int64_t i = 0; i < n; ++i) {
                                        const float xv = (*xd)[i];
                                        const float pdf = inv_sqrt2pi * std::exp(-0.5f * xv * xv);
                                        d[i] = ((*phis)[static_cast<size_t>(i)] + xv * pdf) * g[i];
                                    }
                                    sink.add(xn, shape, d.data(), n);
                                });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps, Tape* tape) {
    int rows, cols;
    as2d(x, rows, cols);
    HTC_CHECK(gamma.numel() == cols && beta.numel() == cols, shape, "layer_norm: affine dims mismatch");
    Tensor out = Tensor::zeros(x.shape);
    auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(rows) * cols);
    auto invstd = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
    const float* px = x.ptr();
    const float* pg = gamma.ptr();
    const float* pb = beta.ptr();
    float* po = out.data->data();
    for (int r = 0; r < rows; ++r) {
        const float* xr = px + static_cast<size_t>(r) * cols;
        double mean = 0.0;
        for (int j = 0; j < cols; ++j) mean += xr[j];
        mean /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double dlt = xr[j] - mean;
            var += dlt * dlt;
        }
        var /= cols;
        const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*invstd)[static_cast<size_t>(r)] = is;
        for (int j = 0; j < cols; ++j) {
            const float xh = (xr[j] - static_cast<float>(mean)) * is;
            (*xhat)[static_cast<size_t>(r) * cols + j] = xh;
            po[static_cast<size_t>(r) * cols + j] = xh * pg[j] + pb[j];
        }
    }
    check_finite(out, "layer_norm");
    if (want_grad(tape, {&x, &gamma, &beta})) {
        const int xn = x.node, gn = gamma.node, bn = beta.node;
        auto gd = gamma.data;
        auto xshape = x.shape;
        auto gshape = gamma.shape;
        auto bshape = beta.shape;
        out.node = tape->record(
            parent_ids({&x, &gamma, &beta}), out.shape,
            [=](const std::vector<float>& g, Tape::GradSink& sink) {
                if (gn >= 0 || bn >= 0) {
                    std::vector<float> dgamma(static_cast<size_t>(cols), 0.0f);
                    std::vector<float> dbeta(static_cast<size_t>(cols), 0.0f);
                    for (int r = 0; r < rows; ++r)
                        for (int j = 0; j < cols; ++j) {
                            const float gv = g[static_cast<size_t>(r) * cols + j];
                            dgamma[j] += gv * (*xhat)[static_cast<size_t>(r) * cols + j];
                            dbeta[j] += gv;
                        }
                    if (gn >= 0) sink.add(gn, gshape, dgamma.data(), cols);
                    if (bn >= 0) sink.add(bn, bshape, dbeta.data(), cols);
                }
                if (xn >= 0) {
                    std::vector<float> dx(static_cast<size_t>(rows) * cols);
                    for (int r = 0; r < rows; ++r) {
                        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                        for (int j = 0; j < cols; ++j) {
                            const size_t idx = static_cast<size_t>(r) * cols + j;
                            const double dxh = static_cast<double>(g[idx]) * (*gd)[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * (*xhat)[idx];
                        }
                        mean_dxh /= cols;
                        mean_dxh_xh /= cols;
                        const float is = (*invstd)[static_cast<size_t>(r)];
                        for (int j = 0; j < cols; ++j) {
                            const size_t idx = static_cast<size_t>(r) * cols + j;
                            const double dxh = static_cast<double>(g[idx]) * (*gd)[j];
                            dx[idx] = static_cast<float>(
                                is * (dxh - mean_dxh - (*xhat)[idx] * mean_dxh_xh));
                        }
                    }
                    sink.add(xn, xshape, dx.data(), static_cast<int64_t>(rows) * cols);
                }
            });
    }
    return out;
}

Tensor softmax(const Tensor& x, Tape* tape, std::vector<int>* zeroed_rows) {
    int rows, cols;
    as2d(x, rows, cols);
    HTC_CHECK(cols > 0, shape, "softmax: empty last dim");
    check_no_nan(x, "softmax(input)");
    Tensor out = Tensor::zeros(x.shape);
    const float* px = x.ptr();
    float* po = out.data->data();
    for (int r = 0; r < rows; ++r) {
        const float* xr = px + static_cast<size_t>(r) * cols;
        float* orow = po + static_cast<size_t>(r) * cols;
        float mx = kNegInf;
        for (int j = 0; j < cols; ++j) mx = std::max(mx, xr[j]);
        if (mx == kNegInf) {
            // fully masked row: zeros, flagged
            HTC_CHECK(zeroed_rows != nullptr, numeric, "softmax: fully masked row");
            zeroed_rows->push_back(r);
            continue;
        }
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            const float e = xr[j] == kNegInf ? 0.0f : std::exp(xr[j] - mx);
            orow[j] = e;
            sum += e;
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (int j = 0; j < cols; ++j) orow[j] *= inv;
    }
    check_no_nan(out, "softmax");
    if (want_grad(tape, {&x})) {
        const int xn = x.node;
        auto od = out.data;
        auto shape = x.shape;
        out.node = tape->record({xn}, out.shape,
                                [xn, od, shape, rows, cols](const std::vector<float>& g, Tape::GradSink& sink) {
                                    std::vector<float> dx(static_cast<size_t>(rows) * cols);
                                    for (int r = 0; r < rows; ++r) {
                                        double dot = 0.0;
                                        for (int j = 0; j < cols; ++j) {
                                            const size_t idx = static_cast<size_t>(r) * cols + j;
                                            dot += static_cast<double>(g[idx]) * (*od)[idx];
                                        }
                                        for (int j = 0; j < cols; ++j) {
                                            const size_t idx = static_cast<size_t>(r) * cols + j;
                                            dx[idx] = (*od)[idx] * (g[idx] - static_cast<float>(dot));
                                        }
                                    }
                                    sink.add(xn, shape, dx.data(), static_cast<int64_t>(rows) * cols);
                                });
    }
    return out;
}

namespace {

// log(sum(exp(row))) with max subtraction; row must contain a finite entry.
double row_logsumexp(const float* row, int n, float& mx_out) {
    float mx = kNegInf;
    for (int j = 0; j < n; ++j) mx = std::max(mx, row[j]);
    HTC_CHECK(mx != kNegInf, numeric, "cross_entropy: fully masked logits");
    double sum = 0.0;
    for (int j = 0; j < n; ++j)
        if (row[j] != kNegInf) sum += std::exp(static_cast<double>(row[j]) - mx);
    mx_out = mx;
    return std::log(sum) + mx;
}

} // namespace

Tensor cross_entropy(const Tensor& logits, int target, Tape* tape) {
    const int n = static_cast<int>(logits.numel());
    HTC_CHECK(target >= 0 && target < n, invalid_argument,
              "cross_entropy: target index " + std::to_string(target) + " out of range");
    float mx = 0.0f;
    const double lse = row_logsumexp(logits.ptr(), n, mx);
    Tensor out = Tensor::scalar(static_cast<float>(lse - logits.at(target)));
    check_finite(out, "cross_entropy");
    if (want_grad(tape, {&logits})) {
        const int ln = logits.node;
        auto ld = logits.data;
        auto shape = logits.shape;
        out.node = tape->record({ln}, out.shape,
                                [ln, ld, shape, n, target, lse](const std::vector<float>& g, Tape::GradSink& sink) {
                                    std::vector<float> d(static_cast<size_t>(n));
                                    for (int j = 0; j < n; ++j) {
                                        const float p = (*ld)[j] == kNegInf
                                                            ? 0.0f
                                                            : static_cast<float>(std::exp((*ld)[j] - lse));
                                        d[j] = (p - (j == target ? 1.0f : 0.0f)) * g[0];
                                    }
                                    sink.add(ln, shape, d.data(), n);
                                });
    }
    return out;
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& rows,
                          const std::vector<int>& targets, Tape* tape) {
    int nrows, vocab;
    as2d(logits, nrows, vocab);
    HTC_CHECK(!rows.empty(), invalid_argument, "cross_entropy_rows: no rows listed");
    HTC_CHECK(rows.size() == targets.size(), invalid_argument, "cross_entropy_rows: rows/targets mismatch");
    const int count = static_cast<int>(rows.size());
    double total = 0.0;
    std::vector<double> lses(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        HTC_CHECK(rows[i] >= 0 && rows[i] < nrows, invalid_argument, "cross_entropy_rows: row out of range");
        HTC_CHECK(targets[i] >= 0 && targets[i] < vocab, invalid_argument,
                  "cross_entropy_rows: target out of range");
        float mx = 0.0f;
        lses[i] = row_logsumexp(logits.ptr() + static_cast<size_t>(rows[i]) * vocab, vocab, mx);
        total += lses[i] - logits.at2(rows[i], targets[i]);
    }
    Tensor out = Tensor::scalar(static_cast<float>(total / count));
    check_finite(out, "cross_entropy_rows");
    if (want_grad(tape, {&logits})) {
        const int ln = logits.node;
        auto ld = logits.data;
        auto shape = logits.shape;
        out.node = tape->record(
            {ln}, out.shape,
            [ln, ld, shape, nrows, vocab, rows, targets, lses, count](const std::vector<float>& g,
                                                                      Tape::GradSink& sink) {
                std::vector<float> d(static_cast<size_t>(nrows) * vocab, 0.0f);
                const float gscale = g[0] / static_cast<float>(count);
                for (size_t i = 0; i < rows.size(); ++i) {
                    const float* lr = ld->data() + static_cast<size_t>(rows[i]) * vocab;
                    float* dr = d.data() + static_cast<size_t>(rows[i]) * vocab;
                    for (int j = 0; j < vocab; ++j) {
                        const float p =
                            lr[j] == kNegInf ? 0.0f : static_cast<float>(std::exp(lr[j] - lses[i]));
                        dr[j] += (p - (j == targets[i] ? 1.0f : 0.0f)) * gscale;
                    }
                }
                sink.add(ln, shape, d.data(), static_cast<int64_t>(nrows) * vocab);
            });
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts, Tape* tape) {
    HTC_CHECK(!parts.empty(), invalid_argument, "concat_rows: no parts");
    int cols = -1;
    int total = 0;
    for (const Tensor& p : parts) {
        HTC_CHECK(p.shape.size() == 2, shape, "concat_rows: rank-2 parts required");
        if (cols < 0) cols = p.shape[1];
        HTC_CHECK(p.shape[1] == cols, shape, "concat_rows: column mismatch");
        total += p.shape[0];
    }
    Tensor out = Tensor::zeros({total, cols});
    float* po = out.data->data();
    int row = 0;
    bool tracked = false;
    std::vector<int> pids;
    struct Piece {
        int node;
        int start;
        int rows;
    };
    std::vector<Piece> pieces;
    for (const Tensor& p : parts) {
        std::memcpy(po + static_cast<size_t>(row) * cols, p.ptr(),
                    static_cast<size_t>(p.numel()) * sizeof(float));
        if (tape && p.tracked()) {
            tracked = true;
            pids.push_back(p.node);
            pieces.push_back({p.node, row, p.shape[0]});
        }
        row += p.shape[0];
    }
    if (tracked) {
        out.node = tape->record(pids, out.shape,
                                [pieces, cols](const std::vector<float>& g, Tape::GradSink& sink) {
                                    for (const auto& pc : pieces)
                                        sink.add(pc.node, {pc.rows, cols},
                                                 g.data() + static_cast<size_t>(pc.start) * cols,
                                                 static_cast<int64_t>(pc.rows) * cols);
                                });
    }
    return out;
}

Tensor slice_rows(const Tensor& x, int start, int len, Tape* tape) {
    HTC_CHECK(x.shape.size() == 2, shape, "slice_rows: rank-2 input required");
    const int rows = x.shape[0], cols = x.shape[1];
    HTC_CHECK(start >= 0 && len >= 0 && start + len <= rows, shape, "slice_rows: range out of bounds");
    Tensor out = Tensor::zeros({len, cols});
    std::memcpy(out.data->data(), x.ptr() + static_cast<size_t>(start) * cols,
                static_cast<size_t>(len) * cols * sizeof(float));
    if (want_grad(tape, {&x})) {
        const int xn = x.node;
        auto xshape = x.shape;
        out.node = tape->record({xn}, out.shape,
                                [xn, xshape, start, len, rows, cols](const std::vector<float>& g,
                                                                     Tape::GradSink& sink) {
                                    std::vector<float> dx(static_cast<size_t>(rows) * cols, 0.0f);
                                    std::memcpy(dx.data() + static_cast<size_t>(start) * cols, g.data(),
                                                static_cast<size_t>(len) * cols * sizeof(float));
                                    sink.add(xn, xshape, dx.data(), static_cast<int64_t>(rows) * cols);
                                });
    }
    return out;
}

Tensor slice_cols(const Tensor& x, int start, int len, Tape* tape) {
    HTC_CHECK(x.shape.size() == 2, shape, "slice_cols: rank-2 input required");
    const int rows = x.shape[0], cols = x.shape[1];
    HTC_CHECK(start >= 0 && len >= 0 && start + len <= cols, shape, "slice_cols: range out of bounds");
    Tensor out = Tensor::zeros({rows, len});
    const float* px = x.ptr();
    float* po = out.data->data();
    for (int r = 0; r < rows; ++r)
        std::memcpy(po + static_cast<size_t>(r) * len, px + static_cast<size_t>(r) * cols + start,
                    static_cast<size_t>(len) * sizeof(float));
    if (want_grad(tape, {&x})) {
        const int xn = x.node;
        auto xshape = x.shape;
        out.node = tape->record({xn}, out.shape,
                                [xn, xshape, start, len, rows, cols](const std::vector<float>& g,
                                                                     Tape::GradSink& sink) {
                                    std::vector<float> dx(static_cast<size_t>(rows) * cols, 0.0f);
                                    for (int r = 0; r < rows; ++r)
                                        std::memcpy(dx.data() + static_cast<size_t>(r) * cols + start,
                                                    g.data() + static_cast<size_t>(r) * len,
                                                    static_cast<size_t>(len) * sizeof(float));
                                    sink.add(xn, xshape, dx.data(), static_cast<int64_t>(rows) * cols);
                                });
    }
    return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& indices, Tape* tape) {
    HTC_CHECK(x.shape.size() == 2, shape, "gather_rows: rank-2 input required");
    const int rows = x.shape[0], cols = x.shape[1];
    Tensor out = Tensor::zeros({static_cast<int>(indices.size()), cols});
    float* po = out.data->data();
    for (size_t i = 0; i < indices.size(); ++i) {
        HTC_CHECK(indices[i] >= 0 && indices[i] < rows, invalid_argument,
                  "gather_rows: index out of range");
        std::memcpy(po + i * cols, x.ptr() + static_cast<size_t>(indices[i]) * cols,
                    static_cast<size_t>(cols) * sizeof(float));
    }
    if (want_grad(tape, {&x})) {
        const int xn = x.node;
        auto xshape = x.shape;
        out.node = tape->record({xn}, out.shape,
                                [xn, xshape, indices, rows, cols](const std::vector<float>& g,
                                                                  Tape::GradSink& sink) {
                                    std::vector<float> dx(static_cast<size_t>(rows) * cols, 0.0f);
                                    for (size_t i = 0; i < indices.size(); ++i)
                                        for (int j = 0; j < cols; ++j)
                                            dx[static_cast<size_t>(indices[i]) * cols + j] += g[i * cols + j];
                                    sink.add(xn, xshape, dx.data(), static_cast<int64_t>(rows) * cols);
                                });
    }
    return out;
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape, Tape* tape) {
    HTC_CHECK(shape_numel(new_shape) == x.numel(), shape,
              "reshape: element count mismatch for " + x.shape_str());
    Tensor out;
    out.shape = std::move(new_shape);
    out.data = x.data; // same storage; tensors are immutable
    if (want_grad(tape, {&x})) {
        const int xn = x.node;
        auto xshape = x.shape;
        const int64_t n = x.numel();
        out.node = tape->record({xn}, out.shape,
                                [xn, xshape, n](const std::vector<float>& g, Tape::GradSink& sink) {
                                    sink.add(xn, xshape, g.data(), n);
                                });
    }
    return out;
}

Tensor transpose2d(const Tensor& x, Tape* tape) {
    HTC_CHECK(x.shape.size() == 2, shape, "transpose2d: rank-2 input required");
    const int rows = x.shape[0], cols = x.shape[1];
    Tensor out = Tensor::zeros({cols, rows});
    const float* px = x.ptr();
    float* po = out.data->data();
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < cols; ++j) po[static_cast<size_t>(j) * rows + r] = px[static_cast<size_t>(r) * cols + j];
    if (want_grad(tape, {&x})) {
        const int xn = x.node;
        auto xshape = x.shape;
        out.node = tape->record({xn}, out.shape,
                                [xn, xshape, rows, cols](const std::vector<float>& g, Tape::GradSink& sink) {
                                    std::vector<float> dx(static_cast<size_t>(rows) * cols);
                                    for (int j = 0; j < cols; ++j)
                                        for (int r = 0; r < rows; ++r)
                                            dx[static_cast<size_t>(r) * cols + j] = g[static_cast<size_t>(j) * rows + r];
                                    sink.add(xn, xshape, dx.data(), static_cast<int64_t>(rows) * cols);
                                });
    }
    return out;
}

namespace {

// softmax of one score row into probs; returns false when fully masked
bool attn_softmax_row(const float* scores, float* probs, int n) {
    float mx = kNegInf;
    for (int j = 0; j < n; ++j) mx = std::max(mx, scores[j]);
    if (mx == kNegInf) return false;
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
        const float e = scores[j] == kNegInf ? 0.0f : std::exp(scores[j] - mx);
        probs[j] = e;
        sum += e;
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (int j = 0; j < n; ++j) probs[j] *= inv;
    return true;
}

void copy_head_block(const float* src, float* dst, int seq, int d_model, int head_off, int d_k,
                     int row0) {
    for (int i = 0; i < seq; ++i)
        std::memcpy(dst + static_cast<size_t>(i) * d_k,
                    src + (static_cast<size_t>(row0 + i)) * d_model + head_off,
                    static_cast<size_t>(d_k) * sizeof(float));
}

void add_head_block(float* dst, const float* src, int seq, int d_model, int head_off, int d_k,
                    int row0) {
    for (int i = 0; i < seq; ++i)
        for (int j = 0; j < d_k; ++j)
            dst[(static_cast<size_t>(row0 + i)) * d_model + head_off + j] +=
                src[static_cast<size_t>(i) * d_k + j];
}

} // namespace

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& addmask,
                        int batch, int heads, Tape* tape, std::vector<float>* probs_out) {
    HTC_CHECK(q.shape.size() == 2 && q.same_shape(k) && q.same_shape(v), shape,
              "masked_attention: q/k/v must share a rank-2 shape");
    const int bt = q.shape[0], d_model = q.shape[1];
    HTC_CHECK(batch > 0 && bt % batch == 0, shape, "masked_attention: rows not divisible by batch");
    const int seq = bt / batch;
    HTC_CHECK(addmask.shape == std::vector<int>({seq, seq}), shape,
              "masked_attention: mask must be [seq x seq]");
    HTC_CHECK(heads > 0 && d_model % heads == 0, shape, "masked_attention: heads must divide d_model");
    const int d_k = d_model / heads;
    const float sc = 1.0f / std::sqrt(static_cast<float>(d_k));

    auto probs = std::make_shared<std::vector<float>>(
        static_cast<size_t>(batch) * heads * seq * seq);
    Tensor out = Tensor::zeros({bt, d_model});
    {
        std::vector<float> qh(static_cast<size_t>(seq) * d_k), kh(qh.size()), vh(qh.size());
        std::vector<float> scores(static_cast<size_t>(seq) * seq);
        std::vector<float> ctx(static_cast<size_t>(seq) * d_k);
        const float* pm = addmask.ptr();
        for (int b = 0; b < batch; ++b) {
            const int row0 = b * seq;
            for (int h = 0; h < heads; ++h) {
                const int off = h * d_k;
                copy_head_block(q.ptr(), qh.data(), seq, d_model, off, d_k, row0);
                copy_head_block(k.ptr(), kh.data(), seq, d_model, off, d_k, row0);
                copy_head_block(v.ptr(), vh.data(), seq, d_model, off, d_k, row0);
                detail::mm_nt(qh.data(), kh.data(), scores.data(), seq, d_k, seq);
                for (int i = 0; i < seq; ++i)
                    for (int j = 0; j < seq; ++j) {
                        const size_t idx = static_cast<size_t>(i) * seq + j;
                        const float m = pm[idx];
                        scores[idx] = m == kNegInf ? kNegInf : scores[idx] * sc + m;
                    }
                float* pb = probs->data() +
                            (static_cast<size_t>(b) * heads + h) * seq * seq;
                for (int i = 0; i < seq; ++i) {
                    const bool ok = attn_softmax_row(scores.data() + static_cast<size_t>(i) * seq,
                                                     pb + static_cast<size_t>(i) * seq, seq);
                    HTC_CHECK(ok, numeric, "masked_attention: fully masked row");
                }
                std::fill(ctx.begin(), ctx.end(), 0.0f);
                detail::mm_nn(pb, vh.data(), ctx.data(), seq, seq, d_k);
                for (int i = 0; i < seq; ++i)
                    std::memcpy(out.data->data() + (static_cast<size_t>(row0 + i)) * d_model + off,
                                ctx.data() + static_cast<size_t>(i) * d_k,
                                static_cast<size_t>(d_k) * sizeof(float));
            }
        }
    }
    check_finite(out, "masked_attention");
    if (probs_out) *probs_out = *probs;

    if (want_grad(tape, {&q, &k, &v})) {
        auto qd = q.data;
        auto kd = k.data;
        auto vd = v.data;
        const int qn = q.node, kn = k.node, vn = v.node;
        out.node = tape->record(
            parent_ids({&q, &k, &v}), out.shape,
            [=](const std::vector<float>& g, Tape::GradSink& sink) {
                std::vector<float> dq, dk, dv;
                if (qn >= 0) dq.assign(static_cast<size_t>(bt) * d_model, 0.0f);
                if (kn >= 0) dk.assign(static_cast<size_t>(bt) * d_model, 0.0f);
                if (vn >= 0) dv.assign(static_cast<size_t>(bt) * d_model, 0.0f);
                std::vector<float> qh(static_cast<size_t>(seq) * d_k), kh(qh.size()), vh(qh.size());
                std::vector<float> gctx(qh.size()), dqh(qh.size()), dkh(qh.size()), dvh(qh.size());
                std::vector<float> dprobs(static_cast<size_t>(seq) * seq),
                    dscores(static_cast<size_t>(seq) * seq);
                for (int b = 0; b < batch; ++b) {
                    const int row0 = b * seq;
                    for (int h = 0; h < heads; ++h) {
                        const int off = h * d_k;
                        copy_head_block(qd->data(), qh.data(), seq, d_model, off, d_k, row0);
                        copy_head_block(kd->data(), kh.data(), seq, d_model, off, d_k, row0);
                        copy_head_block(vd->data(), vh.data(), seq, d_model, off, d_k, row0);
                        copy_head_block(g.data(), gctx.data(), seq, d_model, off, d_k, row0);
                        const float* pb = probs->data() +
                                          (static_cast<size_t>(b) * heads + h) * seq * seq;
                        if (vn >= 0) {
                            // dvh = probs^T * gctx
                            std::fill(dvh.begin(), dvh.end(), 0.0f);
                            detail::mm_tn(pb, gctx.data(), dvh.data(), seq, seq, d_k);
                            add_head_block(dv.data(), dvh.data(), seq, d_model, off, d_k, row0);
                        }
                        detail::mm_nt(gctx.data(), vh.data(), dprobs.data(), seq, d_k, seq);
                        for (int i = 0; i < seq; ++i) {
                            const float* pr = pb + static_cast<size_t>(i) * seq;
                            float* dsr = dscores.data() + static_cast<size_t>(i) * seq;
                            const float* dpr = dprobs.data() + static_cast<size_t>(i) * seq;
                            double dot = 0.0;
                            for (int j = 0; j < seq; ++j) dot += static_cast<double>(dpr[j]) * pr[j];
                            for (int j = 0; j < seq; ++j)
                                dsr[j] = pr[j] * (dpr[j] - static_cast<float>(dot)) * sc;
                        }
                        if (qn >= 0) {
                            std::fill(dqh.begin(), dqh.end(), 0.0f);
                            detail::mm_nn(dscores.data(), kh.data(), dqh.data(), seq, seq, d_k);
                            add_head_block(dq.data(), dqh.data(), seq, d_model, off, d_k, row0);
                        }
                        if (kn >= 0) {
                            // dkh = dscores^T * qh
                            std::fill(dkh.begin(), dkh.end(), 0.0f);
                            detail::mm_tn(dscores.data(), qh.data(), dkh.data(), seq, seq, d_k);
                            add_head_block(dk.data(), dkh.data(), seq, d_model, off, d_k, row0);
                        }
                    }
                }
                if (qn >= 0) sink.add(qn, {bt, d_model}, dq.data(), static_cast<int64_t>(bt) * d_model);
                if (kn >= 0) sink.add(kn, {bt, d_model}, dk.data(), static_cast<int64_t>(bt) * d_model);
                if (vn >= 0) sink.add(vn, {bt, d_model}, dv.data(), static_cast<int64_t>(bt) * d_model);
            });
    }
    return out;
}

std::vector<int> argmax_lastdim(const Tensor& x) {
    int rows, cols;
    as2d(x, rows, cols);
    std::vector<int> out(static_cast<size_t>(rows));
    const float* px = x.ptr();
    for (int r = 0; r < rows; ++r) {
        const float* row = px + static_cast<size_t>(r) * cols;
        int best = 0;
        for (int j = 1; j < cols; ++j)
            if (row[j] > row[best]) best = j;
        out[static_cast<size_t>(r)] = best;
    }
    return out;
}

} // namespace htc
