#include "htc/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "htc/rng.hpp"

namespace htc {

namespace {

double sqdist(const float* a, const float* b, int d) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
        const double dlt = static_cast<double>(a[j]) - b[j];
        acc += dlt * dlt;
    }
    return acc;
}

// One patch worth of pixels, row-major.
struct Patch {
    std::vector<double> px;
    int size;

    double at(int y, int x) const { return px[static_cast<size_t>(y) * size + x]; }
};

double patch_stat(const Patch& p, int stat_index) {
    const int s = p.size;
    const int n = s * s;
    auto mean_of = [](const std::vector<double>& v) {
        double acc = 0.0;
        for (double x : v) acc += x;
        return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
    };

    double mean = 0.0;
    for (double x : p.px) mean += x;
    mean /= n;

    switch (stat_index) {
        case 0: return mean;
        case 1: { // std
            double var = 0.0;
            for (double x : p.px) var += (x - mean) * (x - mean);
            return std::sqrt(var / n);
        }
        case 2: return *std::min_element(p.px.begin(), p.px.end());
        case 3: return *std::max_element(p.px.begin(), p.px.end());
        case 4: case 5: case 6: case 7: { // gradient stats
            const bool horiz = stat_index == 4 || stat_index == 6;
            std::vector<double> g;
            g.reserve(static_cast<size_t>(n));
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) {
                    if (horiz && x + 1 < s) g.push_back(p.at(y, x + 1) - p.at(y, x));
                    if (!horiz && y + 1 < s) g.push_back(p.at(y + 1, x) - p.at(y, x));
                }
            if (stat_index <= 5) {
                for (double& v : g) v = std::fabs(v);
                return mean_of(g);
            }
            const double gm = mean_of(g);
            double var = 0.0;
            for (double v : g) var += (v - gm) * (v - gm);
            return g.empty() ? 0.0 : std::sqrt(var / static_cast<double>(g.size()));
        }
        case 8: { // center block mean
            std::vector<double> c;
            for (int y = s / 4; y < s - s / 4; ++y)
                for (int x = s / 4; x < s - s / 4; ++x) c.push_back(p.at(y, x));
            return mean_of(c);
        }
        case 9: { // border ring mean
            std::vector<double> c;
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x)
                    if (y == 0 || y == s - 1 || x == 0 || x == s - 1) c.push_back(p.at(y, x));
            return mean_of(c);
        }
        case 10: case 11: case 12: { // order statistics
            std::vector<double> sorted = p.px;
            std::sort(sorted.begin(), sorted.end());
            const double frac = stat_index == 10 ? 0.5 : (stat_index == 11 ? 0.25 : 0.75);
            return sorted[static_cast<size_t>(frac * (n - 1))];
        }
        case 13: { // mean absolute deviation
            double acc = 0.0;
            for (double x : p.px) acc += std::fabs(x - mean);
            return acc / n;
        }
        case 14: { // rms gradient
            double acc = 0.0;
            int cnt = 0;
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) {
                    if (x + 1 < s) {
                        const double d = p.at(y, x + 1) - p.at(y, x);
                        acc += d * d;
                        ++cnt;
                    }
                    if (y + 1 < s) {
                        const double d = p.at(y + 1, x) - p.at(y, x);
                        acc += d * d;
                        ++cnt;
                    }
                }
            return cnt ? std::sqrt(acc / cnt) : 0.0;
        }
        case 15: { // energy
            double acc = 0.0;
            for (double x : p.px) acc += x * x;
            return acc / n;
        }
        default: { // higher central moments, still permutation-invariant
            const int order = 3 + (stat_index - 16);
            double acc = 0.0;
            for (double x : p.px) acc += std::pow(x - mean, order);
            return acc / n;
        }
    }
}

} // namespace

float Codebook::min_pairwise_l2() const {
    float best = std::numeric_limits<float>::infinity();
    for (int g = 0; g < groups; ++g)
        for (int a = 0; a < entries; ++a)
            for (int b = a + 1; b < entries; ++b) {
                const float d = static_cast<float>(
                    std::sqrt(sqdist(codeword(g, a), codeword(g, b), group_dim)));
                best = std::min(best, d);
            }
    return best;
}

Tensor extract_group_features(const Tensor& image, int downsample, int groups, int group_dim) {
    HTC_CHECK(image.shape.size() == 3 && image.shape[2] == 1, shape,
              "extract_group_features: expected [H x W x 1] image");
    const int h = image.shape[0], w = image.shape[1];
    HTC_CHECK(downsample > 0 && h % downsample == 0 && w % downsample == 0, invalid_argument,
              "extract_group_features: image dims not divisible by downsample factor");
    HTC_CHECK(groups > 0 && group_dim > 0, invalid_argument, "extract_group_features: bad group config");
    const int gh = h / downsample, gw = w / downsample;
    const int positions = gh * gw;

    Tensor out = Tensor::zeros({positions, groups, group_dim});
    float* po = out.data->data();
    Patch patch;
    patch.size = downsample;
    patch.px.resize(static_cast<size_t>(downsample) * downsample);
    for (int py = 0; py < gh; ++py)
        for (int px = 0; px < gw; ++px) {
            for (int y = 0; y < downsample; ++y)
                for (int x = 0; x < downsample; ++x)
                    patch.px[static_cast<size_t>(y) * downsample + x] =
                        image.at((static_cast<int64_t>(py * downsample + y) * w +
                                  (px * downsample + x)));
            const int pos = py * gw + px;
            for (int g = 0; g < groups; ++g)
                for (int j = 0; j < group_dim; ++j)
                    po[(static_cast<size_t>(pos) * groups + g) * group_dim + j] =
                        static_cast<float>(patch_stat(patch, g * group_dim + j));
        }
    return out;
}

namespace {

// k-means++ seeding over `points` (row-major, n x d); first `given` centers
// are already present in `centers`.
void kmeanspp_extend(const std::vector<float>& points, int n, int d, std::vector<float>& centers,
                     int given, int k, Rng& rng) {
    std::vector<double> mind(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
    auto update_mind = [&](int center_idx) {
        const float* c = centers.data() + static_cast<size_t>(center_idx) * d;
        for (int i = 0; i < n; ++i)
            mind[static_cast<size_t>(i)] =
                std::min(mind[static_cast<size_t>(i)],
                         sqdist(points.data() + static_cast<size_t>(i) * d, c, d));
    };
    int have = given;
    if (have == 0) {
        const int first = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
        std::copy_n(points.data() + static_cast<size_t>(first) * d, d, centers.data());
        have = 1;
    }
    for (int c = 0; c < have; ++c) update_mind(c);
    while (have < k) {
        double total = 0.0;
        for (double v : mind) total += v;
        int pick = 0;
        if (total <= 0.0) {
            // all points coincide with some center; any point works
            pick = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
        } else {
            double r = rng.uniform() * total;
            for (int i = 0; i < n; ++i) {
                r -= mind[static_cast<size_t>(i)];
                if (r <= 0.0) {
                    pick = i;
                    break;
                }
                pick = i;
            }
        }
        std::copy_n(points.data() + static_cast<size_t>(pick) * d,
                    d, centers.data() + static_cast<size_t>(have) * d);
        update_mind(have);
        ++have;
    }
}

} // namespace

Codebook fit_codebook(const std::vector<Tensor>& features, int entries, int iters, uint64_t seed,
                      const Codebook* warm_start, std::vector<double>* iter_errors) {
    HTC_CHECK(!features.empty(), invalid_argument, "fit_codebook: no data");
    HTC_CHECK(entries >= 1 && iters >= 1, invalid_argument, "fit_codebook: bad entries/iters");
    const auto& shp = features.front().shape;
    HTC_CHECK(shp.size() == 3, shape, "fit_codebook: features must be [positions x groups x dim]");
    const int positions = shp[0], groups = shp[1], dim = shp[2];
    for (const Tensor& f : features)
        HTC_CHECK(f.shape == shp, shape, "fit_codebook: inconsistent feature shapes");
    const int n = static_cast<int>(features.size()) * positions;
    HTC_CHECK(n >= entries, invalid_argument,
              "fit_codebook: need at least " + std::to_string(entries) + " points per group, have " +
                  std::to_string(n));
    if (warm_start) {
        HTC_CHECK(warm_start->groups == groups && warm_start->group_dim == dim, shape,
                  "fit_codebook: warm start shape mismatch");
        HTC_CHECK(warm_start->entries <= entries, invalid_argument,
                  "fit_codebook: warm start larger than target");
    }

    Codebook cb;
    cb.groups = groups;
    cb.entries = entries;
    cb.group_dim = dim;
    cb.vectors = Tensor::zeros({groups, entries, dim});
    if (iter_errors) iter_errors->clear();

    std::vector<float> points(static_cast<size_t>(n) * dim);
    std::vector<int> assign(static_cast<size_t>(n));
    std::vector<float> centers(static_cast<size_t>(entries) * dim);
    std::vector<double> sums(static_cast<size_t>(entries) * dim);
    std::vector<int> counts(static_cast<size_t>(entries));

    for (int g = 0; g < groups; ++g) {
        // gather this group's points across the dataset
        int row = 0;
        for (const Tensor& f : features)
            for (int p = 0; p < positions; ++p, ++row)
                std::copy_n(f.ptr() + (static_cast<size_t>(p) * groups + g) * dim, dim,
                            points.data() + static_cast<size_t>(row) * dim);

        Rng rng(Rng::mix(seed, static_cast<uint64_t>(g)));
        int given = 0;
        if (warm_start) {
            given = warm_start->entries;
            std::copy_n(warm_start->codeword(g, 0), static_cast<size_t>(given) * dim, centers.data());
        }
        kmeanspp_extend(points, n, dim, centers, given, entries, rng);

        double prev_err = std::numeric_limits<double>::infinity();
        for (int it = 0; it < iters; ++it) {
            // assignment
            double err = 0.0;
            for (int i = 0; i < n; ++i) {
                const float* x = points.data() + static_cast<size_t>(i) * dim;
                int best = 0;
                double bestd = sqdist(x, centers.data(), dim);
                for (int c = 1; c < entries; ++c) {
                    const double dd = sqdist(x, centers.data() + static_cast<size_t>(c) * dim, dim);
                    if (dd < bestd) {
                        bestd = dd;
                        best = c;
                    }
                }
                assign[static_cast<size_t>(i)] = best;
                err += bestd;
            }
            if (iter_errors && g == 0) iter_errors->push_back(err);
            // update
            std::fill(sums.begin(), sums.end(), 0.0);
            std::fill(counts.begin(), counts.end(), 0);
            for (int i = 0; i < n; ++i) {
                const int c = assign[static_cast<size_t>(i)];
                ++counts[static_cast<size_t>(c)];
                const float* x = points.data() + static_cast<size_t>(i) * dim;
                for (int j = 0; j < dim; ++j) sums[static_cast<size_t>(c) * dim + j] += x[j];
            }
            for (int c = 0; c < entries; ++c) {
                if (counts[static_cast<size_t>(c)] > 0) {
                    for (int j = 0; j < dim; ++j)
                        centers[static_cast<size_t>(c) * dim + j] = static_cast<float>(
                            sums[static_cast<size_t>(c) * dim + j] / counts[static_cast<size_t>(c)]);
                } else {
                    // reseed at the point farthest from its centroid
                    int far = 0;
                    double fard = -1.0;
                    for (int i = 0; i < n; ++i) {
                        const double dd = sqdist(
                            points.data() + static_cast<size_t>(i) * dim,
                            centers.data() + static_cast<size_t>(assign[static_cast<size_t>(i)]) * dim,
                            dim);
                        if (dd > fard) {
                            fard = dd;
                            far = i;
                        }
                    }
                    std::copy_n(points.data() + static_cast<size_t>(far) * dim, dim,
                                centers.data() + static_cast<size_t>(c) * dim);
                }
            }
            prev_err = err;
        }
        (void)prev_err;
        std::copy_n(centers.data(), static_cast<size_t>(entries) * dim,
                    cb.vectors.data->data() + (static_cast<size_t>(g) * entries) * dim);
    }

    cb.frozen = true;
    HTC_CHECK(cb.min_pairwise_l2() > 1e-6f, numeric,
              "fit_codebook: codebook collapse (duplicate codewords); more distinct data or "
              "smaller K required");
    return cb;
}

QuantizedImage quantize(const Tensor& features, const Codebook& cb) {
    HTC_CHECK(cb.frozen, invalid_argument, "quantize: codebook must be frozen");
    HTC_CHECK(features.shape.size() == 3, shape, "quantize: features must be [positions x groups x dim]");
    const int positions = features.shape[0];
    HTC_CHECK(features.shape[1] == cb.groups && features.shape[2] == cb.group_dim, shape,
              "quantize: feature dims do not match codebook");

    QuantizedImage out;
    out.indices.resize(static_cast<size_t>(positions) * cb.groups);
    out.q = Tensor::zeros({positions * cb.groups * cb.group_dim});
    float* q = out.q.data->data();
    double err = 0.0;
    for (int p = 0; p < positions; ++p)
        for (int g = 0; g < cb.groups; ++g) {
            const float* x = features.ptr() + (static_cast<size_t>(p) * cb.groups + g) * cb.group_dim;
            int best = 0;
            double bestd = sqdist(x, cb.codeword(g, 0), cb.group_dim);
            for (int k = 1; k < cb.entries; ++k) {
                const double dd = sqdist(x, cb.codeword(g, k), cb.group_dim);
                if (dd < bestd) { // strict: ties keep the lowest index
                    bestd = dd;
                    best = k;
                }
            }
            out.indices[static_cast<size_t>(p) * cb.groups + g] = best;
            std::copy_n(cb.codeword(g, best), cb.group_dim,
                        q + (static_cast<size_t>(p) * cb.groups + g) * cb.group_dim);
            err += bestd;
        }
    out.recon_error = static_cast<float>(err / static_cast<double>(out.q.numel()));
    return out;
}

} // namespace htc
