#include "htc/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "htc/rng.hpp"

namespace htc {

EvalResult evaluate(const HtcModel& model, const std::vector<QASample>& samples) {
    HTC_CHECK(!samples.empty(), invalid_argument, "evaluate: no samples");
    EvalResult r;
    int hit_s = 0, hit_d = 0;
    for (const QASample& s : samples) {
        SampleInput in = model.prepare(s.image, s.question);
        const auto gen = model.generate(in, 1);
        HTC_CHECK(!gen.truncated && gen.tokens.size() == s.question.size() + 1, internal,
                  "evaluate: unexpected generation length");
        const bool hit = gen.tokens.back() == s.answer;
        if (s.task == kTaskS) {
            ++r.n_s;
            hit_s += hit;
        } else {
            ++r.n_d;
            hit_d += hit;
        }
    }
    r.acc_s = r.n_s ? static_cast<double>(hit_s) / r.n_s : 0.0;
    r.acc_d = r.n_d ? static_cast<double>(hit_d) / r.n_d : 0.0;
    r.acc_all = static_cast<double>(hit_s + hit_d) / static_cast<double>(samples.size());
    return r;
}

namespace {

std::vector<float> row_mean(const Tensor& t) {
    Tensor m = mean_rows(t);
    return *m.data;
}

} // namespace

RepSet extract_representations(const HtcModel& model, const QASample& sample) {
    SampleInput in = model.prepare(sample.image, sample.question);
    LayoutSpec layout = model.spec.layout.with_text_len(static_cast<int>(sample.question.size()));
    ForwardResult fr = model.forward_single(in, layout);
    RepSet reps;
    reps.z_voco = row_mean(fr.z);
    if (model.spec.layout.n_d > 0) reps.v_d_mean = row_mean(model.discrete_tokens(in));
    if (model.spec.layout.n_v > 0) reps.v_mean = row_mean(model.continuous_tokens(in));
    return reps;
}

ProbeOutcome linear_probe(const std::vector<std::vector<float>>& features,
                          const std::vector<int>& labels, const std::vector<int>& train_idx,
                          const std::vector<int>& test_idx, int n_classes, int iters, float lr) {
    HTC_CHECK(!features.empty() && features.size() == labels.size(), invalid_argument,
              "linear_probe: features/labels mismatch");
    HTC_CHECK(!train_idx.empty() && !test_idx.empty(), invalid_argument, "linear_probe: empty split");
    HTC_CHECK(n_classes >= 2, invalid_argument, "linear_probe: need >= 2 classes");
    const int dim = static_cast<int>(features.front().size());

    int first = labels[static_cast<size_t>(train_idx.front())];
    bool degenerate = true;
    for (int i : train_idx)
        if (labels[static_cast<size_t>(i)] != first) {
            degenerate = false;
            break;
        }
    HTC_CHECK(!degenerate, invalid_argument, "linear_probe: single-class training labels");

    // standardize on train statistics
    std::vector<double> mean(static_cast<size_t>(dim), 0.0), sd(static_cast<size_t>(dim), 0.0);
    for (int i : train_idx)
        for (int j = 0; j < dim; ++j) mean[static_cast<size_t>(j)] += features[static_cast<size_t>(i)][static_cast<size_t>(j)];
    for (double& m : mean) m /= static_cast<double>(train_idx.size());
    for (int i : train_idx)
        for (int j = 0; j < dim; ++j) {
            const double d = features[static_cast<size_t>(i)][static_cast<size_t>(j)] - mean[static_cast<size_t>(j)];
            sd[static_cast<size_t>(j)] += d * d;
        }
    for (double& s : sd) s = std::sqrt(s / static_cast<double>(train_idx.size())) + 1e-6;

    auto standardized = [&](int i, std::vector<float>& out) {
        for (int j = 0; j < dim; ++j)
            out[static_cast<size_t>(j)] = static_cast<float>(
                (features[static_cast<size_t>(i)][static_cast<size_t>(j)] - mean[static_cast<size_t>(j)]) /
                sd[static_cast<size_t>(j)]);
    };

    std::vector<std::vector<float>> xtr(train_idx.size(), std::vector<float>(static_cast<size_t>(dim)));
    for (size_t r = 0; r < train_idx.size(); ++r) standardized(train_idx[r], xtr[r]);

    // weights [n_classes x (dim+1)], zero init; plain full-batch GD
    std::vector<double> w(static_cast<size_t>(n_classes) * (dim + 1), 0.0);
    std::vector<double> logits(static_cast<size_t>(n_classes));
    std::vector<double> grad(w.size());
    const double n_tr = static_cast<double>(train_idx.size());
    for (int it = 0; it < iters; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (size_t r = 0; r < train_idx.size(); ++r) {
            const std::vector<float>& x = xtr[r];
            for (int c = 0; c < n_classes; ++c) {
                double acc = w[static_cast<size_t>(c) * (dim + 1) + dim]; // bias
                for (int j = 0; j < dim; ++j) acc += w[static_cast<size_t>(c) * (dim + 1) + j] * x[static_cast<size_t>(j)];
                logits[static_cast<size_t>(c)] = acc;
            }
            const double mx = *std::max_element(logits.begin(), logits.end());
            double sum = 0.0;
            for (double& l : logits) {
                l = std::exp(l - mx);
                sum += l;
            }
            const int y = labels[static_cast<size_t>(train_idx[r])];
            for (int c = 0; c < n_classes; ++c) {
                const double p = logits[static_cast<size_t>(c)] / sum - (c == y ? 1.0 : 0.0);
                double* gc = grad.data() + static_cast<size_t>(c) * (dim + 1);
                for (int j = 0; j < dim; ++j) gc[j] += p * x[static_cast<size_t>(j)];
                gc[dim] += p;
            }
        }
        for (size_t j = 0; j < w.size(); ++j) w[j] -= lr * grad[j] / n_tr;
    }

    ProbeOutcome out;
    out.n = static_cast<int>(test_idx.size());
    std::vector<float> x(static_cast<size_t>(dim));
    int hits = 0;
    for (int i : test_idx) {
        standardized(i, x);
        int best = 0;
        double bestv = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < n_classes; ++c) {
            double acc = w[static_cast<size_t>(c) * (dim + 1) + dim];
            for (int j = 0; j < dim; ++j) acc += w[static_cast<size_t>(c) * (dim + 1) + j] * x[static_cast<size_t>(j)];
            if (acc > bestv) {
                bestv = acc;
                best = c;
            }
        }
        if (best == labels[static_cast<size_t>(i)]) ++hits;
    }
    out.top1 = static_cast<double>(hits) / static_cast<double>(out.n);
    return out;
}

std::vector<int> shuffle_labels(const std::vector<int>& labels, uint64_t seed) {
    std::vector<int> out = labels;
    Rng rng(seed);
    for (size_t i = out.size(); i > 1; --i)
        std::swap(out[i - 1], out[static_cast<size_t>(rng.below(i))]);
    return out;
}

AttnMassResult attn_mass(const HtcModel& model, const std::vector<QASample>& samples,
                         bool tied_null, uint64_t null_seed) {
    const LayoutSpec& L = model.spec.layout;
    HTC_CHECK(L.fusion != Fusion::mean, unsupported,
              "attn_mass: mean fusion has no anchor rows to analyze");
    HTC_CHECK(L.n_d >= 1 && L.n_v >= 1, unsupported, "attn_mass: needs both anchors and patches");
    HTC_CHECK(!samples.empty(), invalid_argument, "attn_mass: no samples");

    // region columns derived from the layout
    const int anchor0 = L.fusion == Fusion::pre ? 0 : L.n_v;
    const int patch0 = L.fusion == Fusion::pre ? L.n_d : 0;

    AttnMassResult res;
    res.heat_anchor_cols = L.n_d;
    const int heat_patches = std::min(12, L.n_v);
    int dominant = 0;
    for (const QASample& s : samples) {
        SampleInput in = model.prepare(s.image, s.question);
        LayoutSpec layout = L.with_text_len(static_cast<int>(s.question.size()));
        const int total = layout.total();
        ForwardHooks hooks;
        std::vector<std::vector<float>> attn;
        hooks.attn = &attn;
        hooks.tie_anchors = tied_null;
        hooks.tie_seed = Rng::mix(null_seed, static_cast<uint64_t>(res.anchor_mean.size()));
        (void)model.forward_single(in, layout, nullptr, &hooks);
        const std::vector<float>& last = attn.back(); // [heads x total x total], batch == 1
        const int heads = model.spec.tf.n_heads;
        const int voco_row = layout.voco_start() + layout.n_b - 1;
        std::vector<double> row(static_cast<size_t>(total), 0.0);
        for (int h = 0; h < heads; ++h)
            for (int j = 0; j < total; ++j)
                row[static_cast<size_t>(j)] +=
                    last[(static_cast<size_t>(h) * total + voco_row) * total + j];
        for (double& v : row) v /= heads;

        double am = 0.0, pm = 0.0;
        for (int j = 0; j < L.n_d; ++j) am += row[static_cast<size_t>(anchor0 + j)];
        for (int j = 0; j < L.n_v; ++j) pm += row[static_cast<size_t>(patch0 + j)];
        am /= L.n_d;
        pm /= L.n_v;
        res.anchor_mean.push_back(am);
        res.patch_mean.push_back(pm);
        if (am > pm) ++dominant;

        std::vector<float> heat;
        for (int j = 0; j < L.n_d; ++j) heat.push_back(static_cast<float>(row[static_cast<size_t>(anchor0 + j)]));
        for (int j = 0; j < heat_patches; ++j) heat.push_back(static_cast<float>(row[static_cast<size_t>(patch0 + j)]));
        res.heat.push_back(std::move(heat));
    }
    res.frac_anchor_dominant = static_cast<double>(dominant) / static_cast<double>(samples.size());
    return res;
}

std::vector<std::string> default_axis_values(const std::string& axis) {
    if (axis == "channel") return {"hybrid", "continuous", "discrete"};
    if (axis == "n_d") return {"1", "2", "4", "8"};
    if (axis == "n_b") return {"1", "2", "4"};
    if (axis == "fusion") return {"pre", "post", "mean"};
    if (axis == "k") return {"8", "16", "32"};
    if (axis == "g") return {"2", "4", "8"};
    if (axis == "beta") return {"0.01", "0.1", "0.5", "1.0"};
    if (axis == "proj_depth") return {"1", "2", "3"};
    if (axis == "mask") return {"star", "full_visual"};
    fail(ErrorCode::invalid_argument, "unknown sweep axis '" + axis + "'");
}

RunConfig apply_axis(const RunConfig& base, const std::string& axis, const std::string& value) {
    RunConfig rc = base;
    if (axis == "channel") {
        if (value == "hybrid") {
            // base layout as configured
        } else if (value == "continuous") {
            rc.set("layout.n_d", "0");
        } else if (value == "discrete") {
            rc.set("layout.n_v", "0");
        } else {
            fail(ErrorCode::invalid_argument, "channel axis: unknown value '" + value + "'");
        }
    } else if (axis == "n_d") {
        rc.set("layout.n_d", value);
    } else if (axis == "n_b") {
        rc.set("layout.n_b", value);
    } else if (axis == "fusion") {
        rc.set("layout.fusion", value);
    } else if (axis == "k") {
        rc.set("quant.entries", value);
    } else if (axis == "g") {
        rc.set("quant.groups", value);
    } else if (axis == "beta") {
        rc.set("train.beta_kl", value);
    } else if (axis == "proj_depth") {
        rc.set("model.proj_depth", value);
    } else if (axis == "mask") {
        rc.set("layout.mask", value);
    } else {
        fail(ErrorCode::invalid_argument, "unknown sweep axis '" + axis + "'");
    }
    return rc;
}

RunConfig reference_config(const RunConfig& base) {
    // uncompressed upper bound: text attends to every visual token
    RunConfig rc = base;
    rc.set("layout.n_d", "0");
    rc.set("layout.fusion", "pre");
    rc.set("layout.mask", "causal");
    return rc;
}

std::vector<SweepRow> run_sweep(const RunConfig& base, const std::string& axis,
                                const std::vector<std::string>& values,
                                const std::vector<uint64_t>& seeds, bool with_reference) {
    HTC_CHECK(!values.empty() && !seeds.empty(), invalid_argument, "run_sweep: nothing to sweep");
    std::vector<SweepRow> rows;
    for (uint64_t seed : seeds) {
        double ref_acc = std::numeric_limits<double>::quiet_NaN();
        if (with_reference) {
            RunConfig rc = reference_config(base);
            rc.set("run.seed", std::to_string(seed));
            TrainedRun run = run_training(rc);
            const EvalResult ev = evaluate(run.model, run.data.test);
            SweepRow row;
            row.axis = axis;
            row.value = "reference";
            row.seed = seed;
            row.acc_s = ev.acc_s;
            row.acc_d = ev.acc_d;
            row.acc_all = ev.acc_all;
            row.retention = 1.0;
            rows.push_back(row);
            ref_acc = ev.acc_all;
        }
        for (const std::string& value : values) {
            SweepRow row;
            row.axis = axis;
            row.value = value;
            row.seed = seed;
            try {
                RunConfig rc = apply_axis(base, axis, value);
                rc.set("run.seed", std::to_string(seed));
                TrainedRun run = run_training(rc);
                const EvalResult ev = evaluate(run.model, run.data.test);
                row.acc_s = ev.acc_s;
                row.acc_d = ev.acc_d;
                row.acc_all = ev.acc_all;
                row.retention = with_reference && ref_acc > 0.0
                                    ? ev.acc_all / ref_acc
                                    : std::numeric_limits<double>::quiet_NaN();
            } catch (const Error& e) {
                row.failed = true;
                row.error = e.what();
            }
            rows.push_back(row);
        }
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "axis,value,seed,acc_S,acc_D,acc_all,retention\n";
    for (const SweepRow& r : rows) {
        os << r.axis << "," << r.value << "," << r.seed << ",";
        if (r.failed)
            os << "nan,nan,nan,nan";
        else
            os << r.acc_s << "," << r.acc_d << "," << r.acc_all << "," << r.retention;
        os << "\n";
    }
    return os.str();
}

} // namespace htc
