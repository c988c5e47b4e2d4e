#include "htc/commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "htc/analysis.hpp"
#include "htc/runner.hpp"

namespace htc {

namespace {

namespace fs = std::filesystem;

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::trunc);
    HTC_CHECK(f.good(), io, "cannot open " + path + " for writing");
    f << content;
    HTC_CHECK(f.good(), io, "write failed for " + path);
}

// Creates the run directory and writes resolved_config before anything else.
std::string open_run_dir(const RunConfig& rc) {
    const std::string dir = run_dir(rc);
    std::error_code ec;
    fs::create_directories(dir, ec);
    HTC_CHECK(!ec, io, "cannot create run directory " + dir);
    write_file(dir + "/resolved_config", rc.resolved_text());
    return dir;
}

HtcModel load_model_for(const RunConfig& rc, const std::string& checkpoint_path, RunConfig& merged) {
    HTC_CHECK(!checkpoint_path.empty(), invalid_argument, "missing checkpoint path");
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    RunConfig from_ckpt = RunConfig::from_lines(ckpt.config);
    merged = merge_for_eval(rc, from_ckpt);
    HtcModel model = model_from_checkpoint(ckpt);
    return model;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

} // namespace

std::string run_dir(const RunConfig& rc) {
    return rc.get("run.out") + "/" + rc.get("run.id");
}

std::string cmd_fit_quantizer(const RunConfig& rc) {
    const std::string dir = open_run_dir(rc);
    Dataset ds = make_dataset(DataConfig::from_run_config(rc));
    std::vector<double> iter_errors;
    Codebook cb = fit_codebook_for(rc, ds.train, &iter_errors);

    Checkpoint ckpt;
    ckpt.config = rc.lines();
    ckpt.tensors.emplace_back("quant.codebook", cb.vectors);
    save_checkpoint(dir + "/codebook.hvc", ckpt);

    // quantization error over the training images, after freezing
    double err = 0.0;
    for (const QASample& s : ds.train) {
        Tensor f = extract_group_features(s.image, rc.get_int("quant.downsample"),
                                          rc.get_int("quant.groups"), rc.get_int("quant.group_dim"));
        err += quantize(f, cb).recon_error;
    }
    err /= static_cast<double>(ds.train.size());

    std::ostringstream os;
    os << "fit-quantizer: G=" << cb.groups << " K=" << cb.entries << " d_g=" << cb.group_dim
       << " mean_recon_error=" << err << " min_pairwise=" << cb.min_pairwise_l2() << " -> " << dir
       << "/codebook.hvc";
    return os.str();
}

std::string cmd_train(const RunConfig& rc) {
    const std::string dir = open_run_dir(rc);
    TrainedRun run = run_training(rc);
    write_file(dir + "/metrics.csv", metrics_csv(run.metrics));
    save_checkpoint(dir + "/checkpoint.hvc", model_to_checkpoint(run.model));
    const EvalResult ev = evaluate(run.model, run.data.test);

    std::ostringstream os;
    os << "train: steps=" << run.metrics.metrics.size()
       << " final_loss=" << run.metrics.metrics.back().loss << " test_acc_all=" << ev.acc_all
       << " (S=" << ev.acc_s << " D=" << ev.acc_d << ") -> " << dir << "/checkpoint.hvc";
    return os.str();
}

std::string cmd_eval(const RunConfig& rc, const std::string& checkpoint_path) {
    const std::string dir = open_run_dir(rc);
    RunConfig merged;
    HtcModel model = load_model_for(rc, checkpoint_path, merged);
    Dataset ds = make_dataset(DataConfig::from_run_config(merged));
    const EvalResult ev = evaluate(model, ds.test);

    std::ostringstream os;
    os << "task,top1,n\n";
    os << "S," << ev.acc_s << "," << ev.n_s << "\n";
    os << "D," << ev.acc_d << "," << ev.n_d << "\n";
    os << "all," << ev.acc_all << "," << (ev.n_s + ev.n_d) << "\n";
    write_file(dir + "/eval.csv", os.str());

    return "eval: acc_all=" + fmt(ev.acc_all) + " acc_S=" + fmt(ev.acc_s) +
           " acc_D=" + fmt(ev.acc_d) + " n=" + std::to_string(ev.n_s + ev.n_d) + " -> " + dir +
           "/eval.csv";
}

std::string cmd_probe(const RunConfig& rc, const std::string& checkpoint_path) {
    const std::string dir = open_run_dir(rc);
    RunConfig merged;
    HtcModel model = load_model_for(rc, checkpoint_path, merged);

    DataConfig dc = DataConfig::from_run_config(merged);
    const int n = merged.get_int("probe.samples");
    HTC_CHECK(n >= 8, config, "probe.samples too small");
    dc.n_train = 1;
    dc.n_test = n; // dedicated probe pool, disjoint seed stream
    dc.seed = Rng::mix(merged.get_u64("run.seed"), 0x9e0be);
    Dataset pool = make_dataset(dc);

    std::vector<std::vector<float>> z_feats, vd_feats, v_feats;
    std::vector<int> s_labels, d_labels;
    for (const QASample& s : pool.test) {
        RepSet reps = extract_representations(model, s);
        z_feats.push_back(reps.z_voco);
        if (reps.v_d_mean) vd_feats.push_back(*reps.v_d_mean);
        if (reps.v_mean) v_feats.push_back(*reps.v_mean);
        s_labels.push_back(s.scene.s_class);
        d_labels.push_back(detail_bin(s.scene.d_value, dc.n_d_bins));
    }
    std::vector<int> train_idx, test_idx;
    for (int i = 0; i < n; ++i) (i < n / 2 ? train_idx : test_idx).push_back(i);

    const int iters = merged.get_int("probe.iters");
    const float lr = static_cast<float>(merged.get_double("probe.lr"));
    std::ostringstream csv;
    csv << "representation,task,top1,n\n";
    auto probe_rep = [&](const std::string& name, const std::vector<std::vector<float>>& feats) {
        if (feats.empty()) return;
        const ProbeOutcome s =
            linear_probe(feats, s_labels, train_idx, test_idx, dc.n_s, iters, lr);
        const ProbeOutcome d =
            linear_probe(feats, d_labels, train_idx, test_idx, dc.n_d_bins, iters, lr);
        csv << name << ",S," << s.top1 << "," << s.n << "\n";
        csv << name << ",D," << d.top1 << "," << d.n << "\n";
    };
    probe_rep("z_voco", z_feats);
    probe_rep("v_d_mean", vd_feats);
    probe_rep("V_mean", v_feats);

    // permutation-label null on the hybrid representation
    const uint64_t pseed = Rng::mix(merged.get_u64("run.seed"), 0x5eed);
    const ProbeOutcome null_s = linear_probe(z_feats, shuffle_labels(s_labels, pseed), train_idx,
                                             test_idx, dc.n_s, iters, lr);
    const ProbeOutcome null_d = linear_probe(z_feats, shuffle_labels(d_labels, pseed + 1), train_idx,
                                             test_idx, dc.n_d_bins, iters, lr);
    csv << "shuffled_baseline,S," << null_s.top1 << "," << null_s.n << "\n";
    csv << "shuffled_baseline,D," << null_d.top1 << "," << null_d.n << "\n";

    write_file(dir + "/probe.csv", csv.str());
    return "probe: wrote " + dir + "/probe.csv (n=" + std::to_string(n) + ")";
}

std::string cmd_attn(const RunConfig& rc, const std::string& checkpoint_path) {
    const std::string dir = open_run_dir(rc);
    RunConfig merged;
    HtcModel model = load_model_for(rc, checkpoint_path, merged);

    DataConfig dc = DataConfig::from_run_config(merged);
    const int n = merged.get_int("attn.samples");
    dc.n_train = 1;
    dc.n_test = n;
    dc.seed = Rng::mix(merged.get_u64("run.seed"), 0xa77);
    Dataset pool = make_dataset(dc);

    AttnMassResult res = attn_mass(model, pool.test);
    std::ostringstream csv;
    csv << "sample_id";
    for (size_t j = 0; j < res.heat.front().size(); ++j) csv << ",pos_" << j;
    csv << "\n";
    for (size_t i = 0; i < res.heat.size(); ++i) {
        csv << i;
        for (float v : res.heat[i]) csv << "," << v;
        csv << "\n";
    }
    write_file(dir + "/attn.csv", csv.str());

    double am = 0.0, pm = 0.0;
    for (size_t i = 0; i < res.anchor_mean.size(); ++i) {
        am += res.anchor_mean[i];
        pm += res.patch_mean[i];
    }
    am /= static_cast<double>(res.anchor_mean.size());
    pm /= static_cast<double>(res.patch_mean.size());
    return "attn: anchor_mean=" + fmt(am) + " patch_mean=" + fmt(pm) +
           " frac_anchor_dominant=" + fmt(res.frac_anchor_dominant) + " -> " + dir + "/attn.csv";
}

std::string cmd_sweep(const RunConfig& rc, const std::string& axis) {
    const std::string dir = open_run_dir(rc);
    std::vector<std::string> values = split_csv(rc.get("sweep.values"));
    if (values.empty()) values = default_axis_values(axis);
    std::vector<uint64_t> seeds;
    for (const std::string& s : split_csv(rc.get("sweep.seeds")))
        seeds.push_back(std::strtoull(s.c_str(), nullptr, 10));
    HTC_CHECK(!seeds.empty(), config, "sweep.seeds is empty");

    const auto rows = run_sweep(rc, axis, values, seeds, rc.get_bool("sweep.reference"));
    write_file(dir + "/sweep.csv", sweep_csv(rows));

    int failures = 0;
    for (const auto& r : rows) failures += r.failed;
    return "sweep: axis=" + axis + " runs=" + std::to_string(rows.size()) +
           " failures=" + std::to_string(failures) + " -> " + dir + "/sweep.csv";
}

std::string cmd_mask_dump(const RunConfig& rc) {
    const std::string dir = open_run_dir(rc);
    LayoutSpec layout;
    layout.n_d = rc.get_int("layout.n_d");
    layout.n_v = rc.get_int("layout.n_v");
    layout.n_b = rc.get_int("layout.n_b");
    layout.n_w = rc.get_int("layout.n_w");
    layout.fusion = parse_fusion(rc.get("layout.fusion"));
    const AttentionMask mask = build_mask(layout, parse_topology(rc.get("layout.mask")));
    const std::string csv = mask_to_csv(mask);
    write_file(dir + "/mask.csv", csv);
    return csv;
}

std::string cmd_bench(const RunConfig& rc) {
    const std::string dir = open_run_dir(rc);
    LayoutSpec layout;
    layout.n_d = rc.get_int("layout.n_d");
    layout.n_v = rc.get_int("layout.n_v");
    layout.n_b = rc.get_int("layout.n_b");
    layout.n_w = rc.get_int("layout.n_w");
    layout.fusion = parse_fusion(rc.get("layout.fusion"));
    TransformerConfig tf;
    tf.d_model = rc.get_int("model.d_model");
    tf.n_heads = rc.get_int("model.n_heads");
    tf.n_layers = rc.get_int("model.n_layers");
    tf.d_ff = rc.get_int("model.d_ff");
    tf.vocab_size = 10;

    const AttnOpCounts hy = attention_flop_count(layout, tf, parse_topology(rc.get("layout.mask")));

    // uncompressed vs compressed dense accounting: (n_v + L)^2 against
    // (n_b + L)^2, exact integers
    const uint64_t L = static_cast<uint64_t>(layout.n_w);
    const uint64_t d = static_cast<uint64_t>(tf.d_model);
    const uint64_t t_full = static_cast<uint64_t>(layout.n_v) + L;
    const uint64_t t_comp = static_cast<uint64_t>(layout.n_b) + L;
    const uint64_t dense_full = 2 * t_full * t_full * d;
    const uint64_t dense_comp = 2 * t_comp * t_comp * d;
    const bool exact = dense_comp != 0 && dense_full % dense_comp == 0;
    const double ratio = static_cast<double>(dense_full) / static_cast<double>(dense_comp);

    std::ostringstream os;
    os << "bench: layout n_d=" << layout.n_d << " n_v=" << layout.n_v << " n_b=" << layout.n_b
       << " n_w=" << layout.n_w << " d_model=" << tf.d_model << "\n";
    os << "per-layer dense madds: qk=" << hy.dense_qk << " av=" << hy.dense_av
       << " total=" << hy.dense_total << "\n";
    os << "per-layer sparse madds: qk=" << hy.sparse_qk << " av=" << hy.sparse_av
       << " total=" << hy.sparse_total << "\n";
    os << "sparse by region: visual=" << hy.sparse_visual << " voco=" << hy.sparse_voco
       << " text=" << hy.sparse_text << "\n";
    os << "dense count uncompressed (n_v+L)^2*2d = " << dense_full << "\n";
    os << "dense count compressed (n_b+L)^2*2d = " << dense_comp << "\n";
    os << "speedup_ratio = " << ratio;
    if (exact) os << " (exact " << dense_full / dense_comp << ")";
    os << "\n";

    // local timing of a desk-scale forward when the layout is realizable
    const int grid = rc.get_int("data.image_size") / std::max(1, rc.get_int("enc.patch_size"));
    if (layout.n_v <= grid * grid) {
        RunConfig rc2 = rc;
        DataConfig dc = DataConfig::from_run_config(rc2);
        // just enough samples for a legal codebook fit
        dc.n_train = std::max(32, rc2.get_int("quant.entries"));
        dc.n_test = 1;
        Dataset ds = make_dataset(dc);
        HtcModel model = build_model(rc2, ds.train);
        SampleInput in = model.prepare(ds.test[0].image, {dc.task_token(kTaskS)});
        LayoutSpec l1 = model.spec.layout.with_text_len(1);
        (void)model.forward_single(in, l1); // warmup
        const int reps = 50;
        const auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < reps; ++i) (void)model.forward_single(in, l1);
        const auto t1 = std::chrono::steady_clock::now();
        const double us =
            std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count() /
            static_cast<double>(reps);
        os << "forward_us (desk scale, batch 1) = " << us << "\n";
    }

    const std::string report = os.str();
    write_file(dir + "/bench.txt", report);
    return report;
}

std::string cmd_data_stats(const RunConfig& rc) {
    const std::string dir = open_run_dir(rc);
    const DataConfig dc = DataConfig::from_run_config(rc);
    Dataset ds = make_dataset(dc);

    std::vector<int> class_counts(static_cast<size_t>(dc.n_s), 0);
    int task_s = 0;
    double sum_s = 0.0, sum_d = 0.0, sum_ss = 0.0, sum_dd = 0.0, sum_sd = 0.0;
    for (const QASample& s : ds.train) {
        ++class_counts[static_cast<size_t>(s.scene.s_class)];
        task_s += s.task == kTaskS;
        const double sc = s.scene.s_class, dv = s.scene.d_value;
        sum_s += sc;
        sum_d += dv;
        sum_ss += sc * sc;
        sum_dd += dv * dv;
        sum_sd += sc * dv;
    }
    const double n = static_cast<double>(ds.train.size());
    const double cov = sum_sd / n - (sum_s / n) * (sum_d / n);
    const double vs = sum_ss / n - (sum_s / n) * (sum_s / n);
    const double vd = sum_dd / n - (sum_d / n) * (sum_d / n);
    const double corr = vs > 0 && vd > 0 ? cov / std::sqrt(vs * vd) : 0.0;

    std::set<uint32_t> train_hashes;
    for (const QASample& s : ds.train)
        train_hashes.insert(crc32(reinterpret_cast<const uint8_t*>(s.image.ptr()),
                                  static_cast<size_t>(s.image.numel()) * sizeof(float)));
    int overlaps = 0;
    for (const QASample& s : ds.test)
        overlaps += train_hashes.count(crc32(reinterpret_cast<const uint8_t*>(s.image.ptr()),
                                             static_cast<size_t>(s.image.numel()) * sizeof(float)));

    std::ostringstream os;
    os << "data-stats: n_train=" << ds.train.size() << " n_test=" << ds.test.size() << "\n";
    os << "class counts:";
    for (int c : class_counts) os << " " << c;
    os << "\n";
    os << "task balance: S=" << task_s << " D=" << (ds.train.size() - task_s) << "\n";
    os << "corr(s_class, d_value) = " << corr << "\n";
    os << "train/test image hash overlaps = " << overlaps << "\n";
    const std::string report = os.str();
    write_file(dir + "/data_stats.txt", report);
    return report;
}

} // namespace htc
