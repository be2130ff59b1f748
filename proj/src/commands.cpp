#include "svp/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "svp/gradcheck.hpp"
#include "svp/imageio.hpp"
#include "svp/metrics.hpp"
#include "svp/models_autoreg.hpp"
#include "svp/models_ssm.hpp"

namespace fs = std::filesystem;

namespace svp {

namespace {

// ---------------------------------------------------------------------------
// model factory
// ---------------------------------------------------------------------------

struct SvgWrap : AnyModel {
    SvgModel m;
    SvgWrap(SvgModel mm) : m(std::move(mm)) {}
    ParamStore& params() override { return m.params(); }
    std::string kind() const override { return "svg"; }
    LossBreakdown train_loss(const LabeledSequence& s, bool, RngStream& n) override {
        return m.sequence_loss(s.frames, n);
    }
    RolloutResult rollout(const LabeledSequence& s, int64_t k, int64_t h,
                          RngStream& n, bool pe) const override {
        return m.rollout(s.frames, k, h, n, pe);
    }
};

struct SlampWrap : AnyModel {
    SlampModel m;
    SlampWrap(SlampModel mm) : m(std::move(mm)) {}
    ParamStore& params() override { return m.params(); }
    std::string kind() const override { return "slamp"; }
    LossBreakdown train_loss(const LabeledSequence& s, bool, RngStream& n) override {
        return m.sequence_loss(s.frames, n);
    }
    RolloutResult rollout(const LabeledSequence& s, int64_t k, int64_t h,
                          RngStream& n, bool pe) const override {
        return m.rollout(s.frames, k, h, n, pe);
    }
};

struct Slamp3dWrap : AnyModel {
    Slamp3dModel m;
    std::string kind_;
    Slamp3dWrap(Slamp3dModel mm, std::string kind) : m(std::move(mm)), kind_(kind) {}
    ParamStore& params() override { return m.params(); }
    std::string kind() const override { return kind_; }
    LossBreakdown train_loss(const LabeledSequence& s, bool, RngStream& n) override {
        return m.sequence_loss(s.frames, n);
    }
    RolloutResult rollout(const LabeledSequence& s, int64_t k, int64_t h,
                          RngStream& n, bool pe) const override {
        return m.rollout(s.frames, k, h, n, pe);
    }
};

struct SrvpWrap : AnyModel {
    SrvpModel m;
    std::string kind_;
    SrvpWrap(SrvpModel mm, std::string kind) : m(std::move(mm)), kind_(kind) {}
    ParamStore& params() override { return m.params(); }
    std::string kind() const override { return kind_; }
    LossBreakdown train_loss(const LabeledSequence& s, bool, RngStream& n) override {
        return m.sequence_loss(s.frames, n);
    }
    RolloutResult rollout(const LabeledSequence& s, int64_t k, int64_t h,
                          RngStream& n, bool pe) const override {
        return m.rollout(s.frames, k, h, n, pe);
    }
};

struct BevWrap : AnyModel {
    StretchBevModel m;
    std::string kind_;
    BevWrap(StretchBevModel mm, std::string kind) : m(std::move(mm)), kind_(kind) {}
    ParamStore& params() override { return m.params(); }
    std::string kind() const override { return kind_; }
    LossBreakdown train_loss(const LabeledSequence& s, bool pretrain,
                             RngStream& n) override {
        return m.sequence_loss(s, pretrain, n);
    }
    RolloutResult rollout(const LabeledSequence& s, int64_t k, int64_t h,
                          RngStream& n, bool pe) const override {
        return m.rollout(s, k, h, n, pe);
    }
};

}  // namespace

std::unique_ptr<AnyModel> AnyModel::create(const RunConfig& cfg, uint64_t seed) {
    const std::string& kind = cfg.model;
    if (kind == "svg") {
        SvgModel::Config c;
        c.height = cfg.height;
        c.width = cfg.width;
        c.channels = 1;
        c.enc_base = static_cast<int>(cfg.enc_base);
        c.feat = static_cast<int>(cfg.feat);
        c.hidden = static_cast<int>(cfg.hidden);
        c.z_dim = static_cast<int>(cfg.z_dim);
        c.beta = cfg.beta;
        c.k = static_cast<int>(cfg.k);
        return std::make_unique<SvgWrap>(SvgModel(c, seed));
    }
    if (kind == "slamp") {
        SlampModel::Config c;
        c.height = cfg.height;
        c.width = cfg.width;
        c.channels = 1;
        c.enc_base = static_cast<int>(cfg.enc_base);
        c.feat = static_cast<int>(cfg.feat);
        c.hidden = static_cast<int>(cfg.hidden);
        c.zp_dim = static_cast<int>(cfg.z_dim);
        c.zf_dim = static_cast<int>(cfg.z_motion_dim);
        c.beta = cfg.beta;
        c.k = static_cast<int>(cfg.k);
        return std::make_unique<SlampWrap>(SlampModel(c, seed));
    }
    if (kind.rfind("slamp3d-", 0) == 0) {
        Slamp3dModel::Config c;
        c.height = cfg.height;
        c.width = cfg.width;
        c.channels = 1;
        c.enc_base = static_cast<int>(cfg.enc_base);
        c.cell_ch = static_cast<int>(cfg.cell_ch);
        c.head_ch = static_cast<int>(cfg.head_ch);
        c.zs_ch = static_cast<int>(cfg.z_dim) / 2 > 0 ? static_cast<int>(cfg.z_dim) / 2 : 1;
        c.zs_ch = static_cast<int>(std::max<int64_t>(1, cfg.z_dim / 2));
        c.zd_ch = static_cast<int>(std::max<int64_t>(1, cfg.z_motion_dim / 2));
        c.beta = cfg.beta;
        c.k = static_cast<int>(cfg.k);
        c.variant = slamp3d_variant_from_string(kind.substr(8));
        EgoWorldConfig wc;
        wc.height = cfg.height;
        wc.width = cfg.width;
        return std::make_unique<Slamp3dWrap>(
            Slamp3dModel(c, seed, egoworld_intrinsics(wc)), kind);
    }
    if (kind == "srvp" || kind.rfind("srvp++-", 0) == 0) {
        SrvpModel::Config c;
        c.height = cfg.height;
        c.width = cfg.width;
        c.channels = 1;
        c.enc_base = static_cast<int>(cfg.enc_base);
        c.feat = static_cast<int>(cfg.feat);
        c.hidden = static_cast<int>(cfg.hidden);
        c.y_dim = static_cast<int>(cfg.y_dim);
        c.z_dim = static_cast<int>(cfg.z_dim);
        c.content_dim = static_cast<int>(cfg.content_dim);
        c.beta = cfg.beta;
        c.delta_t = cfg.delta_t;
        c.euler_substeps = static_cast<int>(cfg.euler_substeps);
        c.k = static_cast<int>(cfg.k);
        c.variant = kind == "srvp" ? SrvpVariant::Plain
                                   : srvp_variant_from_string(kind.substr(7));
        return std::make_unique<SrvpWrap>(SrvpModel(c, seed), kind);
    }
    if (kind.rfind("stretchbev", 0) == 0) {
        StretchBevModel::Config c;
        c.grid = cfg.grid;
        c.state_ch = 8;
        c.enc_base = static_cast<int>(cfg.enc_base);
        c.label_base = static_cast<int>(cfg.label_base);
        c.y_ch = static_cast<int>(cfg.y_ch);
        c.z_ch = static_cast<int>(cfg.z_ch);
        c.gru_ch = static_cast<int>(cfg.gru_ch);
        c.hidden_ch = static_cast<int>(cfg.hidden_ch);
        c.beta = cfg.beta;
        c.delta_t = cfg.delta_t;
        c.euler_substeps = static_cast<int>(cfg.euler_substeps);
        c.k = static_cast<int>(cfg.k);
        c.variant = kind == "stretchbev"
                        ? StretchBevVariant::Base
                        : stretchbev_variant_from_string(kind.substr(11));
        return std::make_unique<BevWrap>(StretchBevModel(c, seed), kind);
    }
    throw ConfigError("unknown model kind: " + kind);
}

LabeledSequence generate_sequence(const RunConfig& cfg, uint64_t global_seed,
                                  int64_t index) {
    int64_t t = cfg.k + std::max(cfg.train_horizon, cfg.eval_horizon);
    // one independent stream per sequence, keyed by the dataset seed
    uint64_t seq_seed = RngStream(global_seed, "dataset/" + std::to_string(index)).next_u64();
    if (cfg.world == "sprites") {
        SpriteWorldConfig wc;
        wc.height = cfg.height;
        wc.width = cfg.width;
        wc.sprite_count = static_cast<int>(cfg.sprite_count);
        wc.sprite_size = cfg.sprite_size;
        wc.speed_min = cfg.speed_min;
        wc.speed_max = cfg.speed_max;
        wc.t = t;
        return gen_sprites(wc, seq_seed);
    }
    if (cfg.world == "egoworld") {
        EgoWorldConfig wc;
        wc.height = cfg.height;
        wc.width = cfg.width;
        wc.t = t;
        return gen_egoworld(wc, seq_seed);
    }
    BEVWorldConfig wc;
    wc.grid = cfg.grid;
    wc.agent_count = static_cast<int>(cfg.agent_count);
    wc.turn_prob = cfg.turn_prob;
    wc.state_noise = cfg.state_noise;
    wc.state_atten = cfg.state_atten;
    wc.t = t;
    return gen_bevworld(wc, seq_seed);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    DatasetManifest m;
    m.world = cfg.world;
    m.sequence_count = cfg.seq_count;
    m.t = cfg.k + std::max(cfg.train_horizon, cfg.eval_horizon);
    m.seed = cfg.seed;
    m.config_hash = config_hash(cfg);
    m.fields = world_fields(cfg.world);
    LabeledSequence first;
    for (int64_t i = 0; i < cfg.seq_count; ++i) {
        LabeledSequence seq = generate_sequence(cfg, cfg.seed, i);
        if (i == 0) m.frame_shape = seq.frames[0].shape();
        write_sequence_file(out_dir + "/" + sequence_filename(i), seq, cfg.world);
    }
    write_manifest(out_dir, m);
    std::ofstream cf(out_dir + "/config.txt");
    cf << canonical_text(cfg);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

namespace {

std::vector<LabeledSequence> load_dataset(const std::string& dir,
                                          const DatasetManifest& m) {
    std::vector<LabeledSequence> out;
    for (int64_t i = 0; i < m.sequence_count; ++i)
        out.push_back(read_sequence_file(dir + "/" + sequence_filename(i), m.world));
    return out;
}

LabeledSequence head_of(const LabeledSequence& seq, int64_t t) {
    auto take = [t](const std::vector<Tensor>& v) {
        return std::vector<Tensor>(v.begin(),
                                   v.begin() + std::min<int64_t>(t, v.size()));
    };
    LabeledSequence out;
    out.frames = take(seq.frames);
    out.seg = take(seq.seg);
    out.instance_ids = take(seq.instance_ids);
    out.centers = take(seq.centers);
    out.offsets = take(seq.offsets);
    out.future_flow = take(seq.future_flow);
    out.depth = take(seq.depth);
    out.poses = take(seq.poses);
    out.residual_flow = take(seq.residual_flow);
    out.fg_mask = take(seq.fg_mask);
    return out;
}

}  // namespace

int cmd_train(const RunConfig& cfg, const std::string& data_dir,
              const std::string& out_dir) {
    DatasetManifest manifest = read_manifest(data_dir);
    if (manifest.world != cfg.world)
        throw ConfigError("train: dataset world '" + manifest.world +
                          "' does not match config world '" + cfg.world + "'");
    auto data = load_dataset(data_dir, manifest);
    fs::create_directories(out_dir);

    auto model = AnyModel::create(cfg, cfg.seed);
    AdamConfig ac;
    ac.lr = cfg.lr;
    AdamState opt(model->params(), ac);

    RngStream data_rng(cfg.seed, "train.data");
    std::ofstream trace(out_dir + "/loss_trace.csv");
    if (!trace) throw IoError("cannot write loss trace in " + out_dir);

    int64_t total_steps = cfg.pretrain_steps + cfg.steps;
    bool wrote_header = false;
    for (int64_t step = 0; step < total_steps; ++step) {
        bool pretrain = step < cfg.pretrain_steps;
        if (cfg.pretrain_steps > 0 && step == cfg.pretrain_steps) {
            // fine-tune: the pre-trained temporal dynamics slow down while
            // the supervised decoding keeps learning at the base rate
            for (const char* dyn : {"y1.", "posterior.", "prior.", "residual"})
                opt.set_lr_override(dyn, cfg.lr_finetune);
        }

        int64_t idx = data_rng.uniform_int(0, manifest.sequence_count - 1);
        LabeledSequence seq = head_of(data[idx], cfg.k + cfg.train_horizon);
        RngStream noise(cfg.seed, "train.noise/" + std::to_string(step));
        LossBreakdown b;
        try {
            b = model->train_loss(seq, pretrain, noise);
            auto grads = gradients(b.total, model->params());
            opt.step(model->params(), grads);
        } catch (const NumericError& e) {
            std::cerr << "numerical abort at step " << step << ": " << e.what()
                      << "\n";
            return kExitNumeric;
        }

        if (!wrote_header) {
            trace << "step,total";
            for (const auto& [k, v] : b.terms) trace << "," << k;
            trace << "\n";
            wrote_header = true;
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", b.total.item());
        trace << step << "," << buf;
        for (const auto& [k, v] : b.terms) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            trace << "," << buf;
        }
        trace << "\n";

        if ((step + 1) % cfg.checkpoint_every == 0 && step + 1 < total_steps) {
            save_checkpoint(out_dir + "/ckpt_" + std::to_string(step + 1) + ".bin",
                            model->params(), cfg.model, &opt);
        }
    }
    save_checkpoint(out_dir + "/checkpoint.bin", model->params(), cfg.model, &opt);
    std::ofstream cf(out_dir + "/config.txt");
    cf << canonical_text(cfg);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

namespace {

Tensor clamp01(const Tensor& t) {
    Tensor r = t.detach();
    for (int64_t i = 0; i < r.size(); ++i)
        r.data()[i] = std::clamp(r.data()[i], 0.0, 1.0);
    return r;
}

std::vector<Tensor> seg_from_ids(const std::vector<Tensor>& ids) {
    std::vector<Tensor> out;
    for (const auto& m : ids) {
        Tensor s(m.shape());
        for (int64_t i = 0; i < m.size(); ++i) s.data()[i] = m.data()[i] > 0 ? 1 : 0;
        out.push_back(s);
    }
    return out;
}

}  // namespace

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& data_dir, const std::string& out_dir,
             int64_t horizon_override) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    if (!ckpt.model_kind.empty() && ckpt.model_kind != cfg.model) {
        std::cerr << "checkpoint was trained as '" << ckpt.model_kind
                  << "' but config requests '" << cfg.model << "'\n";
        return kExitMismatch;
    }
    auto model = AnyModel::create(cfg, cfg.seed);
    load_into(model->params(), ckpt);

    DatasetManifest manifest = read_manifest(data_dir);
    if (manifest.world != cfg.world) {
        std::cerr << "dataset world does not match the config\n";
        return kExitMismatch;
    }
    auto data = load_dataset(data_dir, manifest);
    fs::create_directories(out_dir);

    int64_t horizon = horizon_override > 0 ? horizon_override : cfg.eval_horizon;
    check(manifest.t >= cfg.k + horizon, "eval: dataset sequences are too short");
    bool is_bev = cfg.world == "bevworld";
    bool is_3d = cfg.model.rfind("slamp3d", 0) == 0;

    MetricAccumulator acc;
    for (int64_t s = 0; s < manifest.sequence_count; ++s) {
        const LabeledSequence& seq = data[s];
        std::vector<Tensor> gt(seq.frames.begin() + cfg.k,
                               seq.frames.begin() + cfg.k + horizon);

        std::vector<RolloutResult> rollouts;
        std::vector<std::vector<Tensor>> sample_frames;
        for (int64_t i = 0; i < cfg.n_samples; ++i) {
            RngStream rs(cfg.seed, "eval/" + std::to_string(s) + "/" + std::to_string(i));
            rollouts.push_back(model->rollout(seq, cfg.k, horizon, rs));
            std::vector<Tensor> clamped;
            for (const auto& f : rollouts.back().predictions)
                clamped.push_back(clamp01(f));
            sample_frames.push_back(std::move(clamped));
        }

        auto psnr_metric = [](const Tensor& a, const Tensor& b) { return psnr(a, b); };
        auto best = best_of_n(sample_frames, gt, psnr_metric, true);
        const auto& bf = sample_frames[best.index];
        const auto& br = rollouts[best.index];
        for (int64_t t = 0; t < horizon; ++t) {
            acc.add("psnr", s, t, psnr(bf[t], gt[t]));
            acc.add("ssim", s, t, ssim(bf[t], gt[t]));
        }

        if (is_3d && !seq.depth.empty()) {
            Tensor ones(seq.depth[0].shape(), 1.0);
            for (int64_t t = 0; t < horizon; ++t) {
                auto dm = depth_metrics(br.depths[t], seq.depth[cfg.k + t], ones);
                acc.add("abs_rel", s, t, dm.abs_rel);
                acc.add("sq_rel", s, t, dm.sq_rel);
                acc.add("rmse", s, t, dm.rmse);
                acc.add("rmse_log", s, t, dm.rmse_log);
                acc.add("delta_1.25", s, t, dm.delta1);
                acc.add("delta_1.25^2", s, t, dm.delta2);
                acc.add("delta_1.25^3", s, t, dm.delta3);
            }
        }
        if (!seq.fg_mask.empty() && !is_bev) {
            std::vector<Tensor> masks(seq.fg_mask.begin() + cfg.k,
                                      seq.fg_mask.begin() + cfg.k + horizon);
            auto fgbg = fg_bg_eval(bf, gt, masks,
                                   [](const Tensor& a, const Tensor& b) {
                                       return psnr(a, b);
                                   });
            for (int64_t t = 0; t < horizon; ++t) {
                acc.add("psnr_fg", s, t, fgbg.fg[t]);
                acc.add("psnr_bg", s, t, fgbg.bg[t]);
            }
        }

        if (is_bev) {
            std::vector<Tensor> gt_ids(seq.instance_ids.begin() + cfg.k,
                                       seq.instance_ids.begin() + cfg.k + horizon);
            std::vector<Tensor> gt_seg(seq.seg.begin() + cfg.k,
                                       seq.seg.begin() + cfg.k + horizon);
            // the best-of-N selector for instance metrics is VPQ itself
            double best_vpq = -1;
            size_t best_i = 0;
            std::vector<double> vpq_full(cfg.n_samples);
            for (int64_t i = 0; i < cfg.n_samples; ++i) {
                vpq_full[i] = vpq(rollouts[i].instance_maps, gt_ids);
                if (vpq_full[i] > best_vpq) {
                    best_vpq = vpq_full[i];
                    best_i = i;
                }
            }
            int64_t g = cfg.grid;
            acc.add("vpq_far", s, -1, best_vpq);
            acc.add("vpq_near", s, -1,
                    vpq_region(rollouts[best_i].instance_maps, gt_ids, g / 4, g / 4,
                               g / 2, g / 2));
            auto pred_seg = seg_from_ids(rollouts[best_i].instance_maps);
            for (int64_t t = 0; t < horizon; ++t)
                acc.add("iou", s, t, iou(pred_seg[t], gt_seg[t]));

            // diversity: generalized energy distance with 1 - VPQ
            auto dist_gt = [&](size_t i) { return 1.0 - vpq_full[i]; };
            auto dist_pair = [&](size_t i, size_t j) {
                return 1.0 - vpq(rollouts[i].instance_maps,
                                 rollouts[j].instance_maps);
            };
            if (cfg.n_samples >= 2)
                acc.add("ged_far", s, -1,
                        ged(cfg.n_samples, dist_gt, dist_pair));
        }
    }

    acc.write_per_frame_csv(out_dir + "/per_frame.csv");
    acc.write_summary_csv(out_dir + "/summary.csv");
    return kExitOk;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

int cmd_sample(const RunConfig& cfg, const std::string& checkpoint_path,
               const std::string& data_dir, const std::string& out_dir,
               int64_t horizon_override) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    if (!ckpt.model_kind.empty() && ckpt.model_kind != cfg.model) {
        std::cerr << "checkpoint/model kind mismatch\n";
        return kExitMismatch;
    }
    auto model = AnyModel::create(cfg, cfg.seed);
    load_into(model->params(), ckpt);

    DatasetManifest manifest = read_manifest(data_dir);
    auto seq = read_sequence_file(data_dir + "/" + sequence_filename(0),
                                  manifest.world);
    fs::create_directories(out_dir);
    int64_t horizon = horizon_override > 0 ? horizon_override : cfg.eval_horizon;

    for (int64_t i = 0; i < cfg.n_samples; ++i) {
        RngStream rs(cfg.seed, "sample/" + std::to_string(i));
        auto r = model->rollout(seq, cfg.k, horizon, rs);
        std::string stem = out_dir + "/sample_" + std::to_string(i);
        std::ofstream os(stem + ".bin", std::ios::binary);
        write_tensor_record(os, stack_time(r.predictions));
        write_pgm(stem + ".pgm", tile_frames(r.predictions));
        if (!r.flows.empty())
            write_pgm(stem + "_flow.pgm", tile_frames(r.flows), -3.0, 3.0);
        if (!r.depths.empty())
            write_pgm(stem + "_depth.pgm", tile_frames(r.depths), 1.0, 50.0);
        if (!r.instance_maps.empty())
            for (size_t t = 0; t < r.instance_maps.size(); ++t)
                write_instance_ppm(stem + "_ids_" + std::to_string(t) + ".ppm",
                                   r.instance_maps[t]);
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck() {
    bool all_ok = true;
    auto reports = run_gradchecks();
    for (const auto& r : reports) {
        std::printf("%-28s worst rel err %.3e  %s\n", r.name.c_str(),
                    r.worst_rel_err, r.pass ? "PASS" : "FAIL");
        all_ok = all_ok && r.pass;
    }
    std::printf("%zu checks, %s\n", reports.size(), all_ok ? "all passed" : "FAILURES");
    return all_ok ? kExitOk : kExitNumeric;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

namespace {

// renders the total-loss column of a trace CSV as a polyline
void plot_loss_curve(const std::string& csv_path, const std::string& out_path) {
    std::ifstream is(csv_path);
    if (!is) throw IoError("cannot open " + csv_path);
    std::string line;
    std::getline(is, line);  // header
    std::vector<double> totals;
    while (std::getline(is, line)) {
        auto c1 = line.find(',');
        if (c1 == std::string::npos) continue;
        auto c2 = line.find(',', c1 + 1);
        totals.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
    }
    check(!totals.empty(), "plot: no rows in " + csv_path);

    int64_t W = 640, H = 320;
    Tensor img({H, W}, 1.0);
    double lo = *std::min_element(totals.begin(), totals.end());
    double hi = *std::max_element(totals.begin(), totals.end());
    if (hi <= lo) hi = lo + 1;
    auto put = [&](int64_t x, int64_t y) {
        if (x >= 0 && x < W && y >= 0 && y < H) img.data()[y * W + x] = 0.0;
    };
    int64_t prev_y = -1;
    for (int64_t x = 0; x < W; ++x) {
        size_t i = static_cast<size_t>(double(x) / W * (totals.size() - 1) + 0.5);
        int64_t y = H - 1 - static_cast<int64_t>((totals[i] - lo) / (hi - lo) * (H - 1));
        if (prev_y >= 0) {
            int64_t a = std::min(prev_y, y), b = std::max(prev_y, y);
            for (int64_t yy = a; yy <= b; ++yy) put(x, yy);
        } else {
            put(x, y);
        }
        prev_y = y;
    }
    write_pgm(out_path, img);
}

}  // namespace

int cmd_plot(const std::string& input_path, const std::string& out_dir) {
    fs::create_directories(out_dir);
    fs::path in(input_path);
    if (in.extension() == ".csv") {
        plot_loss_curve(input_path, out_dir + "/" + in.stem().string() + ".pgm");
        return kExitOk;
    }
    if (fs::is_directory(in) && fs::exists(in / "manifest.txt")) {
        // first sequence of a dataset as a tiled strip
        auto m = read_manifest(input_path);
        auto seq = read_sequence_file((in / sequence_filename(0)).string(), m.world);
        write_pgm(out_dir + "/sequence0.pgm", tile_frames(seq.frames));
        return kExitOk;
    }
    if (in.extension() == ".bin") {
        std::ifstream is(input_path, std::ios::binary);
        Tensor stacked = read_tensor_record(is);
        write_pgm(out_dir + "/" + in.stem().string() + ".pgm",
                  tile_frames(unstack_time(stacked)));
        return kExitOk;
    }
    throw ConfigError("plot: don't know how to render " + input_path);
}

}  // namespace svp
