#include "pfdet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace pfdet {

namespace fs = std::filesystem;

void AdamW::step(ag::ParamStore& store, const TrainabilitySpec& spec) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (const auto& name : spec.trainable_names) {
        auto p = store.get(name);
        if (p->grad.data.empty()) continue;
        auto& mi = m[name];
        auto& vi = v[name];
        if (mi.data.empty()) mi = Tensor::zeros(p->val.shape);
        if (vi.data.empty()) vi = Tensor::zeros(p->val.shape);
        for (size_t i = 0; i < p->val.data.size(); ++i) {
            const double g = p->grad.data[i];
            mi.data[i] = beta1 * mi.data[i] + (1.0 - beta1) * g;
            vi.data[i] = beta2 * vi.data[i] + (1.0 - beta2) * g * g;
            const double mhat = mi.data[i] / bc1;
            const double vhat = vi.data[i] / bc2;
            p->val.data[i] -=
                lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p->val.data[i]);
        }
    }
}

void apply_trainability(ag::ParamStore& store, const TrainabilitySpec& spec) {
    for (const auto& [name, value] : store.all())
        value->requires_grad = spec.is_trainable(name);
}

int64_t count_trainable_scalars(const ag::ParamStore& store, const TrainabilitySpec& spec) {
    int64_t n = 0;
    for (const auto& name : spec.trainable_names) n += store.get(name)->val.numel();
    return n;
}

MetricsReport evaluate(AssembledModel& model, const std::vector<SceneSample>& samples,
                       const EvalOptions& opts, BoxSet* dump_preds) {
    ForwardOptions fwd;
    fwd.training = false;
    fwd.lidar_only = opts.lidar_only;
    std::vector<std::vector<DetectionBox>> boxes(samples.size());
    if (opts.threads > 1) {
        ThreadPool pool(static_cast<unsigned>(opts.threads));
        for (size_t i = 0; i < samples.size(); ++i)
            pool.submit([&, i] { boxes[i] = forward_full(model, samples[i], fwd).boxes; });
        pool.wait();
    } else {
        for (size_t i = 0; i < samples.size(); ++i)
            boxes[i] = forward_full(model, samples[i], fwd).boxes;
    }
    BoxSet preds, gts;
    for (size_t i = 0; i < samples.size(); ++i) {
        for (const auto& b : boxes[i]) preds.push_back({samples[i].sample_id, b});
        for (const auto& g : samples[i].boxes) gts.push_back({samples[i].sample_id, g});
    }
    MetricsReport report = compute_map(preds, gts, default_iou_thresholds());
    const double diag = std::hypot(model.cfg.bev.height, model.cfg.bev.width);
    report.composite = compute_composite(report, diag);
    report.seed = model.seed;
    report.config_hash = model.config_hash;
    if (dump_preds) *dump_preds = std::move(preds);
    return report;
}

StageResult run_stage(AssembledModel& model, const StageSchedule& sched,
                      const std::vector<SceneSample>& train,
                      const std::vector<SceneSample>& val, uint64_t run_seed, int eval_threads) {
    sched.validate();
    const auto t0 = std::chrono::steady_clock::now();
    if (sched.load_from) {
        auto ckpt = load_checkpoint(*sched.load_from);
        load_into_params(model.store, ckpt);
    }
    auto spec = build_trainability(model.store, model.cfg, sched.trainability_mode);
    apply_trainability(model.store, spec);

    AdamW opt;
    opt.lr = sched.learning_rate;

    const bool lidar_only = sched.trainability_mode == TrainabilityMode::LidarOnly;
    ForwardOptions fwd;
    fwd.training = true;
    fwd.lidar_only = lidar_only;

    const uint64_t order_seed =
        fnv1a64(model.config_hash) ^ splitmix64(run_seed + 0x5eed * sched.stage_id);
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), size_t{0});
    for (int epoch = 0; epoch < sched.epochs; ++epoch) {
        auto rng = rng_for(order_seed, "epoch/" + std::to_string(epoch));
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t step = 0; step < order.size(); ++step) {
            model.store.zero_grads();
            ForwardResult res;
            try {
                res = forward_full(model, train[order[step]], fwd);
            } catch (const std::exception& e) {
                throw std::runtime_error("stage " + std::to_string(sched.stage_id) + " epoch " +
                                         std::to_string(epoch) + " step " +
                                         std::to_string(step) + ": " + e.what());
            }
            if (!std::isfinite(res.loss_value))
                throw std::runtime_error("NaN loss at stage " + std::to_string(sched.stage_id) +
                                         " epoch " + std::to_string(epoch) + " step " +
                                         std::to_string(step));
            ag::backward(res.loss);
            opt.step(model.store, spec);
        }
    }

    StageResult out;
    EvalOptions eval;
    eval.lidar_only = lidar_only;
    eval.threads = eval_threads;
    out.metrics = evaluate(model, val, eval);
    out.metrics.stage_id = sched.stage_id;
    out.metrics.seed = run_seed;
    out.checkpoint = snapshot_params(model.store);
    out.trainable_scalars = count_trainable_scalars(model.store, spec);
    out.total_scalars = model.store.total_scalars();
    out.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

namespace {

// Union merge; names present in both sides take the primary's value.
Checkpoint merge_checkpoints(const Checkpoint& primary, const Checkpoint& secondary) {
    Checkpoint merged = secondary;
    for (const auto& [name, tensor] : primary) merged[name] = tensor;
    return merged;
}

void write_metrics(const std::string& path, const MetricsReport& m) {
    std::ofstream os(path);
    os << m.to_json_text(2) << "\n";
}

struct StageIO {
    std::string ckpt;
    std::string metrics;
};

StageIO stage_paths(const std::string& out_dir, int stage) {
    return {out_dir + "/stage" + std::to_string(stage) + ".ckpt",
            out_dir + "/stage" + std::to_string(stage) + ".metrics.json"};
}

}  // namespace

StagedTrainResult run_staged_training(const RunConfig& rc, const Dataset& data,
                                      const std::string& out_dir, int eval_threads,
                                      const std::string& stage1_cache) {
    rc.validate();
    if (rc.schedule.size() != 3)
        throw ConfigError("run_staged_training expects a 3-stage schedule");
    fs::create_directories(out_dir);
    const auto t0 = std::chrono::steady_clock::now();
    const RunMode mode = parse_run_mode(rc.model.mode);
    const uint64_t seed = rc.data.seed;

    std::vector<SceneSample> train = data.train;
    if (rc.data.fraction < 1.0) {
        std::vector<SceneSample> all = train;
        all.insert(all.end(), data.val.begin(), data.val.end());
        auto sub = subsample_dataset(all, rc.data.fraction, seed);
        train.clear();
        for (auto& s : sub)
            if (s.split == Split::Train) train.push_back(s);
    }
    const std::vector<SceneSample>& val = data.val;

    StagedTrainResult result;

    // Stage 1: LiDAR stream + head on the baseline wiring. A cache lets
    // harnesses share the identical stage across modes with one seed.
    const ModelConfig s1cfg = derive_stage1_config(rc.model);
    const auto s1_paths = stage_paths(out_dir, 1);
    bool reused_stage1 = false;
    if (!stage1_cache.empty() && fs::exists(stage1_cache + ".ckpt") &&
        fs::exists(stage1_cache + ".metrics.json")) {
        fs::copy_file(stage1_cache + ".ckpt", s1_paths.ckpt,
                      fs::copy_options::overwrite_existing);
        fs::copy_file(stage1_cache + ".metrics.json", s1_paths.metrics,
                      fs::copy_options::overwrite_existing);
        std::ifstream is(s1_paths.metrics);
        std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        result.stage_metrics.push_back(MetricsReport::from_json_text(text));
        reused_stage1 = true;
    }
    if (!reused_stage1) {
        auto model = assemble_model(s1cfg, seed);
        StageSchedule s1 = rc.schedule[0];
        auto res = run_stage(*model, s1, train, val, seed, eval_threads);
        save_checkpoint(s1_paths.ckpt, res.checkpoint);
        write_metrics(s1_paths.metrics, res.metrics);
        result.stage_metrics.push_back(res.metrics);
        if (!stage1_cache.empty()) {
            fs::create_directories(fs::path(stage1_cache + ".ckpt").parent_path());
            fs::copy_file(s1_paths.ckpt, stage1_cache + ".ckpt",
                          fs::copy_options::overwrite_existing);
            fs::copy_file(s1_paths.metrics, stage1_cache + ".metrics.json",
                          fs::copy_options::overwrite_existing);
        }
    }

    // Stage 2: branch training from the stage-1 weights.
    const auto s2_paths = stage_paths(out_dir, 2);
    StageSchedule s2 = rc.schedule[1];
    if (!s2.load_from) s2.load_from = s1_paths.ckpt;
    if (mode == RunMode::Pf3det) {
        ModelConfig fm_cfg = rc.model;
        fm_cfg.mode = "pf3det_stage2_fm";
        fm_cfg.prompts = PromptConfig{};
        fm_cfg.freeze_pre_bev = false;
        ModelConfig prompt_cfg = rc.model;
        prompt_cfg.mode = "pf3det_stage2_prompt";
        prompt_cfg.foundation.image_encoder = ImageEncoderKind::None;
        prompt_cfg.foundation.point_encoder = PointEncoderKind::None;
        prompt_cfg.freeze_pre_bev = true;

        auto fm_model = assemble_model(fm_cfg, seed);
        auto fm_res = run_stage(*fm_model, s2, train, val, seed, eval_threads);
        auto prompt_model = assemble_model(prompt_cfg, seed);
        auto prompt_res = run_stage(*prompt_model, s2, train, val, seed, eval_threads);

        Checkpoint merged = merge_checkpoints(prompt_res.checkpoint, fm_res.checkpoint);
        save_checkpoint(s2_paths.ckpt, merged);
        MetricsReport m2 = prompt_res.metrics;  // report the prompted branch
        m2.stage_id = 2;
        write_metrics(s2_paths.metrics, m2);
        result.stage_metrics.push_back(m2);
    } else {
        auto model = assemble_model(rc.model, seed);
        auto res = run_stage(*model, s2, train, val, seed, eval_threads);
        save_checkpoint(s2_paths.ckpt, res.checkpoint);
        write_metrics(s2_paths.metrics, res.metrics);
        result.stage_metrics.push_back(res.metrics);
    }

    // Stage 3: joint fine-tune of the assembled mode at the lower rate.
    const auto s3_paths = stage_paths(out_dir, 3);
    StageSchedule s3 = rc.schedule[2];
    if (!s3.load_from) s3.load_from = s2_paths.ckpt;
    {
        auto model = assemble_model(rc.model, seed);
        auto res = run_stage(*model, s3, train, val, seed, eval_threads);
        save_checkpoint(s3_paths.ckpt, res.checkpoint);
        write_metrics(s3_paths.metrics, res.metrics);
        result.stage_metrics.push_back(res.metrics);
        result.trainable_scalars = res.trainable_scalars;
        result.total_scalars = res.total_scalars;
    }
    result.final_checkpoint = s3_paths.ckpt;
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace pfdet
