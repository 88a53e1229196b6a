#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "pfdet/train.hpp"
#include "testing.hpp"

using namespace pfdet;
using namespace pftest;
namespace fs = std::filesystem;
namespace ag = pfdet::ag;

namespace {

Dataset tiny_dataset() {
    Dataset ds;
    SceneSpec spec = tiny_scene_spec();
    ds.train = generate_dataset(spec, spec.train_scenes, Split::Train);
    ds.val = generate_dataset(spec, spec.val_scenes, Split::Val);
    return ds;
}

std::vector<StageSchedule> tiny_schedule() {
    return {
        {1, 1, 1e-4, TrainabilityMode::LidarOnly, std::nullopt},
        {2, 1, 1e-4, TrainabilityMode::BranchesParallel, std::nullopt},
        {3, 1, 1e-5, TrainabilityMode::Joint, std::nullopt},
    };
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("freeze isolation: frozen tensors are bit-identical after training") {
    Dataset ds = tiny_dataset();
    auto model = assemble_model(tiny_model_config(RunMode::PromptOnly), 7);
    auto spec = build_trainability(model->store, model->cfg, TrainabilityMode::Joint);
    apply_trainability(model->store, spec);

    Checkpoint before = snapshot_params(model->store);

    AdamW opt;
    opt.lr = 1e-3;
    ForwardOptions fwd;
    fwd.training = true;
    for (int step = 0; step < 12; ++step) {
        model->store.zero_grads();
        auto res = forward_full(*model, ds.train[step % ds.train.size()], fwd);
        ag::backward(res.loss);
        opt.step(model->store, spec);
    }

    double prompt_move = 0.0;
    for (const auto& [name, value] : model->store.all()) {
        if (spec.frozen_names.count(name)) {
            CHECK(value->val.data == before.at(name).data);
        }
        if (name == "prompt.level1") {
            for (size_t i = 0; i < value->val.data.size(); ++i) {
                const double d = value->val.data[i] - before.at(name).data[i];
                prompt_move += d * d;
            }
        }
    }
    CHECK(prompt_move > 0.0);
    // frozen parameters never accumulate gradients either
    CHECK(model->store.get("backbone.stage1.conv1.weight")->grad.data.empty());
}

TEST_CASE("safe start: zero prompts with identity align reproduce the baseline") {
    Dataset ds = tiny_dataset();
    auto baseline = assemble_model(tiny_model_config(RunMode::Baseline), 7);

    ModelConfig pcfg = tiny_model_config(RunMode::PromptOnly);
    pcfg.prompts.init = PromptInit::Zero;
    auto prompted = assemble_model(pcfg, 7);
    load_into_params(prompted->store, snapshot_params(baseline->store));

    ForwardOptions opts;
    opts.training = true;
    for (const auto& sample : ds.val) {
        auto a = forward_full(*baseline, sample, opts);
        auto b = forward_full(*prompted, sample, opts);
        CHECK(std::abs(a.loss_value - b.loss_value) <= 1e-6);
    }
}

TEST_CASE("run_stage: evaluation metrics carry stage metadata") {
    Dataset ds = tiny_dataset();
    auto model = assemble_model(derive_stage1_config(tiny_model_config(RunMode::Baseline)), 7);
    StageSchedule s1{1, 1, 1e-4, TrainabilityMode::LidarOnly, std::nullopt};
    auto res = run_stage(*model, s1, ds.train, ds.val, 7);
    CHECK(res.metrics.stage_id == 1);
    CHECK(res.metrics.seed == 7);
    CHECK(res.metrics.map >= 0.0);
    CHECK(res.metrics.map <= 1.0);
    CHECK(res.trainable_scalars > 0);
    CHECK(res.trainable_scalars < res.total_scalars);
    CHECK(res.checkpoint.size() == model->store.all().size());
}

TEST_CASE("staged training is deterministic and resumable bitwise") {
    Dataset ds = tiny_dataset();
    RunConfig rc;
    rc.model = tiny_model_config(RunMode::Pf3det);
    rc.model.foundation.image_encoder = ImageEncoderKind::None;  // cheap pf3det variant
    rc.data.spec = tiny_scene_spec();
    rc.data.seed = 7;
    rc.schedule = tiny_schedule();

    const std::string dir1 = (fs::temp_directory_path() / "pfdet_run1").string();
    const std::string dir2 = (fs::temp_directory_path() / "pfdet_run2").string();
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    auto r1 = run_staged_training(rc, ds, dir1);
    auto r2 = run_staged_training(rc, ds, dir2);
    CHECK(read_file(dir1 + "/stage3.ckpt") == read_file(dir2 + "/stage3.ckpt"));
    CHECK(read_file(dir1 + "/stage3.metrics.json") == read_file(dir2 + "/stage3.metrics.json"));

    // resume: rerun stage 3 alone from the saved stage-2 checkpoint
    auto model = assemble_model(rc.model, rc.data.seed);
    StageSchedule s3 = rc.schedule[2];
    s3.load_from = dir1 + "/stage2.ckpt";
    auto res = run_stage(*model, s3, ds.train, ds.val, rc.data.seed);
    const std::string resumed = (fs::temp_directory_path() / "pfdet_resumed.ckpt").string();
    save_checkpoint(resumed, res.checkpoint);
    CHECK(read_file(resumed) == read_file(dir1 + "/stage3.ckpt"));
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    fs::remove(resumed);
}

TEST_CASE("combined-mode stage 2 merges branches with prompted priority") {
    Dataset ds = tiny_dataset();
    RunConfig rc;
    rc.model = tiny_model_config(RunMode::Pf3det);
    rc.model.foundation.image_encoder = ImageEncoderKind::None;
    rc.model.foundation.point_encoder = PointEncoderKind::PointBertStub;
    rc.model.foundation.point_compress_channels = 4;
    rc.data.spec = tiny_scene_spec();
    rc.data.seed = 9;
    rc.schedule = tiny_schedule();
    const std::string dir = (fs::temp_directory_path() / "pfdet_merge").string();
    fs::remove_all(dir);
    run_staged_training(rc, ds, dir);

    auto s2 = load_checkpoint(dir + "/stage2.ckpt");
    // union of both branches
    CHECK(s2.count("prompt.level1") == 1);
    CHECK(s2.count("foundation.compress.weight") == 1);
    CHECK(s2.count("to_bev.point.weight") == 1);

    // shared post-BEV names came from the prompted run: rebuild that branch
    ModelConfig prompt_cfg = rc.model;
    prompt_cfg.mode = "pf3det_stage2_prompt";
    prompt_cfg.foundation.image_encoder = ImageEncoderKind::None;
    prompt_cfg.foundation.point_encoder = PointEncoderKind::None;
    prompt_cfg.freeze_pre_bev = true;
    auto prompt_model = assemble_model(prompt_cfg, rc.data.seed);
    StageSchedule s2s = rc.schedule[1];
    s2s.load_from = dir + "/stage1.ckpt";
    auto prompt_res = run_stage(*prompt_model, s2s, ds.train, ds.val, rc.data.seed);
    // compare through the f32 codec, like the merged checkpoint on disk
    const std::string rebuilt = (fs::temp_directory_path() / "pfdet_rebuilt.ckpt").string();
    save_checkpoint(rebuilt, prompt_res.checkpoint);
    auto rb = load_checkpoint(rebuilt);
    CHECK(s2.at("fusion.fuse.weight").data == rb.at("fusion.fuse.weight").data);
    CHECK(s2.at("head.conv.weight").data == rb.at("head.conv.weight").data);
    fs::remove(rebuilt);
    fs::remove_all(dir);
}

TEST_CASE("prompting mode trains under 35 percent of the desk model scalars") {
    auto model = assemble_model(desk_model_config(RunMode::PromptOnly), 7);
    auto spec = build_trainability(model->store, model->cfg, TrainabilityMode::Joint);
    const int64_t trainable = count_trainable_scalars(model->store, spec);
    const int64_t total = model->store.total_scalars();
    CHECK(trainable * 100 < 35 * total);

    auto pf = assemble_model(desk_model_config(RunMode::Pf3det), 7);
    auto pf_spec = build_trainability(pf->store, pf->cfg, TrainabilityMode::Joint);
    CHECK(count_trainable_scalars(pf->store, pf_spec) * 100 < 35 * pf->store.total_scalars());
}

TEST_CASE("a poisoned parameter surfaces as a non-finite loss naming the step") {
    Dataset ds = tiny_dataset();
    auto model = assemble_model(tiny_model_config(RunMode::Baseline), 7);
    model->store.get("head.heatmap.weight")->val.data[0] = 1e308;
    model->store.get("head.heatmap.weight")->val.data[1] = -1e308;
    StageSchedule s2{2, 1, 1e-4, TrainabilityMode::BranchesParallel, std::nullopt};
    CHECK_THROWS_WITH_AS(run_stage(*model, s2, ds.train, ds.val, 7),
                         doctest::Contains("stage 2"), std::runtime_error);
}

TEST_SUITE_END();
