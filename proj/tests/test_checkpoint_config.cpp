#include "doctest.h"

#include <filesystem>

#include "pfdet/checkpoint.hpp"
#include "pfdet/model.hpp"

using namespace pfdet;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("checkpoint_config");

TEST_CASE("tensor files round-trip through the f32 codec") {
    Tensor t({2, 3}, {1.0, -2.5, 0.125, 0.0009765625, 3.25, -0.0625});
    const std::string path = (fs::temp_directory_path() / "pfdet_t.bin").string();
    save_tensor_file(path, t);
    Tensor u = load_tensor_file(path);
    CHECK(u.shape == t.shape);
    CHECK(u.data == t.data);  // exactly representable values survive f32
    fs::remove(path);
}

TEST_CASE("checkpoints save and load by canonical name") {
    auto model = assemble_model(desk_model_config(RunMode::Pf3det), 7);
    const std::string path = (fs::temp_directory_path() / "pfdet_c.ckpt").string();
    save_checkpoint(path, snapshot_params(model->store));
    auto ckpt = load_checkpoint(path);
    CHECK(ckpt.size() == model->store.all().size());
    CHECK(ckpt.count("backbone.stage1.conv1.weight") == 1);
    CHECK(ckpt.count("prompt.level1") == 1);
    CHECK(ckpt.count("prompt.level2") == 1);
    CHECK(ckpt.count("fusion.branch1.prompt.weight") == 1);
    CHECK(ckpt.count("align.weight") == 1);
    CHECK(ckpt.count("foundation.image.proj.weight") == 1);
    fs::remove(path);
}

TEST_CASE("partial load reports missing and unexpected names; strict load throws") {
    auto baseline = assemble_model(desk_model_config(RunMode::Baseline), 7);
    auto prompted = assemble_model(desk_model_config(RunMode::PromptOnly), 7);
    auto ckpt = snapshot_params(baseline->store);

    auto report = load_into_params(prompted->store, ckpt);
    CHECK(!report.missing.empty());  // prompts, align, prompt columns
    CHECK(report.unexpected.empty());
    bool prompt_missing = false;
    for (const auto& n : report.missing)
        if (n == "prompt.level1") prompt_missing = true;
    CHECK(prompt_missing);

    CHECK_THROWS_WITH_AS(load_into_params_strict(prompted->store, ckpt),
                         doctest::Contains("prompt.level1"), std::runtime_error);
}

TEST_CASE("shared names share seeded initial values across modes") {
    auto baseline = assemble_model(desk_model_config(RunMode::Baseline), 7);
    auto pf3det = assemble_model(desk_model_config(RunMode::Pf3det), 7);
    for (const auto& [name, value] : baseline->store.all()) {
        if (!pf3det->store.contains(name)) continue;
        CHECK(pf3det->store.get(name)->val.data == value->val.data);
    }
    auto other_seed = assemble_model(desk_model_config(RunMode::Baseline), 8);
    CHECK(other_seed->store.get("head.conv.weight")->val.data !=
          baseline->store.get("head.conv.weight")->val.data);
}

TEST_CASE("run config JSON round-trips losslessly") {
    RunConfig rc = desk_run_config(RunMode::Pf3det);
    rc.data.fraction = 0.05;
    rc.schedule[1].load_from = "runs/x/stage1.ckpt";
    const std::string text = rc.to_json_text();
    RunConfig back = RunConfig::from_json_text(text);
    CHECK(back.to_json_text() == text);
    CHECK(back.model.config_hash() == rc.model.config_hash());
    CHECK(back.schedule[1].load_from == rc.schedule[1].load_from);
}

TEST_CASE("config hash is a pure function of the canonical text") {
    ModelConfig a = desk_model_config(RunMode::Baseline);
    ModelConfig b = desk_model_config(RunMode::Baseline);
    CHECK(a.config_hash() == b.config_hash());
    CHECK(a.config_hash() == hex64(fnv1a64(a.canonical_json())));

    ModelConfig c = desk_model_config(RunMode::Pf3det);
    CHECK(a.config_hash() != c.config_hash());

    ModelConfig d = a;
    d.bev.channels = 32;
    CHECK(a.config_hash() != d.config_hash());
}

TEST_CASE("config validation rejects malformed settings") {
    ModelConfig c = desk_model_config(RunMode::Baseline);
    c.bev.channels = 30;  // not divisible by 4
    CHECK_THROWS_AS(c.validate(), ConfigError);

    ModelConfig odd = desk_model_config(RunMode::Baseline);
    odd.bev.height = 35;
    CHECK_THROWS_AS(odd.validate(), ConfigError);

    SceneSpec s;
    s.classes = 1;
    CHECK_THROWS_AS(s.validate(), ConfigError);

    StageSchedule sched;
    sched.epochs = 0;
    CHECK_THROWS_AS(sched.validate(), ConfigError);
}

TEST_SUITE_END();
