#include "pfdet/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "pfdet/ablation.hpp"
#include "pfdet/checkpoint.hpp"
#include "pfdet/model.hpp"
#include "pfdet/scenes.hpp"
#include "pfdet/train.hpp"

namespace pfdet {

namespace fs = std::filesystem;

namespace {

constexpr int kExitMissingDataset = 2;
constexpr int kExitNanLoss = 3;
constexpr int kExitRegistryMismatch = 4;

RunConfig base_config(const std::string& config_path, const std::string& mode) {
    // PF_DESK=1 selects the desk preset; it is also the default when no
    // config file is given.
    RunConfig rc = desk_run_config(parse_run_mode(mode.empty() ? "baseline" : mode));
    const char* desk_env = std::getenv("PF_DESK");
    const bool force_desk = desk_env && std::string(desk_env) == "1";
    if (!config_path.empty() && !force_desk) {
        std::ifstream is(config_path);
        if (!is) throw ConfigError("cannot read config file " + config_path);
        std::string text((std::istreambuf_iterator<char>(is)),
                         std::istreambuf_iterator<char>());
        rc = RunConfig::from_json_text(text);
        if (!mode.empty()) {
            // Re-apply the mode preset on top of the file's dimensions.
            RunConfig preset = desk_run_config(parse_run_mode(mode));
            ModelConfig m = rc.model;
            m.mode = preset.model.mode;
            m.foundation.image_encoder = preset.model.foundation.image_encoder;
            m.foundation.point_encoder = preset.model.foundation.point_encoder;
            m.prompts = preset.model.prompts;
            m.freeze_pre_bev = preset.model.freeze_pre_bev;
            rc.model = m;
        }
    }
    return rc;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    os << text;
}

int cmd_gen(const RunConfig& rc0, const std::string& out, bool force, double fraction,
            uint64_t seed) {
    RunConfig rc = rc0;
    if (seed) {
        rc.data.seed = seed;
        rc.data.spec.seed = seed;
    }
    const std::string dir = out.empty() ? rc.data.dataset_dir : out;
    if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
        std::cerr << "refusing to overwrite non-empty " << dir << " (use --force)\n";
        return 1;
    }
    rc.data.spec.validate();
    Dataset ds = generate_full_dataset(rc.data.spec);
    if (fraction < 1.0) {
        std::vector<SceneSample> all = ds.train;
        all.insert(all.end(), ds.val.begin(), ds.val.end());
        auto sub = subsample_dataset(all, fraction, rc.data.seed);
        ds.train.clear();
        for (auto& s : sub)
            if (s.split == Split::Train) ds.train.push_back(std::move(s));
    }
    save_dataset(dir, ds, rc.data.spec, fraction);
    std::cout << dir << "/MANIFEST.json\n";
    return 0;
}

int cmd_train(RunConfig rc, const std::string& out, double fraction, uint64_t seed) {
    if (seed) rc.data.seed = seed;
    if (fraction > 0.0) rc.data.fraction = fraction;
    if (!out.empty()) rc.output_dir = out;
    if (!fs::exists(fs::path(rc.data.dataset_dir) / "MANIFEST.json")) {
        std::cerr << "dataset not found at " << rc.data.dataset_dir << " (run gen first)\n";
        return kExitMissingDataset;
    }
    Dataset data = load_dataset(rc.data.dataset_dir);
    fs::create_directories(rc.output_dir);
    write_text(rc.output_dir + "/config.json", rc.to_json_text(2) + "\n");
    try {
        auto res = run_staged_training(rc, data, rc.output_dir, 2);
        std::cout << "config_hash " << rc.model.config_hash() << "\n";
        for (const auto& m : res.stage_metrics)
            std::cout << "stage " << m.stage_id << " mAP " << m.map << " composite "
                      << m.composite << "\n";
        std::cout << "final " << res.final_checkpoint << "\n";
        return 0;
    } catch (const std::exception& e) {
        const std::string what = e.what();
        std::cerr << "training failed: " << what << "\n";
        if (what.find("NaN loss") != std::string::npos ||
            what.find("non-finite loss") != std::string::npos)
            return kExitNanLoss;
        throw;
    }
}

int cmd_eval(const RunConfig& rc0, const std::string& ckpt_path, const std::string& out) {
    RunConfig rc = rc0;
    if (!fs::exists(fs::path(rc.data.dataset_dir) / "MANIFEST.json")) {
        std::cerr << "dataset not found at " << rc.data.dataset_dir << "\n";
        return kExitMissingDataset;
    }
    Dataset data = load_dataset(rc.data.dataset_dir);
    if (data.val.empty()) {
        std::cerr << "validation split is empty; refusing to report zero metrics\n";
        return kExitMissingDataset;
    }
    auto model = assemble_model(rc.model, rc.data.seed);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    try {
        load_into_params_strict(model->store, ckpt);
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return kExitRegistryMismatch;
    }
    BoxSet preds;
    EvalOptions opts;
    opts.threads = 2;
    MetricsReport report = evaluate(*model, data.val, opts, &preds);
    report.stage_id = 0;
    std::cout << "mAP " << report.map << " composite " << report.composite << "\n";
    const std::string out_dir = out.empty() ? rc.output_dir : out;
    fs::create_directories(out_dir);
    write_text(out_dir + "/eval.metrics.json", report.to_json_text(2) + "\n");
    std::ostringstream dump;
    for (const auto& p : preds) dump << format_prediction_line(p) << "\n";
    write_text(out_dir + "/predictions.txt", dump.str());
    return 0;
}

int cmd_ablate(const RunConfig& rc0, int table, const std::string& out, double fraction,
               const std::vector<uint64_t>& seeds) {
    RunConfig rc = rc0;
    if (!fs::exists(fs::path(rc.data.dataset_dir) / "MANIFEST.json")) {
        std::cerr << "dataset not found at " << rc.data.dataset_dir << "\n";
        return kExitMissingDataset;
    }
    Dataset data = load_dataset(rc.data.dataset_dir);
    ModelConfig base = rc.model;
    base.mode = "baseline";
    base.foundation = FoundationConfig{};
    base.prompts = PromptConfig{};
    base.freeze_pre_bev = false;
    std::vector<AblationRowSpec> grid;
    if (table == 1)
        grid = table1_grid(base);
    else if (table == 2)
        grid = table2_grid(base);
    else if (table == 3)
        grid = table3_grid(base);
    else {
        std::cerr << "unknown table " << table << " (expected 1, 2 or 3)\n";
        return 1;
    }
    AblationOptions opts;
    opts.seeds = seeds.empty() ? std::vector<uint64_t>{rc.data.seed} : seeds;
    opts.schedule = rc.schedule;
    opts.spec = rc.data.spec;
    opts.fraction = fraction > 0.0 ? fraction : rc.data.fraction;
    const std::string out_dir = out.empty() ? rc.output_dir : out;
    opts.work_dir = out_dir + "/work";
    fs::create_directories(out_dir);
    auto rows = run_ablation(grid, data, opts);
    const std::string csv_path = out_dir + "/table" + std::to_string(table) + ".csv";
    write_text(csv_path, ablation_csv(rows));
    std::cout << csv_path << "\n";
    if (table == 3) {
        const std::string svg_path = out_dir + "/table3_sweep.svg";
        write_text(svg_path, sweep_svg(rows, "Single-level prompt channel sweep"));
        std::cout << svg_path << "\n";
    }
    for (const auto& r : rows)
        std::cout << r.config_id << " mAP " << r.map_mean << " +- " << r.map_std << "\n";
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"prompted multi-modal BEV fusion detector on a synthetic benchmark"};
    app.require_subcommand(1);

    std::string config_path, out, mode, ckpt;
    double fraction = 0.0;
    uint64_t seed = 0;
    bool force = false;
    int table = 1;
    std::vector<uint64_t> seeds;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run config JSON");
        sub->add_option("--seed", seed, "seed override");
        sub->add_option("--out", out, "output path");
    };

    auto* gen = app.add_subcommand("gen", "generate the synthetic dataset");
    add_common(gen);
    gen->add_option("--fraction", fraction, "train-split fraction to keep");
    gen->add_flag("--force", force, "overwrite an existing dataset directory");

    auto* train = app.add_subcommand("train", "run the staged training protocol");
    add_common(train);
    train->add_option("--fraction", fraction, "train-split fraction to use");
    train->add_option("--mode", mode, "baseline|fm_only|prompt_only|pf3det");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
    add_common(eval);
    eval->add_option("checkpoint", ckpt, "checkpoint path")->required();
    eval->add_option("--mode", mode, "model mode the checkpoint was trained with");

    auto* ablate = app.add_subcommand("ablate", "run an experiment grid");
    add_common(ablate);
    ablate->add_option("--table", table, "grid id: 1, 2 or 3");
    ablate->add_option("--fraction", fraction, "train-split fraction to use");
    ablate->add_option("--seeds", seeds, "seeds to aggregate over");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        RunConfig rc = base_config(config_path, mode);
        if (gen->parsed())
            return cmd_gen(rc, out, force, fraction > 0.0 ? fraction : 1.0, seed);
        if (train->parsed()) return cmd_train(rc, out, fraction, seed);
        if (eval->parsed()) {
            if (seed) rc.data.seed = seed;
            return cmd_eval(rc, ckpt, out);
        }
        if (ablate->parsed()) return cmd_ablate(rc, table, out, fraction, seeds);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

int cli_run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("pfdet");
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace pfdet
