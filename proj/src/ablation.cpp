#include "pfdet/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pfdet {

std::vector<AblationRowSpec> table1_grid(const ModelConfig& base) {
    std::vector<AblationRowSpec> grid;
    {
        ModelConfig c = base;
        c.mode = "baseline";
        grid.push_back({"baseline", c});
    }
    {
        ModelConfig c = base;
        c.mode = "fm_resnet50";
        c.foundation.image_encoder = ImageEncoderKind::Resnet50Stub;
        grid.push_back({"fm_resnet50", c});
    }
    {
        ModelConfig c = base;
        c.mode = "fm_only";
        c.foundation.image_encoder = ImageEncoderKind::VitLStub;
        grid.push_back({"fm_vit_l", c});
    }
    {
        ModelConfig c = base;
        c.mode = "prompt_l1";
        c.prompts.level1_channels = desk_model_config(RunMode::PromptOnly).prompts.level1_channels;
        c.freeze_pre_bev = true;
        grid.push_back({"prompt_1level", c});
    }
    {
        ModelConfig c = desk_model_config(RunMode::PromptOnly);
        c.image = base.image;
        c.bev = base.bev;
        c.head = base.head;
        grid.push_back({"prompt_2level", c});
    }
    {
        ModelConfig c = desk_model_config(RunMode::Pf3det);
        c.image = base.image;
        c.bev = base.bev;
        c.head = base.head;
        grid.push_back({"pf3det", c});
    }
    return grid;
}

std::vector<AblationRowSpec> table2_grid(const ModelConfig& base) {
    std::vector<AblationRowSpec> grid;
    {
        ModelConfig c = base;
        c.mode = "fm_only";
        c.foundation.image_encoder = ImageEncoderKind::VitLStub;
        grid.push_back({"image_vit_l_768", c});
    }
    {
        ModelConfig c = base;
        c.mode = "fm_resnet50";
        c.foundation.image_encoder = ImageEncoderKind::Resnet50Stub;
        grid.push_back({"image_resnet50_1024", c});
    }
    for (int compress : {50, 100}) {
        for (auto up : {UpsampleMode::Repeat, UpsampleMode::Learned}) {
            ModelConfig c = base;
            const std::string up_name = up == UpsampleMode::Repeat ? "repeat" : "learned";
            c.mode = "fm_point_c" + std::to_string(compress) + "_" + up_name;
            c.foundation.point_encoder = PointEncoderKind::PointBertStub;
            c.foundation.point_compress_channels = compress;
            c.foundation.point_upsample_mode = up;
            grid.push_back({"point_c" + std::to_string(compress) + "_" + up_name, c});
        }
    }
    return grid;
}

std::vector<AblationRowSpec> table3_grid(const ModelConfig& base) {
    std::vector<AblationRowSpec> grid;
    for (int ch : {10, 50, 100, 150, 200, 500, 1000}) {
        ModelConfig c = base;
        c.mode = "prompt_l1_c" + std::to_string(ch);
        c.prompts.level1_channels = ch;
        c.freeze_pre_bev = true;
        grid.push_back({"single_c" + std::to_string(ch), c, ch});
    }
    const int pairs[3][2] = {{100, 150}, {100, 100}, {100, 50}};
    for (const auto& p : pairs) {
        ModelConfig c = base;
        c.mode = "prompt_l1_" + std::to_string(p[0]) + "_l2_" + std::to_string(p[1]);
        c.prompts.level1_channels = p[0];
        c.prompts.level2_channels = p[1];
        c.freeze_pre_bev = true;
        grid.push_back({"multi_" + std::to_string(p[0]) + "_" + std::to_string(p[1]), c});
    }
    {
        ModelConfig c = base;
        c.mode = "prompt_4level";
        c.prompts.level1_channels = 50;
        c.prompts.level2_channels = 25;
        c.prompts.level3a_channels = 12;
        c.prompts.level3b_channels = 25;
        c.freeze_pre_bev = true;
        grid.push_back({"four_level_50_25_12_25", c});
    }
    return grid;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationRowSpec>& grid,
                                      const Dataset& data, const AblationOptions& opts) {
    struct Cell {
        MetricsReport metrics;
        int64_t trainable = 0;
        double wall = 0.0;
    };
    std::vector<std::vector<Cell>> cells(grid.size(), std::vector<Cell>(opts.seeds.size()));

    ThreadPool pool(static_cast<unsigned>(std::max(1, opts.threads)));
    for (size_t g = 0; g < grid.size(); ++g) {
        for (size_t s = 0; s < opts.seeds.size(); ++s) {
            pool.submit([&, g, s] {
                RunConfig rc;
                rc.model = grid[g].cfg;
                rc.data.spec = opts.spec;
                rc.data.fraction = opts.fraction;
                rc.data.seed = opts.seeds[s];
                rc.schedule = opts.schedule;
                const std::string run_dir = opts.work_dir + "/" + grid[g].label + "/seed" +
                                            std::to_string(opts.seeds[s]);
                const std::string s1_cache =
                    opts.work_dir + "/stage1_cache/" +
                    derive_stage1_config(grid[g].cfg).config_hash() + "_f" +
                    std::to_string(opts.fraction) + "_s" + std::to_string(opts.seeds[s]);
                auto res = run_staged_training(rc, data, run_dir, 1, s1_cache);
                cells[g][s] = {res.stage_metrics.back(), res.trainable_scalars,
                               res.wall_seconds};
            });
        }
    }
    pool.wait();

    std::vector<AblationRow> rows;
    for (size_t g = 0; g < grid.size(); ++g) {
        AblationRow row;
        row.config_id = grid[g].label;
        row.config_hash = grid[g].cfg.config_hash();
        row.seed_count = static_cast<int>(opts.seeds.size());
        row.sweep_channel = grid[g].sweep_channel;
        double map_sum = 0.0, comp_sum = 0.0, wall = 0.0;
        for (const auto& c : cells[g]) {
            row.per_seed_map.push_back(c.metrics.map);
            map_sum += c.metrics.map;
            comp_sum += c.metrics.composite;
            wall += c.wall;
        }
        const double n = static_cast<double>(opts.seeds.size());
        row.map_mean = map_sum / n;
        row.composite_mean = comp_sum / n;
        double map_var = 0.0, comp_var = 0.0;
        for (const auto& c : cells[g]) {
            map_var += (c.metrics.map - row.map_mean) * (c.metrics.map - row.map_mean);
            comp_var += (c.metrics.composite - row.composite_mean) *
                        (c.metrics.composite - row.composite_mean);
        }
        if (opts.seeds.size() > 1) {
            row.map_std = std::sqrt(map_var / (n - 1.0));
            row.composite_std = std::sqrt(comp_var / (n - 1.0));
        }
        row.trainable_param_count = cells[g][0].trainable;
        row.wall_seconds = wall;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "config_id,seed_count,map_mean,map_std,composite_mean,composite_std,"
          "trainable_param_count,wall_seconds\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f,%.6f,%.6f,%lld,%.3f\n",
                      r.config_id.c_str(), r.seed_count, r.map_mean, r.map_std,
                      r.composite_mean, r.composite_std,
                      static_cast<long long>(r.trainable_param_count), r.wall_seconds);
        os << buf;
    }
    return os.str();
}

std::string sweep_svg(const std::vector<AblationRow>& rows, const std::string& title) {
    std::vector<const AblationRow*> sweep;
    for (const auto& r : rows)
        if (r.sweep_channel >= 0) sweep.push_back(&r);
    std::sort(sweep.begin(), sweep.end(), [](const AblationRow* a, const AblationRow* b) {
        return a->sweep_channel < b->sweep_channel;
    });
    const int width = 640, height = 400, ml = 70, mr = 20, mt = 40, mb = 50;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
       << title << "</text>\n";
    if (sweep.empty()) {
        os << "<text x=\"50%\" y=\"50%\" text-anchor=\"middle\">no sweep rows</text>\n</svg>\n";
        return os.str();
    }
    double lo = 1.0, hi = 0.0;
    for (const auto* r : sweep) {
        lo = std::min(lo, r->map_mean - r->map_std);
        hi = std::max(hi, r->map_mean + r->map_std);
    }
    const double pad = std::max(0.02, (hi - lo) * 0.15);
    lo = std::max(0.0, lo - pad);
    hi = std::min(1.0, hi + pad);
    const double px = static_cast<double>(width - ml - mr);
    const double py = static_cast<double>(height - mt - mb);
    auto xo = [&](size_t i) {
        return ml + px * (sweep.size() == 1 ? 0.5
                                            : static_cast<double>(i) / (sweep.size() - 1));
    };
    auto yo = [&](double v) { return mt + py * (1.0 - (v - lo) / (hi - lo)); };
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
       << height - mb << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
       << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = lo + (hi - lo) * t / 4.0;
        os << "<text x=\"" << ml - 8 << "\" y=\"" << yo(v) + 4
           << "\" text-anchor=\"end\" font-size=\"11\">" << static_cast<int>(v * 1000) / 10.0
           << "</text>\n";
    }
    os << "<text x=\"20\" y=\"" << mt + py / 2
       << "\" font-size=\"12\" transform=\"rotate(-90 20 " << mt + py / 2
       << ")\" text-anchor=\"middle\">val mAP (%)</text>\n";
    os << "<text x=\"" << ml + px / 2 << "\" y=\"" << height - 12
       << "\" font-size=\"12\" text-anchor=\"middle\">prompt channels</text>\n";
    std::ostringstream pts;
    for (size_t i = 0; i < sweep.size(); ++i) {
        const double x = xo(i), y = yo(sweep[i]->map_mean);
        pts << x << "," << y << " ";
        const double y0 = yo(sweep[i]->map_mean - sweep[i]->map_std);
        const double y1 = yo(sweep[i]->map_mean + sweep[i]->map_std);
        os << "<line x1=\"" << x << "\" y1=\"" << y0 << "\" x2=\"" << x << "\" y2=\"" << y1
           << "\" stroke=\"steelblue\"/>\n";
        os << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"3.5\" fill=\"steelblue\"/>\n";
        os << "<text x=\"" << x << "\" y=\"" << height - mb + 16
           << "\" text-anchor=\"middle\" font-size=\"11\">" << sweep[i]->sweep_channel
           << "</text>\n";
    }
    os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\""
       << pts.str() << "\"/>\n";
    os << "</svg>\n";
    return os.str();
}

}  // namespace pfdet
