// sscpipe: desk-scale semantic scene completion pipeline.
//
//   sscpipe synth     --out DIR [--config PATH] [--seed U64]
//   sscpipe forward   --scene DIR --out DIR [--config PATH] [--seed U64] [--checkpoint PATH]
//   sscpipe train     --scene DIR --out DIR [--config PATH] [--seed U64]
//   sscpipe gradcheck [--config PATH]
//   sscpipe eval PRED.vxg GT.vxg

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "ssc/commands.hpp"

namespace {

ssc::PipelineConfig resolve_config(const std::string& config_path, const std::optional<uint64_t>& seed) {
    ssc::PipelineConfig cfg;
    if (!config_path.empty()) cfg = ssc::PipelineConfig::from_file(config_path);
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
}

template <typename F32Fn, typename F64Fn>
int with_precision(const ssc::PipelineConfig& cfg, F32Fn f32, F64Fn f64) {
    if (cfg.precision == "f64") return f64();
    return f32();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale semantic scene completion pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir, scene_dir, checkpoint, pred_path, gt_path;
    std::optional<uint64_t> seed;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "config file (key=value lines)");
        cmd->add_option("--seed", seed, "seed override");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scene");
    add_common(synth);
    synth->add_option("--out", out_dir, "output directory")->required();

    CLI::App* fwd = app.add_subcommand("forward", "run the pipeline on a scene");
    add_common(fwd);
    fwd->add_option("--scene", scene_dir, "scene directory")->required();
    fwd->add_option("--out", out_dir, "output directory")->required();
    fwd->add_option("--checkpoint", checkpoint, "restore parameters before running");

    CLI::App* trn = app.add_subcommand("train", "overfit on a stored scene");
    add_common(trn);
    trn->add_option("--scene", scene_dir, "scene directory")->required();
    trn->add_option("--out", out_dir, "output directory")->required();

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    add_common(gc);

    CLI::App* ev = app.add_subcommand("eval", "score a prediction against ground truth");
    ev->add_option("pred", pred_path, "predicted VXG1 grid")->required();
    ev->add_option("gt", gt_path, "ground-truth VXG1 grid")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            ssc::cmd_synth(resolve_config(config_path, seed), out_dir);
            return 0;
        }
        if (fwd->parsed()) {
            auto cfg = resolve_config(config_path, seed);
            std::optional<std::string> ckpt;
            if (!checkpoint.empty()) ckpt = checkpoint;
            return with_precision(
                cfg,
                [&] {
                    auto m = ssc::cmd_forward<float>(cfg, scene_dir, out_dir, ckpt);
                    std::cout << "IoU=" << ssc::detail::format_fixed(m.iou)
                              << " mIoU=" << ssc::detail::format_fixed(m.miou) << "\n";
                    return 0;
                },
                [&] {
                    auto m = ssc::cmd_forward<double>(cfg, scene_dir, out_dir, ckpt);
                    std::cout << "IoU=" << ssc::detail::format_fixed(m.iou)
                              << " mIoU=" << ssc::detail::format_fixed(m.miou) << "\n";
                    return 0;
                });
        }
        if (trn->parsed()) {
            auto cfg = resolve_config(config_path, seed);
            return with_precision(
                cfg,
                [&] {
                    ssc::cmd_train<float>(cfg, scene_dir, out_dir);
                    return 0;
                },
                [&] {
                    ssc::cmd_train<double>(cfg, scene_dir, out_dir);
                    return 0;
                });
        }
        if (gc->parsed()) {
            if (!config_path.empty()) resolve_config(config_path, seed); // validate only
            return ssc::cmd_gradcheck(std::cout) == 0 ? 0 : 1;
        }
        if (ev->parsed()) {
            ssc::cmd_eval(pred_path, gt_path, std::cout);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
