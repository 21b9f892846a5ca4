#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>

#include "ssc/gradcheck_suite.hpp"
#include "ssc/pipeline.hpp"

namespace ssc {

namespace detail {

inline std::string format_fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline std::string format_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

} // namespace detail

/// Writes scene.vxg, depth_gt.dpm, depth_stereo.dpm and a config echo into
/// out_dir. Deterministic from (config, seed).
inline void cmd_synth(const PipelineConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    SceneSample s = generate_scene(cfg.seed, cfg);
    std::filesystem::create_directories(out_dir);
    write_vxg1(out_dir + "/scene.vxg", s.grid);
    write_dpm1(out_dir + "/depth_gt.dpm", s.depth_gt);
    write_dpm1(out_dir + "/depth_stereo.dpm", s.depth_stereo);
    write_text_file(out_dir + "/config.echo", cfg.to_text());
}

/// Full forward pass over a stored scene; writes pred.vxg and metrics.txt
/// with the report line `IoU=<f> mIoU=<f>`. Optionally restores parameters
/// from a checkpoint first.
template <typename T>
SegmentationMetrics cmd_forward(const PipelineConfig& cfg, const std::string& scene_dir,
                                const std::string& out_dir,
                                const std::optional<std::string>& checkpoint = {}) {
    cfg.validate();
    SceneSample s = load_scene(scene_dir, cfg);
    auto model = Model<T>::init(cfg);
    if (checkpoint) {
        auto params = model.parameters();
        read_checkpoint(*checkpoint, params);
    }
    auto result = forward(model, s);
    SemanticVoxelGrid pred = logits_to_grid(result.logits, s.grid.spec, cfg.num_classes);
    SegmentationMetrics m = evaluate_iou_miou(pred, s.grid);
    std::filesystem::create_directories(out_dir);
    write_vxg1(out_dir + "/pred.vxg", pred);
    write_text_file(out_dir + "/metrics.txt", "IoU=" + detail::format_fixed(m.iou) +
                                                  " mIoU=" + detail::format_fixed(m.miou) + "\n");
    return m;
}

/// Gradient-descent training on one stored scene; writes the per-step loss
/// CSV and the final checkpoint.
template <typename T>
std::vector<TrainLogRow> cmd_train(const PipelineConfig& cfg, const std::string& scene_dir,
                                   const std::string& out_dir) {
    cfg.validate();
    SceneSample s = load_scene(scene_dir, cfg);
    auto model = Model<T>::init(cfg);
    std::filesystem::create_directories(out_dir);
    std::vector<TrainLogRow> log;
    try {
        log = train(model, s, cfg.train_steps, cfg.train_lr, cfg.train_momentum);
    } catch (const NonFiniteLoss& e) {
        write_text_file(out_dir + "/loss.csv",
                        std::string("step,total,ce,scal_geo,scal_sem,depth\n# aborted: ") +
                            e.what() + "\n");
        throw;
    }
    std::ostringstream csv;
    csv << "step,total,ce,scal_geo,scal_sem,depth\n";
    for (const auto& row : log)
        csv << row.step << "," << detail::format_g(row.total) << "," << detail::format_g(row.ce)
            << "," << detail::format_g(row.scal_geo) << "," << detail::format_g(row.scal_sem)
            << "," << detail::format_g(row.depth) << "\n";
    write_text_file(out_dir + "/loss.csv", csv.str());
    auto params = model.parameters();
    write_checkpoint(out_dir + "/model.ckpt", params);
    return log;
}

/// Runs the finite-difference suite; prints one line per operation and
/// returns the number of failures.
inline int cmd_gradcheck(std::ostream& os) {
    const auto t0 = std::chrono::steady_clock::now();
    auto results = run_gradient_suite();
    int failures = 0;
    for (const auto& r : results) {
        os << "op=" << r.op << " max_rel_err=" << detail::format_g(r.max_rel_err) << " "
           << (r.pass ? "PASS" : "FAIL") << "\n";
        if (!r.pass) ++failures;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    os << "checked " << results.size() << " operations in " << detail::format_fixed(secs)
       << "s, " << failures << " failed\n";
    return failures;
}

/// IoU / mIoU / per-class IoU between two stored grids.
inline SegmentationMetrics cmd_eval(const std::string& pred_path, const std::string& gt_path,
                                    std::ostream& os) {
    SemanticVoxelGrid pred = read_vxg1(pred_path);
    SemanticVoxelGrid gt = read_vxg1(gt_path);
    SegmentationMetrics m = evaluate_iou_miou(pred, gt);
    os << "IoU=" << detail::format_fixed(m.iou) << "\n";
    os << "mIoU=" << detail::format_fixed(m.miou) << "\n";
    for (size_t c = 1; c < m.per_class.size(); ++c) {
        os << "class=" << c << " IoU=";
        if (m.per_class[c] < 0)
            os << "absent";
        else
            os << detail::format_fixed(m.per_class[c]);
        os << "\n";
    }
    return m;
}

} // namespace ssc
