// corrflow: iterative correlation-volume optical flow on the CPU.
// Subcommands: train, infer, eval, viz, selftest.
// Exit codes: 0 ok, 1 property/runtime failure, 2 usage or input error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "flow/checkpoint.hpp"
#include "flow/config.hpp"
#include "flow/flow_io.hpp"
#include "flow/model.hpp"
#include "flow/selftest.hpp"
#include "flow/train.hpp"
#include "flow/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string active_profile() {
    const char* env = std::getenv("FLOW_PROFILE");
    if (!env) return "fast32";
    const std::string p(env);
    if (p != "test64" && p != "fast32")
        throw flow::ContractError("FLOW_PROFILE must be test64 or fast32, got \"" + p + "\"");
    return p;
}

flow::ModelConfig model_config_from(flow::KeyValueConfig& cfg) {
    flow::ModelConfig m;
    m.feature_dim = cfg.get_int("model.feature_dim", m.feature_dim);
    m.stem_width = cfg.get_int("model.stem_width", m.stem_width);
    m.stage_widths[0] = cfg.get_int("model.stage_width1", m.stage_widths[0]);
    m.stage_widths[1] = cfg.get_int("model.stage_width2", m.stage_widths[1]);
    m.stage_widths[2] = cfg.get_int("model.stage_width3", m.stage_widths[2]);
    m.feature_norm = flow::norm_kind_from_string(
        cfg.get("model.feature_norm", to_string(m.feature_norm)));
    m.context_norm = flow::norm_kind_from_string(
        cfg.get("model.context_norm", to_string(m.context_norm)));
    m.block_kind =
        flow::block_kind_from_string(cfg.get("model.block_kind", to_string(m.block_kind)));
    m.hidden_dim = cfg.get_int("model.hidden_dim", m.hidden_dim);
    m.context_dim = cfg.get_int("model.context_dim", m.context_dim);
    m.use_context = cfg.get_bool("model.use_context", m.use_context);
    m.corr_radius = cfg.get_int("model.corr_radius", m.corr_radius);
    m.corr_levels = cfg.get_int("model.corr_levels", m.corr_levels);
    m.corr_grid =
        flow::grid_shape_from_string(cfg.get("model.corr_grid", to_string(m.corr_grid)));
    m.corr_scale_inv_sqrt_dim =
        cfg.get_bool("model.corr_scale_inv_sqrt_dim", m.corr_scale_inv_sqrt_dim);
    m.lookup_on_demand = cfg.get_bool("model.lookup_on_demand", m.lookup_on_demand);
    m.gru_kind = flow::gru_kind_from_string(cfg.get("model.gru_kind", to_string(m.gru_kind)));
    m.upsample =
        flow::upsample_kind_from_string(cfg.get("model.upsample", to_string(m.upsample)));
    m.tied_weights = cfg.get_bool("model.tied_weights", m.tied_weights);
    m.iters_train = cfg.get_int("model.iters_train", m.iters_train);
    m.iters_infer = cfg.get_int("model.iters_infer", m.iters_infer);
    m.append_raw_flow = cfg.get_bool("model.append_raw_flow", m.append_raw_flow);
    m.mask_temperature = cfg.get_double("model.mask_temperature", m.mask_temperature);
    m.corr_branch1 = cfg.get_int("model.corr_branch1", m.corr_branch1);
    m.corr_branch2 = cfg.get_int("model.corr_branch2", m.corr_branch2);
    m.flow_branch1 = cfg.get_int("model.flow_branch1", m.flow_branch1);
    m.flow_branch2 = cfg.get_int("model.flow_branch2", m.flow_branch2);
    m.head_width = cfg.get_int("model.head_width", m.head_width);
    m.mask_width = cfg.get_int("model.mask_width", m.mask_width);
    return m;
}

flow::RunManifest make_manifest(const std::string& command, uint64_t seed,
                                flow::KeyValueConfig& cfg, const std::vector<std::string>& notes) {
    flow::RunManifest man;
    man.command = command;
    man.profile = active_profile();
    man.git_describe = flow::kGitDescribe;
    man.seed = seed;
    man.notes = notes;
    man.resolved_config = cfg.to_text(true);
    return man;
}

template <typename T>
int run_train(flow::KeyValueConfig& cfg, const std::string& out_dir, bool verbose) {
    flow::TrainConfig tc;
    tc.model = model_config_from(cfg);
    tc.optim.peak_lr = cfg.get_double("optim.peak_lr", tc.optim.peak_lr);
    tc.optim.weight_decay = cfg.get_double("optim.weight_decay", tc.optim.weight_decay);
    tc.optim.clip_lo = cfg.get_double("optim.clip_lo", tc.optim.clip_lo);
    tc.optim.clip_hi = cfg.get_double("optim.clip_hi", tc.optim.clip_hi);
    tc.optim.steps = cfg.get_int("optim.steps", tc.optim.steps);
    tc.optim.batch_size = cfg.get_int("optim.batch_size", tc.optim.batch_size);
    tc.optim.seed = static_cast<uint64_t>(cfg.get_int("optim.seed", 1234));
    tc.optim.warmup_frac = cfg.get_double("optim.warmup_frac", tc.optim.warmup_frac);
    tc.image_size = cfg.get_int("train.image_size", tc.image_size);
    tc.train_motion =
        flow::motion_kind_from_string(cfg.get("train.motion", to_string(tc.train_motion)));
    tc.max_flow = cfg.get_double("train.max_flow", tc.max_flow);
    tc.gamma = cfg.get_double("train.gamma", tc.gamma);
    tc.augment_enabled = cfg.get_bool("train.augment", tc.augment_enabled);
    tc.val_every = cfg.get_int("train.val_every", tc.val_every);
    tc.val_count = cfg.get_int("train.val_count", tc.val_count);
    tc.val_motion =
        flow::motion_kind_from_string(cfg.get("train.val_motion", to_string(tc.val_motion)));
    tc.val_max_flow = cfg.get_double("train.val_max_flow", tc.val_max_flow);
    tc.run_name = cfg.get("train.run_name", tc.run_name);
    tc.out_dir = out_dir;
    tc.verbose = verbose;

    const auto unread = cfg.unread_keys();
    if (!unread.empty())
        throw flow::ContractError("config: unknown key \"" + unread.front() + "\"");

    std::vector<std::string> notes;
    if (tc.model.use_context && tc.model.context_norm == flow::NormKind::batch)
        notes.push_back(
            "context encoder batch norm runs as instance norm (per-image batches of 1)");
    auto man = make_manifest("train", tc.optim.seed, cfg, notes);

    auto result = flow::train<T>(tc);
    man.write(tc.out_dir + "/" + tc.run_name + ".manifest");
    std::printf("checkpoint: %s\n", result.checkpoint_path.c_str());
    std::printf("metrics:    %s\n", result.log_path.c_str());
    std::printf("final validation epe %.4f px, f1-all %.2f%%\n", result.final_val_epe,
                result.final_val_f1);
    return 0;
}

template <typename T>
int run_infer(const std::string& image1, const std::string& image2, const std::string& ckpt,
              int iters, const std::string& warm_flo, const std::string& upsample_override,
              const std::string& out_flo, const std::string& out_png, double viz_max) {
    for (const auto& p : {image1, image2, ckpt})
        if (!fs::exists(p)) throw flow::IoError("missing file: " + p);

    auto meta = flow::read_checkpoint_meta(ckpt);
    auto mc = flow::ModelConfig::from_text(meta.config_text);
    if (!upsample_override.empty())
        mc.upsample = flow::upsample_kind_from_string(upsample_override);
    auto model = flow::ModelT<T>::build(mc, 0);
    flow::load_checkpoint(ckpt, model.params);

    auto img1 = flow::image_to_tensor<T>(flow::read_image(image1));
    auto img2 = flow::image_to_tensor<T>(flow::read_image(image2));
    if (img1->shape != img2->shape)
        throw flow::ContractError("images have different extents: " +
                                  flow::shape_str(img1->shape) + " vs " +
                                  flow::shape_str(img2->shape));

    flow::TensorPtrT<T> f0;
    if (!warm_flo.empty()) {
        if (!fs::exists(warm_flo)) throw flow::IoError("missing file: " + warm_flo);
        auto prev_full = flow::flow_from_file<T>(flow::read_flo(warm_flo));
        auto padded = flow::reflect_pad_to_multiple(prev_full, 8);
        // the padded values are flow vectors, not intensities; keep the
        // reflected copies, they only seed the projection
        auto prev_eighth = flow::downsample_flow_to_eighth(padded);
        f0 = flow::warm_start(prev_eighth);
    }

    const int n = iters > 0 ? iters : mc.iters_infer;
    auto res = model.run(img1, img2, n, flow::UpsamplePolicy::last, f0);
    auto ff = flow::flow_to_file(res.flows_full.back());
    flow::write_flo(out_flo, ff);
    std::printf("wrote %s (%d x %d, %d updates)\n", out_flo.c_str(), ff.width, ff.height, n);
    if (!out_png.empty()) {
        flow::write_png(out_png, flow::flow_to_color(ff, viz_max));
        std::printf("wrote %s\n", out_png.c_str());
    }

    flow::KeyValueConfig cfg;
    cfg.set("infer.image1", image1, flow::Provenance::flag);
    cfg.set("infer.image2", image2, flow::Provenance::flag);
    cfg.set("infer.checkpoint", ckpt, flow::Provenance::flag);
    cfg.set("infer.iters", std::to_string(n), flow::Provenance::flag);
    if (!warm_flo.empty()) cfg.set("infer.warm_start", warm_flo, flow::Provenance::flag);
    std::vector<std::string> notes;
    if (model.norm_substituted())
        notes.push_back(
            "context encoder batch norm runs as instance norm (per-image batches of 1)");
    auto man = make_manifest("infer", 0, cfg, notes);
    man.resolved_config += meta.config_text;
    man.write(out_flo + ".manifest");
    return 0;
}

int run_eval(const std::string& flo_path, const std::string& gt_path,
             const std::string& out_json) {
    for (const auto& p : {flo_path, gt_path})
        if (!fs::exists(p)) throw flow::IoError("missing file: " + p);
    auto pred = flow::read_flo(flo_path);
    auto gt = flow::read_flo(gt_path);
    if (pred.width != gt.width || pred.height != gt.height)
        throw flow::ContractError("flow extents differ between prediction and ground truth");
    auto predt = flow::flow_from_file<double>(pred);
    auto gtt = flow::flow_from_file<double>(gt);
    const auto known = flow::flow_known_mask(gt);
    auto valid = flow::make_tensor<double>({1, gt.height, gt.width});
    for (size_t i = 0; i < known.size(); ++i) valid->data[i] = known[i] ? 1.0 : 0.0;
    const auto ev = flow::evaluate(predt, gtt, valid);
    json j;
    j["epe"] = ev.epe;
    j["f1_all"] = ev.f1_all;
    j["valid_pixels"] = ev.valid_count;
    json hist = json::array();
    for (size_t b = 0; b < ev.epe_hist.size(); ++b) {
        json bin;
        bin["upper_px"] = flow::kEpeHistEdges[b] > 1e20 ? -1.0 : flow::kEpeHistEdges[b];
        bin["count"] = ev.epe_hist[b];
        hist.push_back(bin);
    }
    j["epe_hist"] = hist;
    const auto text = j.dump(2);
    std::printf("%s\n", text.c_str());
    if (!out_json.empty()) {
        std::ofstream os(out_json);
        os << text << "\n";
    }
    return 0;
}

int run_viz(const std::string& flo_path, const std::string& out_png, double viz_max) {
    if (!fs::exists(flo_path)) throw flow::IoError("missing file: " + flo_path);
    auto f = flow::read_flo(flo_path);
    flow::write_png(out_png, flow::flow_to_color(f, viz_max));
    std::printf("wrote %s\n", out_png.c_str());
    return 0;
}

int run_selftest_cmd(uint64_t seed, bool quick) {
    const auto results = flow::run_selftest(seed, quick);
    int failures = 0;
    for (const auto& r : results) {
        std::printf("[%s] %s%s%s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.empty() ? "" : ": ", r.detail.c_str());
        if (!r.pass) ++failures;
    }
    std::printf("%d/%zu checks passed\n", static_cast<int>(results.size()) - failures,
                results.size());
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"corrflow: iterative correlation-volume optical flow (CPU)"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "train on synthetic data");
    std::string train_config, train_out = ".";
    std::vector<std::string> train_sets;
    bool train_verbose = false;
    train_cmd->add_option("config", train_config, "key = value config file");
    train_cmd->add_option("--out", train_out, "output directory");
    train_cmd->add_option("--set", train_sets, "override: key=value");
    train_cmd->add_flag("--verbose", train_verbose, "per-step progress");

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "estimate flow for an image pair");
    std::string in1, in2, ckpt, warm, upsample, out_flo = "flow.flo", out_png;
    int iters = 0;
    double viz_max = 0.0;
    infer_cmd->add_option("image1", in1, "first frame (png/ppm)")->required();
    infer_cmd->add_option("image2", in2, "second frame (png/ppm)")->required();
    infer_cmd->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
    infer_cmd->add_option("--iters", iters, "update iterations (default: checkpoint config)");
    infer_cmd->add_option("--warm-start", warm, "previous pair's .flo for initialization");
    infer_cmd->add_option("--upsample", upsample, "convex|bilinear override");
    infer_cmd->add_option("-o,--output", out_flo, "output .flo path");
    infer_cmd->add_option("--viz", out_png, "also render a PNG visualization");
    infer_cmd->add_option("--viz-max", viz_max, "normalization magnitude (default: 99th pct)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "compare a flow file against ground truth");
    std::string eval_flow, eval_gt, eval_out;
    eval_cmd->add_option("flow", eval_flow, "predicted .flo")->required();
    eval_cmd->add_option("gt", eval_gt, "ground-truth .flo")->required();
    eval_cmd->add_option("-o,--output", eval_out, "write metrics JSON here");

    // viz
    auto* viz_cmd = app.add_subcommand("viz", "render a .flo as a color-wheel PNG");
    std::string viz_flow, viz_out = "flow.png";
    double viz_max2 = 0.0;
    viz_cmd->add_option("flow", viz_flow, "input .flo")->required();
    viz_cmd->add_option("-o,--output", viz_out, "output PNG path");
    viz_cmd->add_option("--viz-max", viz_max2, "normalization magnitude (default: 99th pct)");

    // selftest
    auto* self_cmd = app.add_subcommand("selftest", "run the invariant suite");
    uint64_t self_seed = 20240817;
    bool self_quick = false;
    self_cmd->add_option("--seed", self_seed, "suite seed");
    self_cmd->add_flag("--quick", self_quick, "trimmed case counts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const std::string profile = active_profile();
        const bool f64 = profile == "test64";
        if (train_cmd->parsed()) {
            flow::KeyValueConfig cfg;
            if (!train_config.empty()) cfg.load_file(train_config);
            for (const auto& s : train_sets) cfg.apply_flag(s);
            return f64 ? run_train<double>(cfg, train_out, train_verbose)
                       : run_train<float>(cfg, train_out, train_verbose);
        }
        if (infer_cmd->parsed()) {
            return f64 ? run_infer<double>(in1, in2, ckpt, iters, warm, upsample, out_flo,
                                           out_png, viz_max)
                       : run_infer<float>(in1, in2, ckpt, iters, warm, upsample, out_flo,
                                          out_png, viz_max);
        }
        if (eval_cmd->parsed()) return run_eval(eval_flow, eval_gt, eval_out);
        if (viz_cmd->parsed()) return run_viz(viz_flow, viz_out, viz_max2);
        if (self_cmd->parsed()) return run_selftest_cmd(self_seed, self_quick);
    } catch (const flow::IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const flow::ContractError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const flow::ShapeError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
