// Command-line front end: synthesize / align / train / infer / eval /
// dump-filters, mirroring the pipeline stages.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dbn/blursynth.hpp"
#include "dbn/checkpoint.hpp"
#include "dbn/config.hpp"
#include "dbn/image.hpp"
#include "dbn/infer.hpp"
#include "dbn/trainer.hpp"

namespace fs = std::filesystem;
using namespace dbn;

namespace {

std::vector<std::string> list_pngs(const std::string& dir) {
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) raise("io-error", dir + " is not a directory");
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

void echo_config(const Config& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    cfg.save_file((fs::path(out_dir) / "config_resolved.cfg").string());
}

int run_synthesize(const Config& cfg) {
    const std::string input = cfg.get("input", "");
    const std::string output = cfg.get("output", "");

    // either a directory of PNG frames (one video) or a directory of such
    // directories (one per video)
    std::vector<std::pair<std::string, std::string>> videos;  // id, dir
    bool has_pngs = false;
    for (const auto& e : fs::directory_iterator(input)) {
        if (e.is_regular_file() && e.path().extension() == ".png") has_pngs = true;
    }
    if (has_pngs) {
        videos.emplace_back(cfg.get("video_id", fs::path(input).filename().string()), input);
    } else {
        for (const auto& e : fs::directory_iterator(input)) {
            if (e.is_directory()) videos.emplace_back(e.path().filename().string(), e.path().string());
        }
        std::sort(videos.begin(), videos.end());
    }
    if (videos.empty()) raise("empty-input", "no frames or video directories under " + input);

    echo_config(cfg, output);
    std::vector<PairRecord> manifest;
    for (const auto& [id, dir] : videos) {
        HighFpsSequence seq;
        seq.frame_paths = list_pngs(dir);
        seq.source_fps = cfg.get_real("fps_in", 240.0);
        seq.target_fps = cfg.get_real("fps_out", 30.0);
        std::fprintf(stderr, "[synthesize] %s: %zu source frames\n", id.c_str(), seq.frame_paths.size());
        auto rows = generate_pairs(seq, id, output, static_cast<int>(cfg.get_int("subframes", 10)));
        manifest.insert(manifest.end(), rows.begin(), rows.end());
    }
    write_manifest(manifest, (fs::path(output) / "manifest.csv").string());
    std::fprintf(stderr, "[synthesize] wrote %zu pairs\n", manifest.size());
    return 0;
}

int run_align(const Config& cfg) {
    const std::string root = cfg.get("data", "");
    const AlignMode mode = parse_align_mode(cfg.get("align", "homog"));
    if (mode == AlignMode::None) raise("bad-argument", "align cache needs --align homog or flow");

    auto data = PairDataset::load(root, "");
    echo_config(cfg, root);
    char name[48];
    for (const auto& v : data.train) {
        const fs::path cache_dir = fs::path(root) / v.id / (std::string("aligned_") + align_mode_name(mode));
        fs::create_directories(cache_dir);
        const int n = static_cast<int>(v.blurry.size());
        for (int i = 0; i < n; ++i) {
            std::vector<Tensor> window;
            for (int k = -2; k <= 2; ++k) {
                window.push_back(load_image(v.blurry[static_cast<std::size_t>(std::clamp(i + k, 0, n - 1))]));
            }
            FrameStack stack = align_stack(make_stack(window, 2, false), mode, [&](const std::string& m) {
                std::fprintf(stderr, "[align] %s frame %d: %s\n", v.id.c_str(), i, m.c_str());
            });
            for (int k = 0; k < 5; ++k) {
                std::snprintf(name, sizeof(name), "%05d_%d.png", i, k);
                save_image(stack.frames[static_cast<std::size_t>(k)], (cache_dir / name).string());
            }
        }
        std::fprintf(stderr, "[align] cached %s (%d stacks)\n", v.id.c_str(), n);
    }
    return 0;
}

int run_train(const Config& cfg) {
    const std::string root = cfg.get("data", "");
    const std::string out = cfg.get("out", "");
    TrainConfig tc = TrainConfig::from_config(cfg);

    auto data = PairDataset::load(root, cfg.get("val_videos", ""));
    Config resolved = cfg;
    tc.to_config(resolved);
    echo_config(resolved, out);

    const std::string final_path = train_loop(data, tc, out, cfg.get("resume", ""));
    std::fprintf(stderr, "[train] final checkpoint: %s\n", final_path.c_str());
    return 0;
}

int run_infer(const Config& cfg) {
    auto loaded = load_checkpoint(cfg.get("model", ""));
    const std::string out = cfg.get("out", "");
    echo_config(cfg, out);
    auto report =
        eval_sequence(loaded.params, cfg.get("input", ""), parse_align_mode(cfg.get("align", "none")), out);
    std::fprintf(stderr, "[infer] wrote %s\n", out.c_str());
    if (report.has_ground_truth) std::fputs(report.summary().c_str(), stderr);
    return 0;
}

int run_eval(const Config& cfg) {
    auto loaded = load_checkpoint(cfg.get("model", ""));
    const std::string out = cfg.get("out", "");
    echo_config(cfg, out);
    auto report =
        eval_sequence(loaded.params, cfg.get("data", ""), parse_align_mode(cfg.get("align", "none")), out);
    std::fputs(report.summary().c_str(), stdout);
    return 0;
}

int run_dump_filters(const Config& cfg) {
    auto loaded = load_checkpoint(cfg.get("model", ""));
    const auto paths = list_pngs(cfg.get("frames", ""));
    if (paths.size() < 5) raise("bad-argument", "need at least 5 frames, found " + std::to_string(paths.size()));
    std::vector<Tensor> frames;
    for (int k = 0; k < 5; ++k) frames.push_back(load_image(paths[static_cast<std::size_t>(k)]));
    FrameStack stack = make_stack(frames, 2, false);

    const std::string out = cfg.get("out", "");
    echo_config(cfg, out);
    dump_filters(loaded.params, stack, out);
    std::fprintf(stderr, "[dump-filters] wrote 64 filters + 64 feature maps to %s\n", out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DeBlurNet: stack-based video deblurring"};
    app.require_subcommand(1);

    std::string config_path, align_str;
    long seed = -1;
    app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "RNG seed");
    app.add_option("--align", align_str, "alignment mode: none|homog|flow");

    // flags land in cli_cfg; precedence is defaults < config file < flags
    Config cli_cfg;
    auto opt_str = [&](CLI::App* sub, const char* flag, const char* key, const char* help,
                       bool required = false) {
        auto* o = sub->add_option_function<std::string>(
            flag, [&cli_cfg, key = std::string(key)](const std::string& v) { cli_cfg.set(key, v); }, help);
        if (required) o->required();
        return o;
    };

    auto* synth = app.add_subcommand("synthesize", "generate blurry/sharp pairs from high-fps frames");
    opt_str(synth, "--input", "input", "directory of PNG frames, or of per-video directories", true);
    opt_str(synth, "--output", "output", "dataset root to write", true);
    opt_str(synth, "--fps-in", "fps_in", "source frame rate (default 240)");
    opt_str(synth, "--fps-out", "fps_out", "target frame rate (default 30)");
    opt_str(synth, "--subframes", "subframes", "interpolated images per adjacent pair (default 10)");
    opt_str(synth, "--video-id", "video_id", "video id when --input holds frames directly");

    auto* aln = app.add_subcommand("align", "cache aligned stacks under the dataset root");
    opt_str(aln, "--data", "data", "dataset root (from synthesize)", true);

    auto* train = app.add_subcommand("train", "train the network on a synthesized dataset");
    opt_str(train, "--data", "data", "dataset root", true);
    opt_str(train, "--out", "out", "run directory for logs and checkpoints", true);
    opt_str(train, "--val-videos", "val_videos", "comma-separated video ids for validation");
    opt_str(train, "--resume", "resume", "checkpoint to resume from");
    opt_str(train, "--batch-size", "batch_size", "minibatch size");
    opt_str(train, "--patch", "patch", "training patch size");
    opt_str(train, "--max-iters", "max_iters", "training iterations");
    opt_str(train, "--base-lr", "base_lr", "initial learning rate");
    opt_str(train, "--log-every", "log_every", "CSV log interval");
    opt_str(train, "--checkpoint-every", "checkpoint_every", "checkpoint interval");
    opt_str(train, "--single-frame", "single_frame_mode", "replicate the central frame 5x (true/false)");
    train->add_flag("--desk-scale", "start from CI-sized defaults (batch 8, patch 64, 2000 iters)");

    auto* inf = app.add_subcommand("infer", "deblur one video directory");
    opt_str(inf, "--model", "model", "checkpoint path", true);
    opt_str(inf, "--input", "input", "directory of blurry frames (or a dataset video dir)", true);
    opt_str(inf, "--out", "out", "output directory", true);

    auto* ev = app.add_subcommand("eval", "deblur and measure against ground truth");
    opt_str(ev, "--model", "model", "checkpoint path", true);
    opt_str(ev, "--data", "data", "video directory with blurry/ and sharp/", true);
    opt_str(ev, "--out", "out", "output directory", true);

    auto* dump = app.add_subcommand("dump-filters", "write first-layer filters and feature maps");
    opt_str(dump, "--model", "model", "checkpoint path", true);
    opt_str(dump, "--frames", "frames", "directory with at least 5 frames", true);
    opt_str(dump, "--out", "out", "output directory", true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        Config cfg;
        if (train->parsed() && train->count("--desk-scale") > 0) {
            TrainConfig::desk_scale().to_config(cfg);
        }
        if (!config_path.empty()) {
            Config file_cfg;
            file_cfg.load_file(config_path);
            cfg.merge_from(file_cfg);
        }
        cfg.merge_from(cli_cfg);
        if (seed >= 0) cfg.set("seed", std::to_string(seed));
        if (!align_str.empty()) cfg.set("align", align_str);

        if (synth->parsed()) return run_synthesize(cfg);
        if (aln->parsed()) return run_align(cfg);
        if (train->parsed()) return run_train(cfg);
        if (inf->parsed()) return run_infer(cfg);
        if (ev->parsed()) return run_eval(cfg);
        if (dump->parsed()) return run_dump_filters(cfg);
        std::fputs(app.help().c_str(), stderr);
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
