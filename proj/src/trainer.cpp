#include "dbn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "dbn/image.hpp"

namespace dbn {

TrainConfig TrainConfig::desk_scale() {
    TrainConfig c;
    c.batch_size = 8;
    c.patch = 64;
    c.max_iters = 2000;
    c.log_every = 100;
    c.checkpoint_every = 500;
    return c;
}

TrainConfig TrainConfig::from_config(const Config& c) {
    TrainConfig t;
    t.batch_size = static_cast<int>(c.get_int("batch_size", t.batch_size));
    t.patch = static_cast<int>(c.get_int("patch", t.patch));
    t.base_lr = c.get_real("base_lr", t.base_lr);
    t.lr_drop_start = c.get_int("lr_drop_start", t.lr_drop_start);
    t.lr_drop_every = c.get_int("lr_drop_every", t.lr_drop_every);
    t.lr_floor = c.get_real("lr_floor", t.lr_floor);
    t.max_iters = c.get_int("max_iters", t.max_iters);
    t.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long>(t.seed)));
    t.align_mode = parse_align_mode(c.get("align", align_mode_name(t.align_mode)));
    t.single_frame_mode = c.get_bool("single_frame_mode", t.single_frame_mode);
    t.log_every = c.get_int("log_every", t.log_every);
    t.checkpoint_every = c.get_int("checkpoint_every", t.checkpoint_every);
    t.crops_per_image = static_cast<int>(c.get_int("crops_per_image", t.crops_per_image));
    if (t.batch_size < 1 || t.patch < 8 || t.patch % 8 != 0 || t.max_iters < 1 || t.log_every < 1 ||
        t.checkpoint_every < 1 || t.base_lr <= 0 || t.lr_floor <= 0 || t.lr_floor >= t.base_lr) {
        raise("bad-config", "invalid training configuration");
    }
    return t;
}

void TrainConfig::to_config(Config& c) const {
    c.set("batch_size", std::to_string(batch_size));
    c.set("patch", std::to_string(patch));
    c.set("base_lr", std::to_string(base_lr));
    c.set("lr_drop_start", std::to_string(lr_drop_start));
    c.set("lr_drop_every", std::to_string(lr_drop_every));
    c.set("lr_floor", std::to_string(lr_floor));
    c.set("max_iters", std::to_string(max_iters));
    c.set("seed", std::to_string(seed));
    c.set("align", align_mode_name(align_mode));
    c.set("single_frame_mode", single_frame_mode ? "true" : "false");
    c.set("log_every", std::to_string(log_every));
    c.set("checkpoint_every", std::to_string(checkpoint_every));
    c.set("crops_per_image", std::to_string(crops_per_image));
}

double lr_at(long iter, const TrainConfig& cfg) {
    if (iter < 0) raise("bad-argument", "negative iteration");
    double lr = cfg.base_lr;
    if (iter >= cfg.lr_drop_start) {
        const long halvings = 1 + (iter - cfg.lr_drop_start) / cfg.lr_drop_every;
        lr = cfg.base_lr * std::pow(0.5, static_cast<double>(halvings));
    }
    return std::max(lr, cfg.lr_floor);
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

Tensor apply_geometry(const Tensor& frame, double scale, int rot, bool flip, int target_h, int target_w) {
    Tensor out = frame;
    if (scale != 1.0) out = resize_bilinear(out, target_h, target_w);
    if (rot != 0) out = rotate90(out, rot);
    if (flip) out = hflip(out);
    return out;
}

}  // namespace

TrainSample augment(const FrameStack& stack, const Tensor& sharp, const AugmentSpec& spec, int patch,
                    Rng& rng, const std::function<void(const std::string&)>& log) {
    stack.validate();
    require_same_shape(sharp, stack.frames[0], "augment sharp frame");
    const int h = stack.height(), w = stack.width();

    const bool flip = spec.horizontal_flip && rng.uniform_int(2) == 1;
    const int rot = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(spec.rotations)));
    double scale = spec.scales[rng.uniform_int(static_cast<std::uint32_t>(spec.scales.size()))];

    int sh = std::max(1, static_cast<int>(std::lround(h * scale)));
    int sw = std::max(1, static_cast<int>(std::lround(w * scale)));
    if (sh < patch || sw < patch) {
        if (log) {
            log("scale " + std::to_string(scale) + " leaves " + std::to_string(sh) + "x" +
                std::to_string(sw) + " < patch " + std::to_string(patch) + "; skipped");
        }
        scale = 1.0;
        sh = h;
        sw = w;
    }
    if (sh < patch || sw < patch) {
        raise("bad-argument", "frame smaller than the training patch");
    }

    // crop window in the post-rotation frame
    const int rh = (rot % 2 == 0) ? sh : sw;
    const int rw = (rot % 2 == 0) ? sw : sh;
    const int y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(rh - patch + 1)));
    const int x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(rw - patch + 1)));

    TrainSample out;
    for (int k = 0; k < 5; ++k) {
        Tensor t = apply_geometry(stack.frames[static_cast<std::size_t>(k)], scale, rot, flip, sh, sw);
        out.stack.frames[static_cast<std::size_t>(k)] = crop(t, y0, x0, patch, patch);
    }
    Tensor t = apply_geometry(sharp, scale, rot, flip, sh, sw);
    out.sharp = crop(t, y0, x0, patch, patch);
    return out;
}

FrameStack make_stack(const std::vector<Tensor>& frames, int center_index, bool single_frame_mode) {
    if (frames.empty()) raise("bad-argument", "make_stack on empty frame list");
    const int n = static_cast<int>(frames.size());
    if (center_index < 0 || center_index >= n) raise("bad-argument", "center index out of range");
    FrameStack stack;
    for (int k = -2; k <= 2; ++k) {
        const int src = single_frame_mode ? center_index : std::clamp(center_index + k, 0, n - 1);
        stack.frames[static_cast<std::size_t>(k + 2)] = frames[static_cast<std::size_t>(src)];
    }
    return stack;
}

// ---------------------------------------------------------------------------
// Steps

float train_step(ModelParams& params, OptimizerState& opt, const Tensor& batch_input,
                 const Tensor& batch_target, long iter, const TrainConfig& cfg) {
    ForwardCacheT<float> cache;
    Tensor out = forward(params, batch_input, true, &cache);
    auto [loss, grad] = mse_loss(out, batch_target);
    if (!std::isfinite(loss)) {
        raise("non-finite-loss", "loss is not finite at iteration " + std::to_string(iter));
    }
    auto grads = backward(params, cache, grad);

    // Reject non-finite gradients before any parameter is touched, so an
    // aborted step leaves the model in its last good state.
    for (const auto& lg : grads.layers) {
        for (float v : lg.weights.data) {
            if (!std::isfinite(v)) raise("non-finite-gradient", "at iteration " + std::to_string(iter));
        }
        for (float v : lg.bias.data) {
            if (!std::isfinite(v)) raise("non-finite-gradient", "at iteration " + std::to_string(iter));
        }
    }

    const float lr = static_cast<float>(lr_at(iter, cfg));
    std::size_t idx = 0;
    const auto& defs = dbn_layers();
    for (std::size_t li = 0; li < defs.size(); ++li) {
        auto& lp = params.layers[li];
        auto& lg = grads.layers[li];
        adam_step(lp.weights, lg.weights, opt.states[idx++], lr);
        adam_step(lp.bias, lg.bias, opt.states[idx++], lr);
        if (defs[li].has_bn) {
            adam_step_vec(lp.bn.gamma, lg.gamma, opt.states[idx++], lr);
            adam_step_vec(lp.bn.beta, lg.beta, opt.states[idx++], lr);
        }
    }
    params.iteration = iter + 1;
    return loss;
}

// ---------------------------------------------------------------------------
// Dataset

PairDataset PairDataset::load(const std::string& root, const std::string& val_videos) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) raise("io-error", "dataset root " + root + " is not a directory");

    std::vector<std::string> val_ids;
    {
        std::string cur;
        for (const char c : val_videos + ",") {
            if (c == ',') {
                if (!cur.empty()) val_ids.push_back(cur);
                cur.clear();
            } else if (!std::isspace(static_cast<unsigned char>(c))) {
                cur.push_back(c);
            }
        }
    }

    std::vector<fs::path> video_dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory() && fs::is_directory(e.path() / "blurry")) video_dirs.push_back(e.path());
    }
    std::sort(video_dirs.begin(), video_dirs.end());
    if (video_dirs.empty()) raise("empty-input", "no video directories with blurry/ under " + root);

    auto list_png = [](const fs::path& dir) {
        std::vector<std::string> out;
        if (fs::is_directory(dir)) {
            for (const auto& e : fs::directory_iterator(dir)) {
                if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path().string());
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    };

    PairDataset data;
    for (const auto& dir : video_dirs) {
        VideoPairs v;
        v.id = dir.filename().string();
        v.blurry = list_png(dir / "blurry");
        v.sharp = list_png(dir / "sharp");
        if (v.blurry.empty() || v.blurry.size() != v.sharp.size()) {
            raise("bad-dataset", v.id + ": blurry/sharp frame counts disagree");
        }
        const bool is_val = std::find(val_ids.begin(), val_ids.end(), v.id) != val_ids.end();
        (is_val ? data.val : data.train).push_back(std::move(v));
    }
    if (data.train.empty()) raise("bad-dataset", "no training videos left after the validation split");
    return data;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

// Decoded-frame cache with FIFO eviction; desk-scale datasets fit entirely.
class FrameCache {
public:
    explicit FrameCache(std::size_t cap = 1024) : cap_(cap) {}

    const Tensor& get(const std::string& path) {
        auto it = map_.find(path);
        if (it != map_.end()) return it->second;
        if (map_.size() >= cap_) {
            map_.erase(order_.front());
            order_.erase(order_.begin());
        }
        auto [pos, inserted] = map_.emplace(path, load_image(path));
        order_.push_back(path);
        return pos->second;
    }

private:
    std::size_t cap_;
    std::unordered_map<std::string, Tensor> map_;
    std::vector<std::string> order_;
};

struct FrameRef {
    int video;
    int frame;
};

// Aligned-stack cache directory produced by the align subcommand, if any.
std::string aligned_path(const VideoPairs& v, int frame, int slot, AlignMode mode) {
    namespace fs = std::filesystem;
    const fs::path base = fs::path(v.blurry[static_cast<std::size_t>(frame)]).parent_path().parent_path();
    char name[48];
    std::snprintf(name, sizeof(name), "%05d_%d.png", frame, slot);
    return (base / (std::string("aligned_") + align_mode_name(mode)) / name).string();
}

FrameStack load_stack(const VideoPairs& v, int frame, const TrainConfig& cfg, FrameCache& cache) {
    const int n = static_cast<int>(v.blurry.size());
    if (cfg.single_frame_mode) {
        FrameStack s;
        const Tensor& center = cache.get(v.blurry[static_cast<std::size_t>(frame)]);
        for (auto& f : s.frames) f = center;
        return s;
    }
    if (cfg.align_mode != AlignMode::None) {
        // use cached aligned frames when present
        const std::string probe = aligned_path(v, frame, 0, cfg.align_mode);
        if (std::filesystem::exists(probe)) {
            FrameStack s;
            for (int k = 0; k < 5; ++k) {
                s.frames[static_cast<std::size_t>(k)] = cache.get(aligned_path(v, frame, k, cfg.align_mode));
            }
            return s;
        }
    }
    std::vector<Tensor> window;
    window.reserve(5);
    for (int k = -2; k <= 2; ++k) {
        const int j = std::clamp(frame + k, 0, n - 1);
        window.push_back(cache.get(v.blurry[static_cast<std::size_t>(j)]));
    }
    FrameStack s = make_stack(window, 2, false);
    if (cfg.align_mode != AlignMode::None) s = align_stack(s, cfg.align_mode);
    return s;
}

void fill_batch_slot(Tensor& input, Tensor& target, int slot, const TrainSample& sample) {
    const Tensor fused = sample.stack.fuse();
    std::memcpy(input.ptr() + static_cast<std::size_t>(slot) * fused.numel(), fused.ptr(),
                fused.numel() * sizeof(float));
    std::memcpy(target.ptr() + static_cast<std::size_t>(slot) * sample.sharp.numel(), sample.sharp.ptr(),
                sample.sharp.numel() * sizeof(float));
}

}  // namespace

std::string train_loop(const PairDataset& data, const TrainConfig& cfg, const std::string& out_dir,
                       const std::string& resume_path) {
    namespace fs = std::filesystem;
    if (data.train.empty()) raise("bad-dataset", "no training videos");
    fs::create_directories(out_dir);

    ModelParams params;
    OptimizerState opt;
    Rng rng(cfg.seed);
    long start_iter = 0;
    if (!resume_path.empty()) {
        LoadedCheckpoint loaded = load_checkpoint(resume_path);
        params = std::move(loaded.params);
        opt = loaded.opt ? std::move(*loaded.opt) : build_optimizer_state(params);
        if (loaded.rng) rng = *loaded.rng;
        start_iter = params.iteration;
    } else {
        params = build_model(cfg.seed);
        opt = build_optimizer_state(params);
    }

    std::vector<FrameRef> train_frames;
    for (std::size_t vi = 0; vi < data.train.size(); ++vi) {
        for (std::size_t fi = 0; fi < data.train[vi].blurry.size(); ++fi) {
            train_frames.push_back({static_cast<int>(vi), static_cast<int>(fi)});
        }
    }

    FrameCache cache;
    AugmentSpec aug;
    aug.crops_per_image = cfg.crops_per_image;

    // fixed validation probe: up to 4 center-cropped stacks per val video
    struct Probe {
        Tensor input, target;
    };
    std::vector<Probe> probes;
    for (const auto& v : data.val) {
        const int n = static_cast<int>(v.blurry.size());
        const int take = std::min(4, n);
        for (int t = 0; t < take; ++t) {
            const int frame = take == 1 ? 0 : t * (n - 1) / (take - 1);
            FrameStack stack = load_stack(v, frame, cfg, cache);
            const Tensor& sharp = cache.get(v.sharp[static_cast<std::size_t>(frame)]);
            const int h = stack.height(), w = stack.width();
            const int size = std::min({cfg.patch, h - h % 8, w - w % 8});
            const int y0 = (h - size) / 2, x0 = (w - size) / 2;
            Probe p;
            p.input = Tensor({1, 15, size, size});
            p.target = Tensor({1, 3, size, size});
            TrainSample s;
            for (int k = 0; k < 5; ++k) {
                s.stack.frames[static_cast<std::size_t>(k)] =
                    crop(stack.frames[static_cast<std::size_t>(k)], y0, x0, size, size);
            }
            s.sharp = crop(sharp, y0, x0, size, size);
            fill_batch_slot(p.input, p.target, 0, s);
            probes.push_back(std::move(p));
        }
    }

    auto validation_loss = [&]() -> double {
        if (probes.empty()) return std::numeric_limits<double>::quiet_NaN();
        double total = 0.0;
        for (const auto& p : probes) {
            Tensor out = forward(params, p.input, false);
            total += mse_loss(out, p.target).first;
        }
        return total / static_cast<double>(probes.size());
    };

    auto draw_batch = [&](Rng& r, Tensor& input, Tensor& target) {
        for (int b = 0; b < cfg.batch_size; ++b) {
            const FrameRef ref = train_frames[r.uniform_int(static_cast<std::uint32_t>(train_frames.size()))];
            const VideoPairs& v = data.train[static_cast<std::size_t>(ref.video)];
            FrameStack stack = load_stack(v, ref.frame, cfg, cache);
            const Tensor& sharp = cache.get(v.sharp[static_cast<std::size_t>(ref.frame)]);
            TrainSample sample = augment(stack, sharp, aug, cfg.patch, r);
            fill_batch_slot(input, target, b, sample);
        }
    };

    const std::string log_path = (fs::path(out_dir) / "training_log.csv").string();
    std::ofstream log(log_path, start_iter > 0 ? std::ios::app : std::ios::trunc);
    if (!log) raise("io-error", "cannot open " + log_path);
    if (start_iter == 0) log << "iter,train_loss,val_loss,lr\n";
    log.precision(9);

    auto checkpoint_name = [&](long iter) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "checkpoint_%06ld.dbnc", iter);
        return (fs::path(out_dir) / buf).string();
    };

    Tensor input({cfg.batch_size, 15, cfg.patch, cfg.patch});
    Tensor target({cfg.batch_size, 3, cfg.patch, cfg.patch});

    double loss_accum = 0.0;
    long loss_count = 0;
    auto write_row = [&](long iter) {
        double train_loss;
        if (loss_count > 0) {
            train_loss = loss_accum / static_cast<double>(loss_count);
        } else {
            // probe the first batch without disturbing the training stream
            Rng peek = rng;
            draw_batch(peek, input, target);
            train_loss = mse_loss(forward(params, input, false), target).first;
        }
        log << iter << ',' << train_loss << ',' << validation_loss() << ',' << lr_at(iter, cfg) << '\n';
        log.flush();
        if (!log) raise("io-error", "training log write failed");
        loss_accum = 0.0;
        loss_count = 0;
    };

    for (long iter = start_iter; iter < cfg.max_iters; ++iter) {
        if (iter % cfg.log_every == 0) write_row(iter);
        draw_batch(rng, input, target);
        float loss;
        try {
            loss = train_step(params, opt, input, target, iter, cfg);
        } catch (const Error& e) {
            if (e.kind() == "non-finite-loss" || e.kind() == "non-finite-gradient") {
                // parameters are still the last good state; preserve them
                save_checkpoint(params, &opt, &rng, checkpoint_name(iter) + ".aborted");
                log.flush();
            }
            throw;
        }
        loss_accum += loss;
        loss_count++;
        if ((iter + 1) % cfg.checkpoint_every == 0 && iter + 1 < cfg.max_iters) {
            save_checkpoint(params, &opt, &rng, checkpoint_name(iter + 1));
        }
    }
    if (cfg.max_iters % cfg.log_every == 0 && start_iter < cfg.max_iters) write_row(cfg.max_iters);

    const std::string final_path = (fs::path(out_dir) / "final.dbnc").string();
    save_checkpoint(params, &opt, &rng, final_path);
    return final_path;
}

}  // namespace dbn
