#pragma once

#include <string>
#include <vector>

#include "dbn/align.hpp"
#include "dbn/checkpoint.hpp"
#include "dbn/config.hpp"
#include "dbn/model.hpp"

namespace dbn {

struct TrainConfig {
    int batch_size = 64;
    int patch = 128;
    double base_lr = 0.005;
    long lr_drop_start = 24000;
    long lr_drop_every = 8000;
    double lr_floor = 1e-6;
    long max_iters = 80000;
    std::uint64_t seed = 1;
    AlignMode align_mode = AlignMode::None;
    bool single_frame_mode = false;
    long log_every = 100;
    long checkpoint_every = 1000;
    int crops_per_image = 10;

    /// CI-sized run: batch 8, 64px patches, 2000 iterations.
    static TrainConfig desk_scale();
    static TrainConfig from_config(const Config& c);
    void to_config(Config& c) const;
};

/// Piecewise schedule: base_lr until lr_drop_start, then halved every
/// lr_drop_every iterations, never below lr_floor.
double lr_at(long iter, const TrainConfig& cfg);

struct AugmentSpec {
    bool horizontal_flip = true;
    int rotations = 4;                           // quarter turns 0..3
    std::vector<double> scales = {1.0, 0.5, 1.0 / 3.0, 0.25};
    int crops_per_image = 10;

    long multiplicity() const {
        return static_cast<long>(horizontal_flip ? 2 : 1) * rotations *
               static_cast<long>(scales.size()) * crops_per_image;
    }
};

struct TrainSample {
    FrameStack stack;
    Tensor sharp;
};

/// One geometric variant (flip x rotation x scale) plus a random crop,
/// applied identically to all five blurry frames and the sharp target.
/// Scales that leave the frame smaller than the patch are skipped for that
/// draw (falling back to full scale) and reported through `log`.
TrainSample augment(const FrameStack& stack, const Tensor& sharp, const AugmentSpec& spec, int patch,
                    Rng& rng, const std::function<void(const std::string&)>& log = {});

/// Temporal window [center-2, center+2] with edge replication; in
/// single-frame mode all five slots replicate the central frame.
FrameStack make_stack(const std::vector<Tensor>& frames, int center_index, bool single_frame_mode);

/// Forward (training mode), MSE against the sharp targets, backward, one
/// ADAM step at lr_at(iter). Raises Error("non-finite-loss") before touching
/// the parameters if the loss is not finite.
float train_step(ModelParams& params, OptimizerState& opt, const Tensor& batch_input,
                 const Tensor& batch_target, long iter, const TrainConfig& cfg);

struct VideoPairs {
    std::string id;
    std::vector<std::string> blurry;
    std::vector<std::string> sharp;
};

struct PairDataset {
    std::vector<VideoPairs> train;
    std::vector<VideoPairs> val;

    /// Scans <root>/<video>/{blurry,sharp}; videos named in val_videos
    /// (comma-separated) become the validation split, the rest train.
    static PairDataset load(const std::string& root, const std::string& val_videos);
};

/// Runs the training protocol: samples augmented patch batches, steps the
/// optimizer on the learning-rate schedule, logs CSV rows
/// (iter,train_loss,val_loss,lr) every log_every iterations, checkpoints
/// periodically and at the end. Returns the final checkpoint path.
std::string train_loop(const PairDataset& data, const TrainConfig& cfg, const std::string& out_dir,
                       const std::string& resume_path = "");

}  // namespace dbn
