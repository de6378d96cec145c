#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dbn/align.hpp"
#include "dbn/model.hpp"

namespace dbn {

/// Forward pass on a stack of arbitrary size: reflect-pads the input up to
/// divisibility by 8, runs the network, crops the output back.
Tensor forward_padded(ModelParams& params, const FrameStack& stack);

struct TileGrid {
    int cells_x, cells_y;
    int cell_w, cell_h;
};

/// Cell layout used by tiled inference: ceil(W/tile_w) x ceil(H/tile_h)
/// non-overlapping cells, each processed with `overlap` pixels of context.
TileGrid plan_tiles(int width, int height, int tile_w, int tile_h);

/// Full-resolution inference: frames up to the tile size run in a single
/// pass (identical to forward_padded); larger frames are processed in
/// overlapping tiles cross-faded linearly so the blend weights sum to one
/// everywhere.
Tensor tiled_inference(ModelParams& params, const FrameStack& stack, int tile_w = 960, int tile_h = 540,
                       int overlap = 32);

struct MetricReport {
    struct FrameRow {
        std::string frame_id;
        double psnr_db;   // +inf when identical
        double mssim;
        double input_psnr_db;
        double input_mssim;
    };
    std::string method_label;
    std::vector<FrameRow> per_frame;
    bool has_ground_truth = false;

    /// Averages exclude +inf PSNR entries; the count of exclusions is
    /// reported alongside.
    double mean_psnr(int* excluded = nullptr) const;
    double mean_mssim() const;
    double mean_input_psnr(int* excluded = nullptr) const;
    double mean_input_mssim() const;

    void write_csv(const std::string& path) const;
    /// Summary rows in "method, psnr / mssim" form (Input baseline first).
    std::string summary() const;
};

/// Runs align + tiled inference over every frame of a video directory
/// (blurry/*.png with optional sharp/*.png ground truth, or a flat directory
/// of frames). Deblurred frames are written to out_dir; metrics are filled
/// when ground truth exists.
MetricReport eval_sequence(ModelParams& params, const std::string& video_dir, AlignMode align_mode,
                           const std::string& out_dir);

/// Sorted PNG paths directly under dir.
std::vector<std::string> list_frames(const std::string& dir);

}  // namespace dbn
