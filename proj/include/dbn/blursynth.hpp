#pragma once

#include <string>
#include <vector>

#include "dbn/align.hpp"
#include "dbn/tensor.hpp"

namespace dbn {

/// A high-framerate recording: ordered frame files at source_fps, subsampled
/// by source_fps/target_fps (must be integral) to the ground-truth rate.
struct HighFpsSequence {
    std::vector<std::string> frame_paths;
    double source_fps = 240.0;
    double target_fps = 30.0;
};

int subsample_stride(const HighFpsSequence& seq);

/// Indices of usable sharp frames: every stride-th source frame, offset so
/// each one has at least 3 source frames on both sides. A 7-frame sequence
/// yields exactly one.
std::vector<int> subsample_sharp(int frame_count, int stride);
std::vector<int> subsample_sharp(const HighFpsSequence& seq);

/// n evenly spaced in-between frames: both endpoints backward-warped by the
/// temporal fraction along flow_ab and cross-faded. flow_ab maps a's grid to
/// sample positions in b.
std::vector<Tensor> interpolate_subframes(const Tensor& a, const Tensor& b, const FlowField& flow_ab, int n);

/// Uniform average of the 7 window frames plus `subframes` interpolated
/// images per adjacent pair (67 images for the default 10), accumulated in
/// double precision.
Tensor synthesize_blurry(const std::vector<Tensor>& window, const std::vector<FlowField>& flows,
                         int subframes = 10);

struct PairRecord {
    std::string video_id;
    int pair_index;
    int source_center_index;
    bool skipped;
};

/// Runs the full pipeline for one sequence: writes blurry/NNNNN.png and
/// sharp/NNNNN.png under <out_root>/<video_id>/ and returns the manifest
/// rows. Pairs whose flow computation fails are skipped and recorded.
std::vector<PairRecord> generate_pairs(const HighFpsSequence& seq, const std::string& video_id,
                                       const std::string& out_root, int subframes = 10);

/// Appends (or creates with header) manifest.csv. Atomic rewrite.
void write_manifest(const std::vector<PairRecord>& rows, const std::string& path);

}  // namespace dbn
