#include "dbn/blursynth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dbn/image.hpp"

namespace dbn {

int subsample_stride(const HighFpsSequence& seq) {
    if (seq.source_fps <= 0 || seq.target_fps <= 0) raise("bad-argument", "frame rates must be positive");
    const double ratio = seq.source_fps / seq.target_fps;
    const int stride = static_cast<int>(std::lround(ratio));
    if (stride < 1 || std::abs(ratio - stride) > 1e-9) {
        raise("bad-argument", "source/target fps ratio must be a positive integer, got " +
                                  std::to_string(ratio));
    }
    return stride;
}

std::vector<int> subsample_sharp(int frame_count, int stride) {
    if (stride < 1) raise("bad-argument", "stride must be >= 1");
    const int min_frames = 7;
    if (frame_count < min_frames) {
        raise("too-short-sequence", "need at least " + std::to_string(min_frames) + " frames, have " +
                                        std::to_string(frame_count));
    }
    std::vector<int> centers;
    for (int c = 3; c + 3 < frame_count; c += stride) centers.push_back(c);
    return centers;
}

std::vector<int> subsample_sharp(const HighFpsSequence& seq) {
    return subsample_sharp(static_cast<int>(seq.frame_paths.size()), subsample_stride(seq));
}

std::vector<Tensor> interpolate_subframes(const Tensor& a, const Tensor& b, const FlowField& flow_ab, int n) {
    if (n < 1) raise("bad-argument", "subframe count must be >= 1");
    require_same_shape(a, b, "interpolate_subframes");
    const int h = a.dim(1), w = a.dim(2);
    if (flow_ab.height() != h || flow_ab.width() != w) {
        raise("shape-mismatch", "flow " + format_shape(flow_ab.u.shape) + " vs frames " +
                                    format_shape(a.shape));
    }

    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int j = 1; j <= n; ++j) {
        const float t = static_cast<float>(j) / static_cast<float>(n + 1);
        Tensor frame({3, h, w});
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const float u = flow_ab.u.at2(y, x);
                const float v = flow_ab.v.at2(y, x);
                // content moves along +flow from a to b; sample each endpoint
                // at its own temporal offset and cross-fade
                const float ax = static_cast<float>(x) - t * u;
                const float ay = static_cast<float>(y) - t * v;
                const float bx = static_cast<float>(x) + (1.0f - t) * u;
                const float by = static_cast<float>(y) + (1.0f - t) * v;
                for (int c = 0; c < 3; ++c) {
                    frame.at3(c, y, x) = (1.0f - t) * sample_bilinear(a, c, ay, ax) +
                                         t * sample_bilinear(b, c, by, bx);
                }
            }
        }
        out.push_back(std::move(frame));
    }
    return out;
}

Tensor synthesize_blurry(const std::vector<Tensor>& window, const std::vector<FlowField>& flows,
                         int subframes) {
    if (window.size() != 7) raise("bad-argument", "window must hold 7 frames, has " + std::to_string(window.size()));
    if (flows.size() != 6) raise("missing-flow", "need 6 adjacent flows, have " + std::to_string(flows.size()));
    for (const auto& f : window) require_same_shape(f, window[0], "synthesize_blurry window");

    const std::size_t numel = window[0].numel();
    std::vector<double> acc(numel, 0.0);
    int images = 0;
    for (const auto& f : window) {
        for (std::size_t i = 0; i < numel; ++i) acc[i] += f.data[i];
        images++;
    }
    for (int k = 0; k < 6; ++k) {
        const auto inter = interpolate_subframes(window[static_cast<std::size_t>(k)],
                                                 window[static_cast<std::size_t>(k + 1)],
                                                 flows[static_cast<std::size_t>(k)], subframes);
        for (const auto& f : inter) {
            for (std::size_t i = 0; i < numel; ++i) acc[i] += f.data[i];
            images++;
        }
    }
    Tensor out(window[0].shape);
    const double inv = 1.0 / static_cast<double>(images);
    for (std::size_t i = 0; i < numel; ++i) out.data[i] = static_cast<float>(acc[i] * inv);
    return out;
}

std::vector<PairRecord> generate_pairs(const HighFpsSequence& seq, const std::string& video_id,
                                       const std::string& out_root, int subframes) {
    if (seq.frame_paths.empty()) raise("empty-input", "sequence has no frames");
    const auto centers = subsample_sharp(seq);

    namespace fs = std::filesystem;
    const fs::path base = fs::path(out_root) / video_id;
    fs::create_directories(base / "blurry");
    fs::create_directories(base / "sharp");

    std::vector<PairRecord> rows;
    char name[32];
    for (std::size_t pi = 0; pi < centers.size(); ++pi) {
        const int c = centers[pi];
        PairRecord rec{video_id, static_cast<int>(pi), c, false};
        try {
            std::vector<Tensor> window;
            window.reserve(7);
            for (int k = c - 3; k <= c + 3; ++k) {
                window.push_back(load_image(seq.frame_paths[static_cast<std::size_t>(k)]));
            }
            std::vector<FlowField> flows;
            flows.reserve(6);
            for (int k = 0; k < 6; ++k) {
                flows.push_back(compute_flow(window[static_cast<std::size_t>(k)],
                                             window[static_cast<std::size_t>(k + 1)]));
            }
            const Tensor blurry = synthesize_blurry(window, flows, subframes);
            std::snprintf(name, sizeof(name), "%05d.png", static_cast<int>(pi));
            save_image(blurry, (base / "blurry" / name).string());
            save_image(window[3], (base / "sharp" / name).string());
        } catch (const Error& e) {
            // I/O problems propagate; alignment failures only skip the pair
            if (e.kind() == "io-error" || e.kind() == "decode-error" || e.kind() == "unsupported-format") {
                throw;
            }
            rec.skipped = true;
        }
        rows.push_back(rec);
    }
    return rows;
}

void write_manifest(const std::vector<PairRecord>& rows, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) raise("io-error", "cannot open " + tmp);
        out << "video_id,pair_index,source_center_index,skipped_flag\n";
        for (const auto& r : rows) {
            out << r.video_id << ',' << r.pair_index << ',' << r.source_center_index << ','
                << (r.skipped ? 1 : 0) << '\n';
        }
        if (!out) raise("io-error", "write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) raise("io-error", "rename " + tmp + ": " + ec.message());
}

}  // namespace dbn
