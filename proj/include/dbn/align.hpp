#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dbn/model.hpp"
#include "dbn/tensor.hpp"

namespace dbn {

/// 3x3 projective transform mapping neighbor-frame coordinates to
/// reference-frame coordinates. Normalized so h[2][2] == 1 when nonzero.
struct Homography {
    std::array<double, 9> h{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Homography identity() { return Homography{}; }
    Homography inverse() const;
    /// Maps (x, y) through the transform.
    void apply(double x, double y, double& ox, double& oy) const;
    void normalize();
    double det() const;
};

/// Dense per-pixel displacement: reference coordinates map to neighbor
/// sample positions (x + u, y + v), i.e. backward warping.
struct FlowField {
    Tensor u, v;                     // [H,W]
    std::vector<std::uint8_t> valid;  // per pixel

    int height() const { return u.dim(0); }
    int width() const { return u.dim(1); }
};

/// A matched point pair: p in the neighbor frame, q in the reference frame.
struct Correspondence {
    double px, py;
    double qx, qy;
    double score;
};

/// Harris corners with normalized-patch descriptors, matched by correlation
/// with a ratio test. Deterministic given the inputs.
std::vector<Correspondence> detect_and_match(const Tensor& ref, const Tensor& neighbor,
                                             int max_corners = 1200);

/// Robust homography from matches: hypotheses from random 4-point minimal
/// samples scored by truncated squared residuals, refit on inliers with the
/// normalized direct linear transform. Throws Error("no-model") when fewer
/// than 4 matches or no valid hypothesis survives.
Homography estimate_homography_mlesac(const std::vector<Correspondence>& matches, std::uint64_t seed,
                                      int iters, double inlier_sigma, std::vector<std::uint8_t>* inlier_mask);

struct FlowParams {
    int levels = 5;
    int warps = 5;
    int iterations = 300;
    double tau = 0.25;
    double lambda = 0.15;
    double theta = 0.3;
    double stop_epsilon = 0.01;
    double scale = 0.5;
};

/// Coarse-to-fine duality-based TV-L1 flow between same-size frames.
FlowField compute_flow(const Tensor& ref, const Tensor& neighbor, const FlowParams& params = {});

/// Bilinear backward warp of `neighbor` into the reference grid;
/// out-of-bounds samples replicate the edge.
Tensor warp(const Tensor& neighbor, const Homography& transform);
Tensor warp(const Tensor& neighbor, const FlowField& flow);

enum class AlignMode { None, Homography, Flow };

AlignMode parse_align_mode(const std::string& s);
const char* align_mode_name(AlignMode mode);

/// Aligns every non-central frame onto the central one; the central frame
/// is never touched. A homography failure passes the frame through and
/// reports the event through `log`.
FrameStack align_stack(const FrameStack& stack, AlignMode mode,
                       const std::function<void(const std::string&)>& log = {});

}  // namespace dbn
