#include "dbn/align.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dbn/image.hpp"

namespace dbn {

// ---------------------------------------------------------------------------
// Homography

Homography Homography::inverse() const {
    const auto& m = h;
    std::array<double, 9> adj = {
        m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
        m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
        m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3],
    };
    const double d = det();
    if (std::abs(d) < 1e-12) raise("singular-homography", "homography is not invertible");
    Homography out;
    for (int i = 0; i < 9; ++i) out.h[i] = adj[i] / d;
    out.normalize();
    return out;
}

double Homography::det() const {
    const auto& m = h;
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

void Homography::apply(double x, double y, double& ox, double& oy) const {
    const double w = h[6] * x + h[7] * y + h[8];
    const double iw = (w != 0.0) ? 1.0 / w : 0.0;
    ox = (h[0] * x + h[1] * y + h[2]) * iw;
    oy = (h[3] * x + h[4] * y + h[5]) * iw;
}

void Homography::normalize() {
    if (h[8] != 0.0) {
        const double s = 1.0 / h[8];
        for (auto& v : h) v *= s;
    }
}

// ---------------------------------------------------------------------------
// Corner detection and matching

namespace {

struct Corner {
    int x, y;
    float response;
};

std::vector<Corner> harris_corners(const Tensor& gray, int max_corners) {
    const int h = gray.dim(0), w = gray.dim(1);
    Tensor ix({h, w}), iy({h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int xm = std::max(0, x - 1), xp = std::min(w - 1, x + 1);
            const int ym = std::max(0, y - 1), yp = std::min(h - 1, y + 1);
            ix.at2(y, x) = 0.5f * (gray.at2(y, xp) - gray.at2(y, xm));
            iy.at2(y, x) = 0.5f * (gray.at2(yp, x) - gray.at2(ym, x));
        }
    }
    Tensor ixx({h, w}), iyy({h, w}), ixy({h, w});
    for (int i = 0; i < h * w; ++i) {
        ixx.data[i] = ix.data[i] * ix.data[i];
        iyy.data[i] = iy.data[i] * iy.data[i];
        ixy.data[i] = ix.data[i] * iy.data[i];
    }
    ixx = gaussian_blur(ixx, 1.5f);
    iyy = gaussian_blur(iyy, 1.5f);
    ixy = gaussian_blur(ixy, 1.5f);

    Tensor resp({h, w});
    float max_resp = 0.0f;
    for (int i = 0; i < h * w; ++i) {
        const float a = ixx.data[i], b = iyy.data[i], c = ixy.data[i];
        const float det = a * b - c * c;
        const float tr = a + b;
        resp.data[i] = det - 0.04f * tr * tr;
        max_resp = std::max(max_resp, resp.data[i]);
    }
    if (max_resp <= 0.0f) return {};

    const float threshold = 0.005f * max_resp;
    const int margin = 8;  // keep descriptors inside the image
    std::vector<Corner> corners;
    for (int y = margin; y < h - margin; ++y) {
        for (int x = margin; x < w - margin; ++x) {
            const float r = resp.at2(y, x);
            if (r < threshold) continue;
            bool is_max = true;
            for (int dy = -1; dy <= 1 && is_max; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    if (resp.at2(y + dy, x + dx) > r) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (is_max) corners.push_back({x, y, r});
        }
    }
    std::sort(corners.begin(), corners.end(), [](const Corner& a, const Corner& b) {
        if (a.response != b.response) return a.response > b.response;
        return a.y != b.y ? a.y < b.y : a.x < b.x;
    });
    if (static_cast<int>(corners.size()) > max_corners) corners.resize(static_cast<std::size_t>(max_corners));
    return corners;
}

constexpr int kPatch = 11;  // descriptor side

// Mean-subtracted, L2-normalized patch around the corner.
std::vector<float> describe(const Tensor& gray, const Corner& c) {
    std::vector<float> d(kPatch * kPatch);
    const int r = kPatch / 2;
    float mean = 0.0f;
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
            const float v = gray.at2(c.y + dy, c.x + dx);
            d[static_cast<std::size_t>((dy + r) * kPatch + dx + r)] = v;
            mean += v;
        }
    }
    mean /= static_cast<float>(d.size());
    float norm = 0.0f;
    for (auto& v : d) {
        v -= mean;
        norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm > 1e-8f) {
        for (auto& v : d) v /= norm;
    }
    return d;
}

}  // namespace

std::vector<Correspondence> detect_and_match(const Tensor& ref, const Tensor& neighbor, int max_corners) {
    if (ref.shape != neighbor.shape) {
        raise("shape-mismatch", "frames differ: " + format_shape(ref.shape) + " vs " +
                                    format_shape(neighbor.shape));
    }
    const Tensor gref = to_gray(ref);
    const Tensor gnei = to_gray(neighbor);
    const auto cref = harris_corners(gref, max_corners);
    const auto cnei = harris_corners(gnei, max_corners);
    if (cref.empty() || cnei.empty()) return {};

    std::vector<std::vector<float>> dref(cref.size()), dnei(cnei.size());
    for (std::size_t i = 0; i < cref.size(); ++i) dref[i] = describe(gref, cref[i]);
    for (std::size_t i = 0; i < cnei.size(); ++i) dnei[i] = describe(gnei, cnei[i]);

    std::vector<Correspondence> matches;
    for (std::size_t i = 0; i < cnei.size(); ++i) {
        double best = -2.0, second = -2.0;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < cref.size(); ++j) {
            double ncc = 0.0;
            for (std::size_t k = 0; k < dnei[i].size(); ++k) ncc += dnei[i][k] * dref[j][k];
            if (ncc > best) {
                second = best;
                best = ncc;
                best_j = j;
            } else if (ncc > second) {
                second = ncc;
            }
        }
        if (best < 0.7) continue;
        if (second > -2.0 && second > 0.95 * best) continue;  // ambiguous
        matches.push_back({static_cast<double>(cnei[i].x), static_cast<double>(cnei[i].y),
                           static_cast<double>(cref[best_j].x), static_cast<double>(cref[best_j].y), best});
    }
    return matches;
}

// ---------------------------------------------------------------------------
// MLESAC homography

namespace {

// Smallest eigenvector of a symmetric 9x9 matrix via cyclic Jacobi.
std::array<double, 9> smallest_eigenvector(std::array<std::array<double, 9>, 9> a) {
    std::array<std::array<double, 9>, 9> v{};
    for (int i = 0; i < 9; ++i) v[i][i] = 1.0;
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < 9; ++p) {
            for (int q = p + 1; q < 9; ++q) off += a[p][q] * a[p][q];
        }
        if (off < 1e-24) break;
        for (int p = 0; p < 9; ++p) {
            for (int q = p + 1; q < 9; ++q) {
                if (std::abs(a[p][q]) < 1e-30) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < 9; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (int k = 0; k < 9; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (int k = 0; k < 9; ++k) {
                    const double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    int min_i = 0;
    for (int i = 1; i < 9; ++i) {
        if (a[i][i] < a[min_i][min_i]) min_i = i;
    }
    std::array<double, 9> out;
    for (int i = 0; i < 9; ++i) out[i] = v[i][min_i];
    return out;
}

struct Normalizer {
    double cx = 0, cy = 0, scale = 1;

    void map(double x, double y, double& ox, double& oy) const {
        ox = (x - cx) * scale;
        oy = (y - cy) * scale;
    }
};

Normalizer normalizer_for(const std::vector<Correspondence>& pts, bool neighbor_side,
                          const std::vector<int>& idx) {
    Normalizer n;
    for (int i : idx) {
        n.cx += neighbor_side ? pts[static_cast<std::size_t>(i)].px : pts[static_cast<std::size_t>(i)].qx;
        n.cy += neighbor_side ? pts[static_cast<std::size_t>(i)].py : pts[static_cast<std::size_t>(i)].qy;
    }
    n.cx /= static_cast<double>(idx.size());
    n.cy /= static_cast<double>(idx.size());
    double dist = 0.0;
    for (int i : idx) {
        const double x = neighbor_side ? pts[static_cast<std::size_t>(i)].px : pts[static_cast<std::size_t>(i)].qx;
        const double y = neighbor_side ? pts[static_cast<std::size_t>(i)].py : pts[static_cast<std::size_t>(i)].qy;
        dist += std::hypot(x - n.cx, y - n.cy);
    }
    dist /= static_cast<double>(idx.size());
    n.scale = dist > 1e-12 ? std::sqrt(2.0) / dist : 1.0;
    return n;
}

// Normalized DLT fit of H (p -> q) on the given match indices.
bool fit_dlt(const std::vector<Correspondence>& m, const std::vector<int>& idx, Homography& out) {
    if (idx.size() < 4) return false;
    const Normalizer np = normalizer_for(m, true, idx);
    const Normalizer nq = normalizer_for(m, false, idx);

    std::array<std::array<double, 9>, 9> ata{};
    for (int i : idx) {
        double x, y, u, v;
        np.map(m[static_cast<std::size_t>(i)].px, m[static_cast<std::size_t>(i)].py, x, y);
        nq.map(m[static_cast<std::size_t>(i)].qx, m[static_cast<std::size_t>(i)].qy, u, v);
        const double r1[9] = {-x, -y, -1, 0, 0, 0, u * x, u * y, u};
        const double r2[9] = {0, 0, 0, -x, -y, -1, v * x, v * y, v};
        for (int a = 0; a < 9; ++a) {
            for (int b = a; b < 9; ++b) {
                ata[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] += r1[a] * r1[b] + r2[a] * r2[b];
            }
        }
    }
    for (int a = 0; a < 9; ++a) {
        for (int b = 0; b < a; ++b) {
            ata[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] =
                ata[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)];
        }
    }
    const auto hn = smallest_eigenvector(ata);

    // Denormalize: H = Tq^-1 * Hn * Tp
    std::array<double, 9> tq_inv = {1.0 / nq.scale, 0, nq.cx, 0, 1.0 / nq.scale, nq.cy, 0, 0, 1};
    std::array<double, 9> tp = {np.scale, 0, -np.scale * np.cx, 0, np.scale, -np.scale * np.cy, 0, 0, 1};

    auto matmul3 = [](const std::array<double, 9>& a, const std::array<double, 9>& b) {
        std::array<double, 9> c{};
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                for (int k = 0; k < 3; ++k) {
                    c[static_cast<std::size_t>(i * 3 + j)] +=
                        a[static_cast<std::size_t>(i * 3 + k)] * b[static_cast<std::size_t>(k * 3 + j)];
                }
            }
        }
        return c;
    };
    Homography result;
    result.h = matmul3(tq_inv, matmul3(hn, tp));
    if (std::abs(result.det()) < 1e-12) return false;
    result.normalize();
    out = result;
    return true;
}

double sq_transfer_error(const Homography& h, const Correspondence& m) {
    double x, y;
    h.apply(m.px, m.py, x, y);
    const double dx = x - m.qx, dy = y - m.qy;
    return dx * dx + dy * dy;
}

bool three_collinear(double x0, double y0, double x1, double y1, double x2, double y2) {
    const double cross = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
    return std::abs(cross) < 1e-9;
}

bool degenerate_sample(const std::vector<Correspondence>& m, const std::array<int, 4>& s) {
    for (int a = 0; a < 4; ++a) {
        for (int b = a + 1; b < 4; ++b) {
            for (int c = b + 1; c < 4; ++c) {
                const auto& pa = m[static_cast<std::size_t>(s[static_cast<std::size_t>(a)])];
                const auto& pb = m[static_cast<std::size_t>(s[static_cast<std::size_t>(b)])];
                const auto& pc = m[static_cast<std::size_t>(s[static_cast<std::size_t>(c)])];
                if (three_collinear(pa.px, pa.py, pb.px, pb.py, pc.px, pc.py)) return true;
                if (three_collinear(pa.qx, pa.qy, pb.qx, pb.qy, pc.qx, pc.qy)) return true;
            }
        }
    }
    return false;
}

}  // namespace

Homography estimate_homography_mlesac(const std::vector<Correspondence>& matches, std::uint64_t seed,
                                      int iters, double inlier_sigma, std::vector<std::uint8_t>* inlier_mask) {
    const std::size_t n = matches.size();
    if (n < 4) raise("no-model", "need at least 4 matches, have " + std::to_string(n));

    // Truncated negative log-likelihood: inliers pay r^2, outliers a fixed
    // penalty at the 95% chi-square gate for 2 dof.
    const double gate2 = 5.991 * inlier_sigma * inlier_sigma;

    Rng rng(seed);
    double best_cost = std::numeric_limits<double>::infinity();
    Homography best;
    bool have_model = false;

    for (int it = 0; it < iters; ++it) {
        std::array<int, 4> sample;
        for (int k = 0; k < 4; ++k) {
            int cand;
            bool dup;
            do {
                cand = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(n)));
                dup = false;
                for (int j = 0; j < k; ++j) dup |= (sample[static_cast<std::size_t>(j)] == cand);
            } while (dup);
            sample[static_cast<std::size_t>(k)] = cand;
        }
        if (degenerate_sample(matches, sample)) continue;

        Homography h;
        std::vector<int> idx(sample.begin(), sample.end());
        if (!fit_dlt(matches, idx, h)) continue;

        double cost = 0.0;
        for (const auto& m : matches) cost += std::min(sq_transfer_error(h, m), gate2);
        if (cost < best_cost) {
            best_cost = cost;
            best = h;
            have_model = true;
        }
    }
    if (!have_model) raise("no-model", "no non-degenerate hypothesis found");

    // Refit on the inlier set; a second round tightens the estimate.
    for (int round = 0; round < 2; ++round) {
        std::vector<int> inliers;
        for (std::size_t i = 0; i < n; ++i) {
            if (sq_transfer_error(best, matches[i]) < gate2) inliers.push_back(static_cast<int>(i));
        }
        if (inliers.size() < 4) break;
        Homography refit;
        if (fit_dlt(matches, inliers, refit)) best = refit;
    }

    if (inlier_mask != nullptr) {
        inlier_mask->assign(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            (*inlier_mask)[i] = sq_transfer_error(best, matches[i]) < gate2 ? 1 : 0;
        }
    }
    best.normalize();
    return best;
}

// ---------------------------------------------------------------------------
// TV-L1 optical flow (duality-based, coarse-to-fine)

namespace {

Tensor downscale(const Tensor& img, double factor) {
    const int h = img.dim(0), w = img.dim(1);
    const int nh = std::max(1, static_cast<int>(std::lround(h * factor)));
    const int nw = std::max(1, static_cast<int>(std::lround(w * factor)));
    // anti-alias before decimation
    const float sigma = 0.6f * std::sqrt(1.0f / static_cast<float>(factor * factor) - 1.0f);
    return resize_bilinear(gaussian_blur(img, sigma), nh, nw);
}

void centered_gradient(const Tensor& img, Tensor& gx, Tensor& gy) {
    const int h = img.dim(0), w = img.dim(1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int xm = std::max(0, x - 1), xp = std::min(w - 1, x + 1);
            const int ym = std::max(0, y - 1), yp = std::min(h - 1, y + 1);
            gx.at2(y, x) = 0.5f * (img.at2(y, xp) - img.at2(y, xm));
            gy.at2(y, x) = 0.5f * (img.at2(yp, x) - img.at2(ym, x));
        }
    }
}

// One pyramid level of the primal-dual scheme.
void tvl1_level(const Tensor& i0, const Tensor& i1, Tensor& u, Tensor& v, const FlowParams& prm) {
    const int h = i0.dim(0), w = i0.dim(1);
    const int size = h * w;
    const double l_t = prm.lambda * prm.theta;
    const float taut = static_cast<float>(prm.tau / prm.theta);
    const float theta = static_cast<float>(prm.theta);

    Tensor i1x({h, w}), i1y({h, w});
    centered_gradient(i1, i1x, i1y);

    std::vector<float> p11(static_cast<std::size_t>(size), 0), p12(static_cast<std::size_t>(size), 0);
    std::vector<float> p21(static_cast<std::size_t>(size), 0), p22(static_cast<std::size_t>(size), 0);
    std::vector<float> v1(static_cast<std::size_t>(size)), v2(static_cast<std::size_t>(size));
    std::vector<float> rho_c(static_cast<std::size_t>(size)), grad2(static_cast<std::size_t>(size));
    std::vector<float> i1w(static_cast<std::size_t>(size)), i1wx(static_cast<std::size_t>(size)),
        i1wy(static_cast<std::size_t>(size));
    std::vector<float> div_p1(static_cast<std::size_t>(size)), div_p2(static_cast<std::size_t>(size));

    for (int warp_i = 0; warp_i < prm.warps; ++warp_i) {
        // warp the target image and its gradients by the current flow
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y * w + x);
                const float sx = static_cast<float>(x) + u.data[i];
                const float sy = static_cast<float>(y) + v.data[i];
                i1w[i] = sample_bilinear(i1, 0, sy, sx);
                i1wx[i] = sample_bilinear(i1x, 0, sy, sx);
                i1wy[i] = sample_bilinear(i1y, 0, sy, sx);
            }
        }
        for (std::size_t i = 0; i < static_cast<std::size_t>(size); ++i) {
            grad2[i] = i1wx[i] * i1wx[i] + i1wy[i] * i1wy[i];
            rho_c[i] = i1w[i] - i1wx[i] * u.data[i] - i1wy[i] * v.data[i] - i0.data[i];
        }

        double error = std::numeric_limits<double>::infinity();
        for (int iter = 0; iter < prm.iterations && error > prm.stop_epsilon * prm.stop_epsilon; ++iter) {
            // data term: pointwise thresholding
            for (std::size_t i = 0; i < static_cast<std::size_t>(size); ++i) {
                const double rho = rho_c[i] + i1wx[i] * u.data[i] + i1wy[i] * v.data[i];
                float d1, d2;
                if (rho < -l_t * grad2[i]) {
                    d1 = static_cast<float>(l_t) * i1wx[i];
                    d2 = static_cast<float>(l_t) * i1wy[i];
                } else if (rho > l_t * grad2[i]) {
                    d1 = -static_cast<float>(l_t) * i1wx[i];
                    d2 = -static_cast<float>(l_t) * i1wy[i];
                } else if (grad2[i] > 1e-10f) {
                    d1 = static_cast<float>(-rho / grad2[i]) * i1wx[i];
                    d2 = static_cast<float>(-rho / grad2[i]) * i1wy[i];
                } else {
                    d1 = 0;
                    d2 = 0;
                }
                v1[i] = u.data[i] + d1;
                v2[i] = v.data[i] + d2;
            }

            // divergence of the dual variables (backward differences)
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y * w + x);
                    const float dxp1 = x > 0 ? p11[i] - p11[i - 1] : p11[i];
                    const float dyp1 = y > 0 ? p12[i] - p12[i - static_cast<std::size_t>(w)] : p12[i];
                    const float dxp2 = x > 0 ? p21[i] - p21[i - 1] : p21[i];
                    const float dyp2 = y > 0 ? p22[i] - p22[i - static_cast<std::size_t>(w)] : p22[i];
                    div_p1[i] = dxp1 + dyp1;
                    div_p2[i] = dxp2 + dyp2;
                }
            }

            error = 0.0;
            for (std::size_t i = 0; i < static_cast<std::size_t>(size); ++i) {
                const float nu = v1[i] + theta * div_p1[i];
                const float nv = v2[i] + theta * div_p2[i];
                error += (nu - u.data[i]) * (nu - u.data[i]) + (nv - v.data[i]) * (nv - v.data[i]);
                u.data[i] = nu;
                v.data[i] = nv;
            }
            error /= static_cast<double>(size);

            // dual ascent on the flow gradients (forward differences)
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y * w + x);
                    const float ux = x < w - 1 ? u.data[i + 1] - u.data[i] : 0;
                    const float uy = y < h - 1 ? u.data[i + static_cast<std::size_t>(w)] - u.data[i] : 0;
                    const float vx = x < w - 1 ? v.data[i + 1] - v.data[i] : 0;
                    const float vy = y < h - 1 ? v.data[i + static_cast<std::size_t>(w)] - v.data[i] : 0;
                    const float ng1 = 1.0f + taut * std::sqrt(ux * ux + uy * uy);
                    const float ng2 = 1.0f + taut * std::sqrt(vx * vx + vy * vy);
                    p11[i] = (p11[i] + taut * ux) / ng1;
                    p12[i] = (p12[i] + taut * uy) / ng1;
                    p21[i] = (p21[i] + taut * vx) / ng2;
                    p22[i] = (p22[i] + taut * vy) / ng2;
                }
            }
        }
    }
}

}  // namespace

FlowField compute_flow(const Tensor& ref, const Tensor& neighbor, const FlowParams& params) {
    if (ref.shape != neighbor.shape) {
        raise("shape-mismatch", "flow frames differ: " + format_shape(ref.shape) + " vs " +
                                    format_shape(neighbor.shape));
    }
    Tensor g0 = ref.rank() == 3 ? to_gray(ref) : ref;
    Tensor g1 = neighbor.rank() == 3 ? to_gray(neighbor) : neighbor;
    g0 = gaussian_blur(g0, 0.8f);
    g1 = gaussian_blur(g1, 0.8f);
    // The classic parameter set (lambda, theta, tau) balances the data term
    // against pixel-unit flow for 0..255 intensities; rescale accordingly.
    for (auto& v : g0.data) v *= 255.0f;
    for (auto& v : g1.data) v *= 255.0f;

    // cap the pyramid so the coarsest level keeps some structure
    int levels = params.levels;
    {
        int min_dim = std::min(g0.dim(0), g0.dim(1));
        int max_levels = 1;
        while (min_dim >= 24 && max_levels < levels) {
            min_dim = static_cast<int>(std::lround(min_dim * params.scale));
            max_levels++;
        }
        levels = std::max(1, std::min(levels, max_levels));
    }

    std::vector<Tensor> pyr0(static_cast<std::size_t>(levels)), pyr1(static_cast<std::size_t>(levels));
    pyr0[0] = std::move(g0);
    pyr1[0] = std::move(g1);
    for (int l = 1; l < levels; ++l) {
        pyr0[static_cast<std::size_t>(l)] = downscale(pyr0[static_cast<std::size_t>(l - 1)], params.scale);
        pyr1[static_cast<std::size_t>(l)] = downscale(pyr1[static_cast<std::size_t>(l - 1)], params.scale);
    }

    Tensor u({pyr0.back().dim(0), pyr0.back().dim(1)});
    Tensor v({pyr0.back().dim(0), pyr0.back().dim(1)});
    for (int l = levels - 1; l >= 0; --l) {
        tvl1_level(pyr0[static_cast<std::size_t>(l)], pyr1[static_cast<std::size_t>(l)], u, v, params);
        if (l > 0) {
            const auto& next = pyr0[static_cast<std::size_t>(l - 1)];
            const double sx = static_cast<double>(next.dim(1)) / u.dim(1);
            const double sy = static_cast<double>(next.dim(0)) / u.dim(0);
            Tensor nu = resize_bilinear(u, next.dim(0), next.dim(1));
            Tensor nv = resize_bilinear(v, next.dim(0), next.dim(1));
            for (auto& val : nu.data) val *= static_cast<float>(sx);
            for (auto& val : nv.data) val *= static_cast<float>(sy);
            u = std::move(nu);
            v = std::move(nv);
        }
    }

    FlowField flow;
    flow.u = std::move(u);
    flow.v = std::move(v);
    flow.valid.assign(flow.u.numel(), 1);
    return flow;
}

// ---------------------------------------------------------------------------
// Warping

Tensor warp(const Tensor& neighbor, const Homography& transform) {
    const int c = neighbor.dim(0), h = neighbor.dim(1), w = neighbor.dim(2);
    // transform maps neighbor -> reference; sampling goes the other way
    const Homography inv = transform.inverse();
    Tensor out({c, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double sx, sy;
            inv.apply(static_cast<double>(x), static_cast<double>(y), sx, sy);
            for (int ci = 0; ci < c; ++ci) {
                out.at3(ci, y, x) = sample_bilinear(neighbor, ci, static_cast<float>(sy), static_cast<float>(sx));
            }
        }
    }
    return out;
}

Tensor warp(const Tensor& neighbor, const FlowField& flow) {
    const int c = neighbor.dim(0), h = neighbor.dim(1), w = neighbor.dim(2);
    if (flow.height() != h || flow.width() != w) {
        raise("shape-mismatch", "flow field " + format_shape(flow.u.shape) + " vs frame " +
                                    format_shape(neighbor.shape));
    }
    Tensor out({c, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float sx = static_cast<float>(x) + flow.u.at2(y, x);
            const float sy = static_cast<float>(y) + flow.v.at2(y, x);
            for (int ci = 0; ci < c; ++ci) {
                out.at3(ci, y, x) = sample_bilinear(neighbor, ci, sy, sx);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

AlignMode parse_align_mode(const std::string& s) {
    if (s == "none") return AlignMode::None;
    if (s == "homog" || s == "homography") return AlignMode::Homography;
    if (s == "flow") return AlignMode::Flow;
    raise("bad-argument", "unknown align mode '" + s + "' (none|homog|flow)");
}

const char* align_mode_name(AlignMode mode) {
    switch (mode) {
        case AlignMode::None: return "none";
        case AlignMode::Homography: return "homog";
        case AlignMode::Flow: return "flow";
    }
    return "?";
}

FrameStack align_stack(const FrameStack& stack, AlignMode mode,
                       const std::function<void(const std::string&)>& log) {
    stack.validate();
    if (mode == AlignMode::None) return stack;

    FrameStack out;
    const Tensor& center = stack.frames[FrameStack::center_index];
    for (int k = 0; k < 5; ++k) {
        if (k == FrameStack::center_index) {
            out.frames[static_cast<std::size_t>(k)] = stack.frames[static_cast<std::size_t>(k)];
            continue;
        }
        const Tensor& frame = stack.frames[static_cast<std::size_t>(k)];
        if (mode == AlignMode::Homography) {
            try {
                const auto matches = detect_and_match(center, frame);
                const Homography h = estimate_homography_mlesac(matches, 12345, 2000, 1.0, nullptr);
                out.frames[static_cast<std::size_t>(k)] = warp(frame, h);
            } catch (const Error& e) {
                if (log) log(std::string("homography failed for frame ") + std::to_string(k) + ": " + e.what());
                out.frames[static_cast<std::size_t>(k)] = frame;
            }
        } else {
            const FlowField flow = compute_flow(center, frame);
            out.frames[static_cast<std::size_t>(k)] = warp(frame, flow);
        }
    }
    return out;
}

}  // namespace dbn
