#include "dbn/infer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dbn/image.hpp"
#include "dbn/metrics.hpp"

namespace dbn {

namespace {

int pad_to8(int v) { return (8 - v % 8) % 8; }

}  // namespace

Tensor forward_padded(ModelParams& params, const FrameStack& stack) {
    stack.validate();
    const int h = stack.height(), w = stack.width();
    const int pb = pad_to8(h), pr = pad_to8(w);
    if (pb == 0 && pr == 0) return forward_stack(params, stack, false);

    FrameStack padded;
    for (int k = 0; k < 5; ++k) {
        padded.frames[static_cast<std::size_t>(k)] = pad_reflect(stack.frames[static_cast<std::size_t>(k)], pb, pr);
    }
    Tensor out = forward_stack(params, padded, false);
    return crop(out, 0, 0, h, w);
}

TileGrid plan_tiles(int width, int height, int tile_w, int tile_h) {
    TileGrid g;
    g.cells_x = (width + tile_w - 1) / tile_w;
    g.cells_y = (height + tile_h - 1) / tile_h;
    g.cell_w = (width + g.cells_x - 1) / g.cells_x;
    g.cell_h = (height + g.cells_y - 1) / g.cells_y;
    return g;
}

Tensor tiled_inference(ModelParams& params, const FrameStack& stack, int tile_w, int tile_h, int overlap) {
    stack.validate();
    const int h = stack.height(), w = stack.width();
    if (h <= tile_h && w <= tile_w) return forward_padded(params, stack);

    const TileGrid grid = plan_tiles(w, h, tile_w, tile_h);
    Tensor acc({3, h, w});
    Tensor wsum({h, w});

    for (int cy = 0; cy < grid.cells_y; ++cy) {
        for (int cx = 0; cx < grid.cells_x; ++cx) {
            const int core_x0 = cx * grid.cell_w;
            const int core_y0 = cy * grid.cell_h;
            const int core_x1 = std::min(w, core_x0 + grid.cell_w);
            const int core_y1 = std::min(h, core_y0 + grid.cell_h);
            // processed region: cell expanded by the overlap, clipped
            const int x0 = std::max(0, core_x0 - overlap);
            const int y0 = std::max(0, core_y0 - overlap);
            const int x1 = std::min(w, core_x1 + overlap);
            const int y1 = std::min(h, core_y1 + overlap);

            FrameStack sub;
            for (int k = 0; k < 5; ++k) {
                sub.frames[static_cast<std::size_t>(k)] =
                    crop(stack.frames[static_cast<std::size_t>(k)], y0, x0, y1 - y0, x1 - x0);
            }
            Tensor tile = forward_padded(params, sub);

            // linear crossfade over the doubled overlap band around each
            // interior cell edge; weight 1 at frame borders
            for (int y = y0; y < y1; ++y) {
                float wy = 1.0f;
                if (core_y0 > 0) {
                    wy = std::min(wy, 0.5f + static_cast<float>(y - core_y0) / (2.0f * overlap));
                }
                if (core_y1 < h) {
                    wy = std::min(wy, 0.5f + static_cast<float>(core_y1 - 1 - y) / (2.0f * overlap));
                }
                wy = std::clamp(wy, 0.0f, 1.0f);
                for (int x = x0; x < x1; ++x) {
                    float wx = 1.0f;
                    if (core_x0 > 0) {
                        wx = std::min(wx, 0.5f + static_cast<float>(x - core_x0) / (2.0f * overlap));
                    }
                    if (core_x1 < w) {
                        wx = std::min(wx, 0.5f + static_cast<float>(core_x1 - 1 - x) / (2.0f * overlap));
                    }
                    wx = std::clamp(wx, 0.0f, 1.0f);
                    const float weight = wy * wx;
                    if (weight <= 0.0f) continue;
                    for (int c = 0; c < 3; ++c) {
                        acc.at3(c, y, x) += weight * tile.at3(c, y - y0, x - x0);
                    }
                    wsum.at2(y, x) += weight;
                }
            }
        }
    }

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float s = wsum.at2(y, x);
            for (int c = 0; c < 3; ++c) acc.at3(c, y, x) /= s;
        }
    }
    return acc;
}

// ---------------------------------------------------------------------------
// MetricReport

namespace {

double mean_excluding_inf(const std::vector<MetricReport::FrameRow>& rows, bool input, int* excluded) {
    double sum = 0.0;
    int n = 0, skipped = 0;
    for (const auto& r : rows) {
        const double v = input ? r.input_psnr_db : r.psnr_db;
        if (std::isinf(v)) {
            skipped++;
            continue;
        }
        sum += v;
        n++;
    }
    if (excluded != nullptr) *excluded = skipped;
    return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

double MetricReport::mean_psnr(int* excluded) const { return mean_excluding_inf(per_frame, false, excluded); }
double MetricReport::mean_input_psnr(int* excluded) const { return mean_excluding_inf(per_frame, true, excluded); }

double MetricReport::mean_mssim() const {
    double sum = 0.0;
    for (const auto& r : per_frame) sum += r.mssim;
    return per_frame.empty() ? std::numeric_limits<double>::quiet_NaN()
                             : sum / static_cast<double>(per_frame.size());
}

double MetricReport::mean_input_mssim() const {
    double sum = 0.0;
    for (const auto& r : per_frame) sum += r.input_mssim;
    return per_frame.empty() ? std::numeric_limits<double>::quiet_NaN()
                             : sum / static_cast<double>(per_frame.size());
}

void MetricReport::write_csv(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) raise("io-error", "cannot open " + tmp);
        out << "frame_id,psnr_db,mssim,input_psnr_db,input_mssim\n";
        out.precision(10);
        for (const auto& r : per_frame) {
            out << r.frame_id << ',' << r.psnr_db << ',' << r.mssim << ',' << r.input_psnr_db << ','
                << r.input_mssim << '\n';
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) raise("io-error", "rename " + tmp + ": " + ec.message());
}

std::string MetricReport::summary() const {
    std::ostringstream os;
    os.precision(4);
    if (!has_ground_truth) {
        os << "no ground truth: metrics absent\n";
        return os.str();
    }
    int excl_in = 0, excl_out = 0;
    const double in_psnr = mean_input_psnr(&excl_in);
    const double out_psnr = mean_psnr(&excl_out);
    os << "Input, " << in_psnr << " / " << std::fixed << mean_input_mssim() << '\n';
    os.unsetf(std::ios_base::fixed);
    os << method_label << ", " << out_psnr << " / " << std::fixed << mean_mssim() << '\n';
    if (excl_in + excl_out > 0) {
        os << "# " << excl_in << " input / " << excl_out << " output frames at +inf PSNR excluded from averages\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Sequence evaluation

std::vector<std::string> list_frames(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

MetricReport eval_sequence(ModelParams& params, const std::string& video_dir, AlignMode align_mode,
                           const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::string blurry_dir = video_dir;
    if (fs::is_directory(fs::path(video_dir) / "blurry")) blurry_dir = (fs::path(video_dir) / "blurry").string();
    const auto frames = list_frames(blurry_dir);
    if (frames.empty()) raise("empty-input", "no PNG frames under " + blurry_dir);

    const auto sharp_frames = list_frames((fs::path(video_dir) / "sharp").string());
    const bool has_gt = sharp_frames.size() == frames.size();

    fs::create_directories(out_dir);

    MetricReport report;
    report.method_label = std::string("dbn+") + align_mode_name(align_mode);
    report.has_ground_truth = has_gt;

    const int n = static_cast<int>(frames.size());
    for (int i = 0; i < n; ++i) {
        FrameStack stack;
        for (int k = -2; k <= 2; ++k) {
            const int j = std::clamp(i + k, 0, n - 1);
            stack.frames[static_cast<std::size_t>(k + 2)] = load_image(frames[static_cast<std::size_t>(j)]);
        }
        stack = align_stack(stack, align_mode);
        Tensor output = tiled_inference(params, stack);

        const std::string name = fs::path(frames[static_cast<std::size_t>(i)]).filename().string();
        save_image(output, (fs::path(out_dir) / name).string());

        if (has_gt) {
            const Tensor sharp = load_image(sharp_frames[static_cast<std::size_t>(i)]);
            MetricReport::FrameRow row;
            row.frame_id = name;
            row.psnr_db = psnr(output, sharp);
            row.mssim = mssim(output, sharp);
            row.input_psnr_db = psnr(stack.frames[FrameStack::center_index], sharp);
            row.input_mssim = mssim(stack.frames[FrameStack::center_index], sharp);
            report.per_frame.push_back(std::move(row));
        }
    }

    if (has_gt) {
        report.write_csv((fs::path(out_dir) / "metrics.csv").string());
    }
    {
        const std::string path = (fs::path(out_dir) / "summary.txt").string();
        std::ofstream out(path + ".tmp", std::ios::trunc);
        out << report.summary();
        out.close();
        std::error_code ec;
        fs::rename(path + ".tmp", path, ec);
        if (ec) raise("io-error", "rename summary: " + ec.message());
    }
    return report;
}

}  // namespace dbn
