// End-to-end runs of the command-line tool; DBN_BIN points at the binary.

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "dbn/common.hpp"
#include "dbn/image.hpp"

using namespace dbn;
namespace fs = std::filesystem;

namespace {

std::string binary() {
    const char* p = std::getenv("DBN_BIN");
    REQUIRE(p != nullptr);
    return p;
}

int run(const std::string& args) {
    const std::string cmd = binary() + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

struct Workspace {
    fs::path root;
    Workspace() : root(fs::temp_directory_path() / "dbn_cli_ws") {
        fs::remove_all(root);
        fs::create_directories(root / "frames");
        // 16-frame panning sequence, 32x48
        Rng rng(3);
        Tensor gray({32, 48});
        for (auto& v : gray.data) v = static_cast<float>(rng.uniform());
        gray = gaussian_blur(gray, 1.5f);
        char name[16];
        for (int k = 0; k < 16; ++k) {
            Tensor f({3, 32, 48});
            for (int c = 0; c < 3; ++c) {
                for (int y = 0; y < 32; ++y) {
                    for (int x = 0; x < 48; ++x) {
                        f.at3(c, y, x) = gray.at2(y, std::clamp(x - k, 0, 47));
                    }
                }
            }
            std::snprintf(name, sizeof(name), "%05d.png", k);
            save_image(f, (root / "frames" / name).string());
        }
    }
    ~Workspace() { fs::remove_all(root); }
    std::string path(const char* rel) const { return (root / rel).string(); }
};

}  // namespace

TEST_CASE("cli pipeline: synthesize, train, infer, eval, dump-filters") {
    Workspace ws;

    // synthesize: 16 frames, stride 8 -> centers 3 and 11
    CHECK(run("synthesize --input " + ws.path("frames") + " --output " + ws.path("data") +
              " --video-id pan") == 0);
    CHECK(fs::exists(ws.root / "data/pan/blurry/00001.png"));
    CHECK(fs::exists(ws.root / "data/pan/sharp/00001.png"));
    CHECK(fs::exists(ws.root / "data/manifest.csv"));
    CHECK(fs::exists(ws.root / "data/config_resolved.cfg"));

    // train: desk-scale preset shrunk further for the smoke run
    const std::string train_args = " --data " + ws.path("data") + " --desk-scale --batch-size 2" +
                                   " --patch 16 --max-iters 4 --log-every 2 --checkpoint-every 2";
    CHECK(run("--seed 7 train --out " + ws.path("run1") + train_args) == 0);
    CHECK(fs::exists(ws.root / "run1/final.dbnc"));
    CHECK(fs::exists(ws.root / "run1/training_log.csv"));
    CHECK(fs::exists(ws.root / "run1/config_resolved.cfg"));

    // identical seed + config give bit-identical checkpoints and logs
    CHECK(run("--seed 7 train --out " + ws.path("run2") + train_args) == 0);
    CHECK(read_bytes(ws.root / "run1/final.dbnc") == read_bytes(ws.root / "run2/final.dbnc"));
    CHECK(read_bytes(ws.root / "run1/training_log.csv") == read_bytes(ws.root / "run2/training_log.csv"));

    // infer on a flat 5-frame directory -> 5 outputs (edge replication)
    fs::create_directories(ws.root / "five");
    for (int k = 0; k < 5; ++k) {
        char name[16];
        std::snprintf(name, sizeof(name), "%05d.png", k);
        fs::copy_file(ws.root / "frames" / name, ws.root / "five" / name);
    }
    CHECK(run("--align none infer --model " + ws.path("run1/final.dbnc") + " --input " + ws.path("five") +
              " --out " + ws.path("deblurred")) == 0);
    int outputs = 0;
    for (const auto& e : fs::directory_iterator(ws.root / "deblurred")) {
        if (e.path().extension() == ".png") outputs++;
    }
    CHECK(outputs == 5);

    // eval with ground truth emits metrics; without, outputs only, exit 0
    CHECK(run("eval --model " + ws.path("run1/final.dbnc") + " --data " + ws.path("data/pan") + " --out " +
              ws.path("eval_out")) == 0);
    CHECK(fs::exists(ws.root / "eval_out/metrics.csv"));
    CHECK(fs::exists(ws.root / "eval_out/summary.txt"));

    CHECK(run("eval --model " + ws.path("run1/final.dbnc") + " --data " + ws.path("five") + " --out " +
              ws.path("eval_nogt")) == 0);
    CHECK_FALSE(fs::exists(ws.root / "eval_nogt/metrics.csv"));
    {
        std::ifstream f(ws.root / "eval_nogt/summary.txt");
        std::string text(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>{});
        CHECK(text.find("metrics absent") != std::string::npos);
    }

    // dump-filters writes 128 images
    CHECK(run("dump-filters --model " + ws.path("run1/final.dbnc") + " --frames " + ws.path("five") +
              " --out " + ws.path("filters")) == 0);
    int images = 0;
    for (const auto& e : fs::directory_iterator(ws.root / "filters")) {
        if (e.path().extension() == ".png") images++;
    }
    CHECK(images == 128);
}

TEST_CASE("cli exit codes: usage 1, help 0, runtime failure 2") {
    CHECK(run("") == 1);
    CHECK(run("bogus-subcommand") == 1);
    CHECK(run("--help") == 0);
    CHECK(run("infer --model /nonexistent.dbnc --input /tmp --out /tmp/dbn_cli_never") == 2);
}

TEST_CASE("cli config file merges under command-line flags") {
    Workspace ws;
    {
        std::ofstream f(ws.path("t.cfg"));
        f << "max_iters = 2\nbatch_size = 2\npatch = 16\nlog_every = 1\ncheckpoint_every = 2\nseed = 3\n";
    }
    CHECK(run("synthesize --input " + ws.path("frames") + " --output " + ws.path("data") +
              " --video-id pan") == 0);
    // flag overrides the file's max_iters
    CHECK(run("--config " + ws.path("t.cfg") + " train --data " + ws.path("data") + " --out " +
              ws.path("run") + " --max-iters 3") == 0);
    std::ifstream f(ws.root / "run/config_resolved.cfg");
    std::string text(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>{});
    CHECK(text.find("max_iters = 3") != std::string::npos);
    CHECK(text.find("batch_size = 2") != std::string::npos);
}
