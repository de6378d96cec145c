#include <cmath>
#include <filesystem>

#include <doctest.h>

#include "dbn/image.hpp"
#include "dbn/model.hpp"
#include "oracles.hpp"

using namespace dbn;

namespace {

FrameStack random_stack(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    FrameStack s;
    for (auto& f : s.frames) f = oracles::random_tensor<float>({3, h, w}, rng, 0.0, 1.0);
    return s;
}

TensorT<double> batched_input(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    return oracles::random_tensor<double>({1, 15, h, w}, rng, 0.0, 1.0);
}

}  // namespace

TEST_CASE("activation shapes match the layer table for a 128x128 input") {
    auto params = build_model(1);
    ForwardCacheT<float> cache;
    Tensor input({1, 15, 128, 128}, 0.25f);
    forward(params, input, false, &cache);

    struct Row {
        const char* name;
        int c, h, w;
    };
    const Row expected[] = {
        {"F0", 64, 128, 128}, {"D1", 64, 64, 64},    {"F1_1", 128, 64, 64}, {"F1_2", 128, 64, 64},
        {"D2", 256, 32, 32},  {"F2_1", 256, 32, 32}, {"F2_2", 256, 32, 32}, {"F2_3", 256, 32, 32},
        {"D3", 512, 16, 16},  {"F3_1", 512, 16, 16}, {"F3_2", 512, 16, 16}, {"F3_3", 512, 16, 16},
        {"U1", 256, 32, 32},  {"F4_1", 256, 32, 32}, {"F4_2", 256, 32, 32}, {"F4_3", 256, 32, 32},
        {"U2", 128, 64, 64},  {"F5_1", 128, 64, 64}, {"F5_2", 64, 64, 64},  {"U3", 64, 128, 128},
        {"F6_1", 15, 128, 128}, {"F6_2", 3, 128, 128},
    };
    const auto& defs = dbn_layers();
    REQUIRE(defs.size() == 22);
    for (std::size_t i = 0; i < defs.size(); ++i) {
        INFO("layer ", expected[i].name);
        CHECK(std::string(defs[i].name) == expected[i].name);
        CHECK(cache.out[i].shape == std::vector<int>{1, expected[i].c, expected[i].h, expected[i].w});
    }
}

TEST_CASE("F0 parameter count is 24,064 including biases") {
    auto params = build_model(7);
    CHECK(params.layers[0].weights.numel() + params.layers[0].bias.numel() == 24064);
    CHECK(params.layers[0].weights.shape == std::vector<int>{64, 15, 5, 5});
    // F6_2 weights per the table
    CHECK(params.layers.back().weights.shape == std::vector<int>{3, 15, 3, 3});
}

TEST_CASE("total trainable parameter count is a fixed constant") {
    auto params = build_model(3);
    CHECK(trainable_param_count(params) == 15305285);
}

TEST_CASE("equal seeds build bit-identical parameters") {
    auto a = build_model(99);
    auto b = build_model(99);
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        CHECK(a.layers[i].weights.data == b.layers[i].weights.data);
        CHECK(a.layers[i].bias.data == b.layers[i].bias.data);
    }
    auto c = build_model(100);
    CHECK(a.layers[0].weights.data != c.layers[0].weights.data);
}

TEST_CASE("forward on zeros stays strictly inside (0,1)") {
    auto params = build_model(5);
    Tensor input({1, 15, 16, 16}, 0.0f);
    auto y = forward(params, input, false);
    for (float v : y.data) {
        CHECK(std::isfinite(v));
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}

TEST_CASE("forward rejects extents not divisible by 8, suggesting padding") {
    auto params = build_model(5);
    Tensor input({1, 15, 16, 12}, 0.1f);
    CHECK_THROWS_WITH_AS(forward(params, input, false), doctest::Contains("pad"), Error);
}

TEST_CASE("forward is deterministic given params and input") {
    auto params = build_model(11);
    Tensor input({1, 15, 16, 16}, 0.3f);
    auto a = forward(params, input, false);
    auto b = forward(params, input, false);
    CHECK(a.data == b.data);
}

TEST_CASE("single-frame stacks use the identical parameter shapes") {
    auto params = build_model(2);
    auto stack = random_stack(16, 16, 8);
    // replicate the central frame 5 times
    FrameStack single;
    for (auto& f : single.frames) f = stack.frames[2];
    auto y = forward_stack(params, single, false);
    CHECK(y.shape == std::vector<int>{3, 16, 16});
}

TEST_CASE("zero grad_output yields zero parameter gradients") {
    auto params = build_model_t<double>(13);
    auto input = batched_input(16, 16, 13);
    ForwardCacheT<double> cache;
    forward(params, input, true, &cache);
    TensorT<double> gy({1, 3, 16, 16});
    auto grads = backward(params, cache, gy);
    for (const auto& lg : grads.layers) {
        for (double v : lg.weights.data) CHECK(v == 0.0);
        for (double v : lg.bias.data) CHECK(v == 0.0);
    }
    for (double v : grads.input.data) CHECK(v == 0.0);
}

TEST_CASE("whole-model gradients match finite differences on sampled parameters") {
    auto params = build_model_t<double>(21);
    auto input = batched_input(16, 16, 22);
    Rng rng(23);
    auto target = oracles::random_tensor<double>({1, 3, 16, 16}, rng, 0.0, 1.0);

    // Training-mode output depends only on batch statistics, so the running
    // stats drifting across evaluations does not perturb the loss.
    auto loss_of = [&]() {
        auto y = forward(params, input, true);
        return static_cast<double>(mse_loss(y, target).first);
    };

    ForwardCacheT<double> cache;
    auto y = forward(params, input, true, &cache);
    auto [loss, gy] = mse_loss(y, target);
    (void)loss;
    auto grads = backward(params, cache, gy);

    // sample 100 parameters across layers and compare to central differences
    Rng pick(29);
    const auto& defs = dbn_layers();
    double worst = 0.0;
    for (int s = 0; s < 100; ++s) {
        const std::size_t li = pick.uniform_int(static_cast<std::uint32_t>(defs.size()));
        auto& lp = params.layers[li];
        const bool use_weight = lp.weights.numel() > 0 && (pick.uniform() < 0.8);
        TensorT<double>& tensor = use_weight ? lp.weights : lp.bias;
        const TensorT<double>& gt = use_weight ? grads.layers[li].weights : grads.layers[li].bias;
        const std::size_t ei = pick.uniform_int(static_cast<std::uint32_t>(tensor.numel()));

        const double h = 1e-6;
        const double saved = tensor.data[ei];
        tensor.data[ei] = saved + h;
        const double lp_ = loss_of();
        tensor.data[ei] = saved - h;
        const double lm_ = loss_of();
        tensor.data[ei] = saved;
        const double fd = (lp_ - lm_) / (2.0 * h);
        const double an = gt.data[ei];
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4});
        worst = std::max(worst, rel);
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("central input frame has an identity gradient path") {
    auto params = build_model_t<double>(31);
    auto input = batched_input(16, 16, 32);
    Rng rng(33);
    auto target = oracles::random_tensor<double>({1, 3, 16, 16}, rng, 0.0, 1.0);

    ForwardCacheT<double> cache;
    auto y = forward(params, input, true, &cache);
    auto gy = mse_loss(y, target).second;
    auto grads = backward(params, cache, gy);

    // finite differences wrt a few central-frame pixels (channels 6..8)
    auto loss_of = [&]() {
        auto out = forward(params, input, true);
        return static_cast<double>(mse_loss(out, target).first);
    };
    Rng pick(37);
    for (int s = 0; s < 10; ++s) {
        const int c = 6 + static_cast<int>(pick.uniform_int(3));
        const int yy = static_cast<int>(pick.uniform_int(16));
        const int xx = static_cast<int>(pick.uniform_int(16));
        const std::size_t idx = (static_cast<std::size_t>(c) * 16 + yy) * 16 + xx;
        const double h = 1e-6;
        const double saved = input.data[idx];
        input.data[idx] = saved + h;
        const double lp = loss_of();
        input.data[idx] = saved - h;
        const double lm = loss_of();
        input.data[idx] = saved;
        const double fd = (lp - lm) / (2.0 * h);
        const double an = grads.input.data[idx];
        CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4}) < 1e-3);
    }
}

TEST_CASE("dump_filters writes 64 filter and 64 feature-map images") {
    auto params = build_model(41);
    auto stack = random_stack(16, 16, 42);
    const std::string dir = (std::filesystem::temp_directory_path() / "dbn_dump_test").string();
    std::filesystem::remove_all(dir);
    dump_filters(params, stack, dir);

    int filters = 0, maps = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (name.rfind("filter_", 0) == 0) filters++;
        if (name.rfind("featuremap_", 0) == 0) maps++;
    }
    CHECK(filters == 64);
    CHECK(maps == 64);

    // min-max normalization: a non-constant filter image spans the full range
    auto img = load_image(dir + "/filter_00.png");
    float lo = 1.0f, hi = 0.0f;
    for (float v : img.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo == 0.0f);
    CHECK(hi == 1.0f);
    std::filesystem::remove_all(dir);
}

TEST_CASE("dump_filters on a zero stack produces constant feature maps") {
    auto params = build_model(43);
    FrameStack stack;
    for (auto& f : stack.frames) f = Tensor({3, 16, 16});
    const std::string dir = (std::filesystem::temp_directory_path() / "dbn_dump_zero").string();
    std::filesystem::remove_all(dir);
    dump_filters(params, stack, dir);
    auto img = load_image(dir + "/featuremap_00.png");
    for (float v : img.data) CHECK(v == img.data[0]);
    std::filesystem::remove_all(dir);
}
