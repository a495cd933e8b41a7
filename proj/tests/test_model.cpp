#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oracle_helpers.hpp"
#include "wsol/image_io.hpp"
#include "wsol/model.hpp"
#include "wsol/rng.hpp"

using namespace wsol;
namespace fs = std::filesystem;

namespace {

std::string temp_dir() {
    static int counter = 0;
    std::string dir = (fs::temp_directory_path() / ("wsol_model_test_" + std::to_string(counter++))).string();
    fs::create_directories(dir);
    return dir;
}

// Two classes told apart by the color of a fixed patch: red for class 0,
// green for class 1. Linearly separable from GAP features.
TrainDataset color_patch_toy(int count, int img, uint64_t seed) {
    TrainDataset data;
    SplitMix64 rng(seed);
    for (int i = 0; i < count; ++i) {
        const int label = i % 2;
        Tensor x = Tensor::zeros({3, img, img});
        for (double& v : x.data()) v = rng.uniform(0.1, 0.3);
        for (int y = img / 2 - 2; y < img / 2 + 2; ++y) {
            for (int xx = img / 2 - 2; xx < img / 2 + 2; ++xx) {
                x.data()[(static_cast<size_t>(label) * img + y) * img + xx] = 1.0;
            }
        }
        data.images.push_back(x);
        data.labels.push_back(label);
    }
    return data;
}

NetworkSpec toy_spec(int img) {
    NetworkSpec spec;
    spec.classes = 2;
    spec.in_channels = 3;
    spec.in_h = img;
    spec.in_w = img;
    spec.layers = {LayerSpec::make_conv(3, 6, 3, 2, 1), LayerSpec::make_relu("block1")};
    return spec;
}

}  // namespace

TEST_CASE("forward shape contract on the default architecture") {
    Network net = Network::init(NetworkSpec::default_spec(4), 1);
    SplitMix64 rng(3);
    Tensor img = oracle::random_tensor({3, 64, 64}, rng, 0.0, 1.0);
    ForwardPass fp = forward_capture(net, img, "block3");
    CHECK(fp.scores.numel() == 4);
    CHECK(fp.channels == 32);
    CHECK(fp.height == 16);
    CHECK(fp.width == 16);
    ForwardPass early = forward_capture(net, img, "block1");
    CHECK(early.channels == 8);
    CHECK(early.height == 64);
    ForwardPass mid = forward_capture(net, img, "block2");
    CHECK(mid.channels == 16);
    CHECK(mid.height == 32);
    CHECK(forward_capture(net, img, "final").layer == "block3");
}

TEST_CASE("unknown capture name lists the valid ones") {
    Network net = Network::init(NetworkSpec::default_spec(4), 1);
    Tensor img = Tensor::zeros({3, 64, 64});
    CHECK_THROWS_WITH_AS(forward_capture(net, img, "blockX"), doctest::Contains("block1"),
                         std::invalid_argument);
}

TEST_CASE("identity conv passes ones through") {
    NetworkSpec spec;
    spec.classes = 2;
    spec.in_channels = 1;
    spec.in_h = 4;
    spec.in_w = 4;
    spec.layers = {LayerSpec::make_conv(1, 1, 3, 1, 1), LayerSpec::make_relu("block1")};
    Network net = Network::init(spec, 1);
    net.conv_w[0] = Tensor::zeros({1, 1, 3, 3});
    net.conv_w[0].data()[4] = 1.0;
    net.conv_b[0] = Tensor::zeros({1});
    ForwardPass fp = forward_capture(net, Tensor::full({1, 4, 4}, 1.0), "final");
    for (double v : fp.feature.data()) CHECK(v == 1.0);
}

TEST_CASE("gap+linear tail evaluates the two-channel example") {
    NetworkSpec spec;
    spec.classes = 2;
    spec.in_channels = 2;
    spec.in_h = 1;
    spec.in_w = 2;
    spec.layers = {LayerSpec::make_conv(2, 2, 1, 1, 0), LayerSpec::make_relu("block1")};
    Network net = Network::init(spec, 1);
    net.head_w = Tensor({2, 2}, {2, -1, 0, 0});
    // Z = [[1,3],[0,2]] laid out as (C=2, H=1, W=2).
    ForwardPass fp = forward_tail(net, "final", Tensor({2, 1, 2}, {1, 3, 0, 2}));
    CHECK(fp.scores.data()[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(fp.scores.data()[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("training reaches the separable toy") {
    TrainDataset data = color_patch_toy(32, 16, 99);
    Network net = Network::init(toy_spec(16), 7);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.lr = 0.05;
    cfg.batch = 8;
    cfg.seed = 11;
    TrainResult res = train(net, data, cfg);
    CHECK(res.epoch_loss.size() == 30);
    CHECK(res.epoch_loss.back() < res.epoch_loss.front());
    CHECK(accuracy(net, data) >= 0.95);
}

TEST_CASE("zero learning rate keeps the loss curve constant") {
    TrainDataset data = color_patch_toy(16, 16, 5);
    Network net = Network::init(toy_spec(16), 3);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.lr = 0.0;
    cfg.batch = 4;
    TrainResult res = train(net, data, cfg);
    for (double l : res.epoch_loss) {
        CHECK(l == doctest::Approx(res.epoch_loss[0]).epsilon(1e-12));
    }
}

TEST_CASE("same seed gives bitwise identical checkpoints") {
    TrainDataset data = color_patch_toy(16, 16, 5);
    const std::string dir = temp_dir();
    std::string paths[2];
    for (int run = 0; run < 2; ++run) {
        Network net = Network::init(toy_spec(16), 3);
        TrainConfig cfg;
        cfg.epochs = 3;
        cfg.batch = 4;
        cfg.seed = 21;
        TrainResult res = train(net, data, cfg);
        CheckpointMeta meta{cfg.epochs, cfg.seed, res.epoch_loss.back()};
        paths[run] = dir + "/run" + std::to_string(run) + ".ckpt";
        save_checkpoint(net, meta, paths[run]);
    }
    CHECK(read_file(paths[0]) == read_file(paths[1]));
}

TEST_CASE("checkpoint round trip is bitwise for forward outputs") {
    Network net = Network::init(NetworkSpec::default_spec(3), 17);
    const std::string path = temp_dir() + "/net.ckpt";
    save_checkpoint(net, CheckpointMeta{0, 17, 0.0}, path);
    CheckpointMeta meta;
    Network back = load_checkpoint(path, &meta);
    CHECK(meta.seed == 17);

    SplitMix64 rng(4);
    Tensor img = oracle::random_tensor({3, 64, 64}, rng, 0.0, 1.0);
    Tensor a = forward_logits(net, img);
    Tensor b = forward_logits(back, img);
    CHECK(a.data() == b.data());  // bitwise
}

TEST_CASE("checkpoint error paths") {
    Network net = Network::init(NetworkSpec::default_spec(2), 1);
    const std::string dir = temp_dir();
    const std::string path = dir + "/net.ckpt";
    save_checkpoint(net, CheckpointMeta{}, path);

    SUBCASE("truncated file is rejected, no partial net") {
        const std::string full = read_file(path);
        write_file(dir + "/cut.ckpt", full.substr(0, full.size() - 17));
        CHECK_THROWS_WITH_AS(load_checkpoint(dir + "/cut.ckpt"), doctest::Contains("truncated"),
                             std::runtime_error);
    }
    SUBCASE("future version is named in the error") {
        std::string bytes = read_file(path);
        bytes[8] = 9;  // bump the little-endian version field
        write_file(dir + "/v9.ckpt", bytes);
        CHECK_THROWS_WITH_AS(load_checkpoint(dir + "/v9.ckpt"), doctest::Contains("version 9"),
                             std::runtime_error);
    }
    SUBCASE("not a checkpoint") {
        write_file(dir + "/junk.ckpt", "hello world");
        CHECK_THROWS_AS(load_checkpoint(dir + "/junk.ckpt"), std::runtime_error);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint(dir + "/nope.ckpt"), std::runtime_error);
    }
}

TEST_CASE("classifier equivalency: gradient rows reproduce the head") {
    // (ds/dz)^T z == W z on a trained network.
    TrainDataset data = color_patch_toy(16, 16, 5);
    Network net = Network::init(toy_spec(16), 3);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch = 4;
    train(net, data, cfg);

    ForwardPass fp = forward_capture(net, data.images[0], "final");
    const int K = net.spec.classes, C = fp.pooled.numel();
    for (int k = 0; k < K; ++k) {
        Tensor pick = Tensor::zeros({1, K});
        pick.data()[(size_t)k] = 1.0;
        Tensor sk = fp.record->matmul(fp.record->leaf(pick), fp.scores);
        Tensor gz = fp.record->backward(sk).grad_of(fp.pooled);
        double via_grad = 0.0, via_w = 0.0;
        for (int c = 0; c < C; ++c) {
            via_grad += gz.data()[(size_t)c] * fp.pooled.data()[(size_t)c];
            via_w += net.head_w.data()[(size_t)k * C + c] * fp.pooled.data()[(size_t)c];
        }
        CHECK(std::abs(via_grad - via_w) <= 1e-9);
        CHECK(std::abs(via_grad - fp.scores.data()[(size_t)k]) <= 1e-9);
    }
}

TEST_CASE("cross entropy head gradient matches finite differences") {
    TrainDataset data = color_patch_toy(8, 16, 2);
    Network net = Network::init(toy_spec(16), 9);
    const Tensor img = data.images[0];
    const int label = data.labels[0];

    ComputationRecord rec;
    Tensor x = rec.leaf(img);
    Tensor w0 = rec.leaf(net.conv_w[0]);
    Tensor b0 = rec.leaf(net.conv_b[0]);
    Tensor h = rec.relu(rec.conv2d(x, w0, b0, 2, 1));
    Tensor wh = rec.leaf(net.head_w);
    Tensor loss = rec.cross_entropy(rec.linear(wh, rec.global_average_pool(h)), label);
    Tensor got = rec.backward(loss).grad_of(wh);

    auto f = [&](const Tensor& w) {
        ComputationRecord r;
        Tensor hh = r.relu(r.conv2d(r.leaf(img), r.leaf(net.conv_w[0]), r.leaf(net.conv_b[0]), 2, 1));
        return r.cross_entropy(r.linear(r.leaf(w), r.global_average_pool(hh)), label).value();
    };
    Tensor fd = finite_difference_gradient(f, net.head_w, 1e-5);
    double worst = 0;
    for (int i = 0; i < got.numel(); ++i) {
        worst = std::max(worst, oracle::rel_err(got.data()[(size_t)i], fd.data()[(size_t)i]));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("train input validation") {
    Network net = Network::init(toy_spec(16), 1);
    TrainConfig cfg;
    cfg.epochs = 1;
    SUBCASE("empty dataset") {
        TrainDataset empty;
        CHECK_THROWS_AS(train(net, empty, cfg), std::invalid_argument);
    }
    SUBCASE("label outside range") {
        TrainDataset bad = color_patch_toy(4, 16, 1);
        bad.labels[2] = 7;
        CHECK_THROWS_WITH_AS(train(net, bad, cfg), doctest::Contains("label"),
                             std::invalid_argument);
    }
}
