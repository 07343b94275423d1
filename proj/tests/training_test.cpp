#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <vector>

#include "tinyseg/tinyseg.hpp"

using namespace tinyseg;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

std::filesystem::path test_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("tinyseg_train_" + std::to_string(::getpid()) + "_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::vector<char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

std::vector<Sample> tiny_dataset(int count, int size, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Sample> samples;
    for (int i = 0; i < count; ++i) {
        samples.push_back(synthesize_sample(size, rng));
    }
    return samples;
}

ArchitectureSpec tiny_unet_spec() {
    ArchitectureSpec spec;
    spec.family = Family::kUnet;
    spec.depth = 2;
    spec.base_filters = 2;
    spec.input_size = 16;
    return spec;
}

bool same_params(const Model& a, const Model& b) {
    if (a.params.size() != b.params.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.params.entries().size(); ++i) {
        const auto& ea = a.params.entries()[i];
        const auto& eb = b.params.entries()[i];
        if (ea.name != eb.name || !(ea.value.shape() == eb.value.shape())) {
            return false;
        }
        if (std::memcmp(ea.value.data().data(), eb.value.data().data(),
                        ea.value.data().size() * sizeof(double)) != 0) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("one_hot encodes labels as unit channel vectors") {
    const LabelMap labels{1, 1, 1, {3}};
    const Tensor hot = one_hot(labels, 5);
    const std::vector<double> expected{0, 0, 0, 1, 0};
    for (int c = 0; c < 5; ++c) {
        REQUIRE(hot.at(0, c, 0, 0) == expected[static_cast<std::size_t>(c)]);
    }
}

TEST_CASE("one_hot of an all-background map fills channel zero") {
    const LabelMap labels{1, 2, 2, {0, 0, 0, 0}};
    const Tensor hot = one_hot(labels, 5);
    for (std::int64_t h = 0; h < 2; ++h) {
        for (std::int64_t w = 0; w < 2; ++w) {
            REQUIRE(hot.at(0, 0, h, w) == 1.0);
            for (int c = 1; c < 5; ++c) {
                REQUIRE(hot.at(0, c, h, w) == 0.0);
            }
        }
    }
}

TEST_CASE("argmax inverts one_hot") {
    Rng rng(91);
    std::vector<std::uint8_t> labels(36);
    for (auto& v : labels) {
        v = static_cast<std::uint8_t>(rng.uniform_int(0, 4));
    }
    const LabelMap map{1, 6, 6, labels};
    REQUIRE(argmax_channels(one_hot(map, 5)).labels == labels);
}

TEST_CASE("one_hot rejects out-of-range labels") {
    REQUIRE_THROWS_AS(one_hot(LabelMap{1, 1, 1, {5}}, 5), std::invalid_argument);
}

TEST_CASE("plain SGD takes the textbook step") {
    ParamStore params;
    params.add("p", Tensor::scalar(1.0));
    OptimizerConfig config;
    config.kind = OptimizerKind::kSgdMomentum;
    config.lr = 0.1;
    config.momentum = 0.0;
    Optimizer opt(config);
    opt.step(params, {{"p", {0.5}}});
    REQUIRE_THAT(params.get("p").item(), WithinAbs(0.95, 1e-15));
}

TEST_CASE("zero gradients leave parameters unchanged") {
    for (const OptimizerKind kind : {OptimizerKind::kSgdMomentum, OptimizerKind::kAdam}) {
        ParamStore params;
        params.add("p", Tensor::scalar(0.7));
        OptimizerConfig config;
        config.kind = kind;
        Optimizer opt(config);
        for (int i = 0; i < 3; ++i) {
            opt.step(params, {{"p", {0.0}}});
        }
        REQUIRE_THAT(params.get("p").item(), WithinAbs(0.7, 1e-15));
    }
}

TEST_CASE("SGD with zero momentum equals vanilla gradient descent") {
    ParamStore params;
    params.add("p", Tensor::scalar(2.0));
    OptimizerConfig config;
    config.kind = OptimizerKind::kSgdMomentum;
    config.lr = 0.05;
    config.momentum = 0.0;
    Optimizer opt(config);
    double reference = 2.0;
    for (int i = 0; i < 20; ++i) {
        const double g = 2.0 * params.get("p").item();  // d(p^2)/dp
        opt.step(params, {{"p", {g}}});
        reference -= 0.05 * (2.0 * reference);
        REQUIRE(params.get("p").item() == reference);
    }
}

TEST_CASE("Adam minimizes a quadratic bowl") {
    ParamStore params;
    params.add("p", Tensor::scalar(1.0));
    OptimizerConfig config;
    config.kind = OptimizerKind::kAdam;
    config.lr = 0.1;
    Optimizer opt(config);
    for (int i = 0; i < 200; ++i) {
        const double g = 2.0 * params.get("p").item();
        opt.step(params, {{"p", {g}}});
    }
    REQUIRE(std::abs(params.get("p").item()) < 0.05);
}

TEST_CASE("optimizer demands a gradient for every trainable parameter") {
    ParamStore params;
    params.add("a", Tensor::scalar(1.0));
    params.add("b", Tensor::scalar(2.0));
    Optimizer opt(OptimizerConfig{});
    REQUIRE_THROWS_WITH(opt.step(params, {{"a", {0.1}}}), ContainsSubstring("b"));
}

TEST_CASE("one epoch over four samples with batch two logs two steps") {
    const auto dir = test_dir("steps");
    TrainConfig config;
    config.arch = tiny_unet_spec();
    config.epochs = 1;
    config.batch_size = 2;
    config.seed = 5;
    config.checkpoint_path = dir / "model.ckpt";
    const TrainResult result = train(config, tiny_dataset(4, 16, 5));
    REQUIRE(result.history.size() == 2);
    REQUIRE(result.history[0].step == 1);
    REQUIRE(result.history[1].step == 2);
    REQUIRE(result.history[1].epoch == 1);
    REQUIRE(std::filesystem::exists(config.checkpoint_path));
}

TEST_CASE("training twice with the same seed is bit-identical") {
    const auto dir = test_dir("determinism");
    auto run = [&](const std::string& tag) {
        TrainConfig config;
        config.arch = tiny_unet_spec();
        config.epochs = 2;
        config.batch_size = 2;
        config.seed = 11;
        config.checkpoint_path = dir / (tag + ".ckpt");
        config.loss_log_path = dir / (tag + ".loss.csv");
        return train(config, tiny_dataset(4, 16, 3));
    };
    const TrainResult a = run("a");
    const TrainResult b = run("b");
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        REQUIRE(a.history[i].loss == b.history[i].loss);
    }
    REQUIRE(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));
    REQUIRE(read_bytes(dir / "a.loss.csv") == read_bytes(dir / "b.loss.csv"));
}

TEST_CASE("loss log has the pinned CSV header") {
    const auto dir = test_dir("losslog");
    TrainConfig config;
    config.arch = tiny_unet_spec();
    config.epochs = 1;
    config.batch_size = 4;
    config.seed = 2;
    config.checkpoint_path = dir / "m.ckpt";
    config.loss_log_path = dir / "loss.csv";
    train(config, tiny_dataset(4, 16, 2));
    std::ifstream in(config.loss_log_path);
    std::string line;
    std::getline(in, line);
    REQUIRE(line == "step,epoch,loss");
    std::getline(in, line);
    REQUIRE(line.rfind("1,1,", 0) == 0);
}

TEST_CASE("a non-finite loss aborts with a diagnostic") {
    const auto dir = test_dir("nonfinite");
    TrainConfig config;
    config.arch = tiny_unet_spec();
    config.epochs = 4;
    config.batch_size = 4;
    config.seed = 1;
    config.optimizer.lr = std::numeric_limits<double>::infinity();
    config.checkpoint_path = dir / "m.ckpt";
    REQUIRE_THROWS_WITH(train(config, tiny_dataset(4, 16, 1)),
                        ContainsSubstring("non-finite loss"));
}

TEST_CASE("train validates its configuration") {
    TrainConfig config;
    config.arch = tiny_unet_spec();
    REQUIRE_THROWS_WITH(train(config, {}), ContainsSubstring("empty"));
    config.checkpoint_path.clear();
    REQUIRE_THROWS_WITH(train(config, tiny_dataset(2, 16, 1)),
                        ContainsSubstring("checkpoint"));
    TrainConfig bn_config;
    bn_config.arch = tiny_unet_spec();
    bn_config.arch.family = Family::kResunet;
    bn_config.batch_size = 1;
    bn_config.checkpoint_path = "unused.ckpt";
    REQUIRE_THROWS_WITH(train(bn_config, tiny_dataset(2, 16, 1)),
                        ContainsSubstring("batch_size"));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    const auto dir = test_dir("roundtrip");
    ArchitectureSpec spec;
    spec.family = Family::kResunet;
    spec.depth = 2;
    spec.base_filters = 4;
    spec.input_size = 16;
    Model model = build_model(spec, std::uint64_t{77});
    const auto path = dir / "model.ckpt";
    save_checkpoint(model, path);
    const Model loaded = load_checkpoint(path);
    REQUIRE(loaded.spec == model.spec);
    REQUIRE(same_params(model, loaded));
}

TEST_CASE("eval-mode forward is identical after a checkpoint round trip") {
    const auto dir = test_dir("forward_roundtrip");
    ArchitectureSpec spec;
    spec.family = Family::kSegnet;
    spec.depth = 2;
    spec.base_filters = 4;
    spec.input_size = 16;
    Model model = build_model(spec, std::uint64_t{31});
    const auto path = dir / "model.ckpt";
    save_checkpoint(model, path);
    Model loaded = load_checkpoint(path);

    Rng rng(32);
    std::vector<double> values(3 * 16 * 16);
    for (double& v : values) {
        v = rng.uniform(0.0, 1.0);
    }
    const Tensor x({1, 3, 16, 16}, std::move(values));
    const Tensor ya = model.forward(x);
    const Tensor yb = loaded.forward(x);
    for (std::size_t i = 0; i < ya.data().size(); ++i) {
        REQUIRE(ya.data()[i] == yb.data()[i]);
    }
}

TEST_CASE("checkpoint loading rejects corrupted and truncated files") {
    const auto dir = test_dir("corrupt");
    Model model = build_model(tiny_unet_spec(), std::uint64_t{1});
    const auto path = dir / "model.ckpt";
    save_checkpoint(model, path);

    auto bytes = read_bytes(path);
    bytes[0] = 'X';
    {
        std::ofstream out(dir / "bad_magic.ckpt", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    REQUIRE_THROWS_WITH(load_checkpoint(dir / "bad_magic.ckpt"), ContainsSubstring("magic"));

    const auto good = read_bytes(path);
    {
        std::ofstream out(dir / "truncated.ckpt", std::ios::binary);
        out.write(good.data(), static_cast<std::streamsize>(good.size() / 2));
    }
    REQUIRE_THROWS_WITH(load_checkpoint(dir / "truncated.ckpt"), ContainsSubstring("truncated"));

    auto versioned = good;
    versioned[4] = 9;  // format version field
    {
        std::ofstream out(dir / "future.ckpt", std::ios::binary);
        out.write(versioned.data(), static_cast<std::streamsize>(versioned.size()));
    }
    REQUIRE_THROWS_WITH(load_checkpoint(dir / "future.ckpt"), ContainsSubstring("version"));
}

TEST_CASE("spec text round-trips through the canonical key=value block") {
    ArchitectureSpec spec = default_spec(Family::kFcn);
    spec.stride = 8;
    spec.base_filters = 16;
    spec.input_size = 64;
    const ArchitectureSpec parsed = spec_from_text(spec_to_text(spec));
    REQUIRE(parsed == spec);
}

TEST_CASE("training reduces the loss on a learnable toy problem") {
    const auto dir = test_dir("descent");
    TrainConfig config;
    config.arch = tiny_unet_spec();
    config.arch.base_filters = 4;
    config.epochs = 10;
    config.batch_size = 4;
    config.seed = 9;
    config.optimizer.lr = 3e-3;
    config.checkpoint_path = dir / "m.ckpt";
    const TrainResult result = train(config, tiny_dataset(4, 16, 9));
    REQUIRE(result.history.back().loss < result.history.front().loss);
    for (const LossRecord& r : result.history) {
        REQUIRE(std::isfinite(r.loss));
    }
}
