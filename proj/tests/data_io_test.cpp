#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <vector>

#include "tinyseg/tinyseg.hpp"

using namespace tinyseg;
using Catch::Matchers::ContainsSubstring;

namespace {

std::filesystem::path test_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("tinyseg_io_" + std::to_string(::getpid()) + "_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::vector<char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

}  // namespace

TEST_CASE("an all-white PPM loads as an all-ones tensor") {
    const auto dir = test_dir("white");
    write_text(dir / "white.ppm", std::string("P6\n2 2\n255\n") + std::string(12, '\xff'));
    const Tensor image = read_ppm(dir / "white.ppm");
    REQUIRE(image.shape() == Shape{1, 3, 2, 2});
    for (double v : image.data()) {
        REQUIRE(v == 1.0);
    }
}

TEST_CASE("PPM comments and whitespace are parsed") {
    const auto dir = test_dir("comments");
    write_text(dir / "c.ppm",
               std::string("P6 # magic\n# a comment line\n 2 # width\n1\n255\n") +
                   std::string(6, '\x00'));
    const Tensor image = read_ppm(dir / "c.ppm");
    REQUIRE(image.shape() == Shape{1, 3, 1, 2});
}

TEST_CASE("PPM round trip is within the 8-bit quantization") {
    Rng rng(1);
    std::vector<double> values(3 * 4 * 5);
    for (double& v : values) {
        v = rng.uniform(0.0, 1.0);
    }
    const Tensor image({1, 3, 4, 5}, std::move(values));
    const auto dir = test_dir("ppm_roundtrip");
    write_ppm(dir / "x.ppm", image);
    const Tensor back = read_ppm(dir / "x.ppm");
    for (std::size_t i = 0; i < image.data().size(); ++i) {
        REQUIRE(std::abs(back.data()[i] - image.data()[i]) <= 1.0 / 255.0);
    }
}

TEST_CASE("malformed PNM headers are rejected with the path in the message") {
    const auto dir = test_dir("bad_headers");
    write_text(dir / "magic.ppm", "P3\n2 2\n255\n");
    REQUIRE_THROWS_WITH(read_ppm(dir / "magic.ppm"), ContainsSubstring("magic.ppm"));
    write_text(dir / "depth.ppm", std::string("P6\n2 2\n65535\n") + std::string(24, '\x00'));
    REQUIRE_THROWS_AS(read_ppm(dir / "depth.ppm"), std::runtime_error);
    write_text(dir / "short.ppm", std::string("P6\n2 2\n255\n") + std::string(5, '\x00'));
    REQUIRE_THROWS_WITH(read_ppm(dir / "short.ppm"), ContainsSubstring("truncated"));
    REQUIRE_THROWS_AS(read_ppm(dir / "missing.ppm"), std::runtime_error);
}

TEST_CASE("PGM masks reject values above the label range") {
    const auto dir = test_dir("pgm_range");
    write_text(dir / "bad.pgm", std::string("P5\n2 1\n255\n") + std::string("\x01\x05", 2));
    REQUIRE_THROWS_WITH(read_pgm(dir / "bad.pgm"), ContainsSubstring("5"));
    write_text(dir / "ok.pgm", std::string("P5\n2 1\n255\n") + std::string("\x00\x04", 2));
    const LabelMap mask = read_pgm(dir / "ok.pgm");
    REQUIRE(mask.labels == std::vector<std::uint8_t>{0, 4});
}

TEST_CASE("load_sample validates matching dimensions") {
    const auto dir = test_dir("dims");
    write_text(dir / "img.ppm", std::string("P6\n2 2\n255\n") + std::string(12, '\x00'));
    write_text(dir / "mask.pgm", std::string("P5\n2 1\n255\n") + std::string(2, '\x00'));
    REQUIRE_THROWS_WITH(load_sample(dir / "img.ppm", dir / "mask.pgm"),
                        ContainsSubstring("do not match"));
}

TEST_CASE("saving and loading a synthetic sample preserves the mask exactly") {
    Rng rng(2);
    const Sample sample = synthesize_sample(32, rng);
    const auto dir = test_dir("sample_roundtrip");
    write_ppm(dir / "img.ppm", sample.image);
    write_pgm(dir / "mask.pgm", sample.mask);
    const Sample back = load_sample(dir / "img.ppm", dir / "mask.pgm");
    REQUIRE(back.mask.labels == sample.mask.labels);
    for (std::size_t i = 0; i < sample.image.data().size(); ++i) {
        REQUIRE(std::abs(back.image.data()[i] - sample.image.data()[i]) <= 1.0 / 255.0);
    }
}

TEST_CASE("save_mask raw round-trips the labels") {
    const LabelMap mask{1, 2, 2, {0, 1, 3, 4}};
    const auto dir = test_dir("mask_raw");
    save_mask(mask, dir / "m.pgm", MaskFormat::kRaw);
    REQUIRE(read_pgm(dir / "m.pgm").labels == mask.labels);
}

TEST_CASE("palette masks use the fixed colors") {
    const auto dir = test_dir("mask_palette");
    const LabelMap bg{1, 2, 2, {0, 0, 0, 0}};
    save_mask(bg, dir / "bg.ppm", MaskFormat::kPalette);
    const Tensor black = read_ppm(dir / "bg.ppm");
    for (double v : black.data()) {
        REQUIRE(v == 0.0);
    }

    const LabelMap gp5{1, 1, 1, {4}};
    save_mask(gp5, dir / "gp5.ppm", MaskFormat::kPalette);
    const Tensor red = read_ppm(dir / "gp5.ppm");
    REQUIRE(red.at(0, 0, 0, 0) == 1.0);
    REQUIRE(red.at(0, 1, 0, 0) == 0.0);
    REQUIRE(red.at(0, 2, 0, 0) == 0.0);
}

TEST_CASE("save_mask rejects labels outside 0..4") {
    const auto dir = test_dir("mask_range");
    REQUIRE_THROWS_AS(save_mask(LabelMap{1, 1, 1, {5}}, dir / "m.pgm", MaskFormat::kRaw),
                      std::invalid_argument);
}

TEST_CASE("synthetic generation is byte-identical per seed") {
    const auto dir_a = test_dir("synth_a");
    const auto dir_b = test_dir("synth_b");
    const auto manifest_a = generate_synthetic(8, 32, 7, dir_a);
    const auto manifest_b = generate_synthetic(8, 32, 7, dir_b);
    REQUIRE(read_bytes(manifest_a) == read_bytes(manifest_b));
    for (int i = 0; i < 8; ++i) {
        char img[32];
        char mask[32];
        std::snprintf(img, sizeof(img), "img_%04d.ppm", i);
        std::snprintf(mask, sizeof(mask), "mask_%04d.pgm", i);
        REQUIRE(read_bytes(dir_a / img) == read_bytes(dir_b / img));
        REQUIRE(read_bytes(dir_a / mask) == read_bytes(dir_b / mask));
    }
}

TEST_CASE("synthetic textures are pixelwise consistent with the mask") {
    Rng rng(3);
    const auto& colors = synth_detail::class_colors();
    for (int trial = 0; trial < 5; ++trial) {
        const Sample sample = synthesize_sample(32, rng);
        const std::int64_t pixels = 32 * 32;
        std::array<std::array<double, 3>, 5> sums{};
        std::array<std::int64_t, 5> counts{};
        for (std::int64_t p = 0; p < pixels; ++p) {
            const int cls = sample.mask.labels[static_cast<std::size_t>(p)];
            REQUIRE(cls <= 4);
            ++counts[static_cast<std::size_t>(cls)];
            for (int c = 0; c < 3; ++c) {
                sums[static_cast<std::size_t>(cls)][static_cast<std::size_t>(c)] +=
                    sample.image.data()[static_cast<std::size_t>(c * pixels + p)];
            }
        }
        for (int cls = 0; cls < 5; ++cls) {
            if (counts[static_cast<std::size_t>(cls)] < 30) {
                continue;  // too few pixels for a stable mean
            }
            for (int c = 0; c < 3; ++c) {
                const double mean = sums[static_cast<std::size_t>(cls)][static_cast<std::size_t>(c)] /
                                    static_cast<double>(counts[static_cast<std::size_t>(cls)]);
                // Noise is clipped to [0,1], so allow a modest band.
                REQUIRE(std::abs(mean - colors[static_cast<std::size_t>(cls)]
                                            [static_cast<std::size_t>(c)]) < 0.05);
            }
        }
    }
}

TEST_CASE("class-pixel prior: background majority, all classes present") {
    Rng rng(4);
    std::array<std::int64_t, 5> counts{};
    std::int64_t total = 0;
    for (int i = 0; i < 1000; ++i) {
        const Sample sample = synthesize_sample(24, rng);
        for (auto v : sample.mask.labels) {
            ++counts[v];
            ++total;
        }
    }
    REQUIRE(counts[0] * 2 > total);  // BG majority
    for (int cls = 1; cls <= 4; ++cls) {
        REQUIRE(counts[static_cast<std::size_t>(cls)] > 0);
    }
}

TEST_CASE("synthetic generation rejects tiny canvases") {
    Rng rng(5);
    REQUIRE_THROWS_AS(synthesize_sample(15, rng), std::invalid_argument);
}

TEST_CASE("manifest round trip resolves paths against its directory") {
    const auto dir = test_dir("manifest");
    generate_synthetic(2, 16, 1, dir);
    const auto entries = load_manifest(dir / "manifest.txt");
    REQUIRE(entries.size() == 2);
    REQUIRE(entries[0].split == "train");
    REQUIRE(std::filesystem::exists(entries[0].image));
    REQUIRE(entries[0].image.parent_path() == dir);
}

TEST_CASE("manifest parser skips comments and validates fields") {
    const auto dir = test_dir("manifest_parse");
    write_text(dir / "img.ppm", std::string("P6\n1 1\n255\n") + std::string(3, '\x00'));
    write_text(dir / "mask.pgm", std::string("P5\n1 1\n255\n") + std::string(1, '\x00'));
    write_text(dir / "manifest.txt",
               "# header comment\nimg.ppm\tmask.pgm\ttrain\n\nimg.ppm\tmask.pgm\ttest\n");
    // Duplicate image path on the second data line.
    REQUIRE_THROWS_WITH(load_manifest(dir / "manifest.txt"), ContainsSubstring("duplicate"));

    write_text(dir / "bad_split.txt", "img.ppm\tmask.pgm\tvalidation\n");
    REQUIRE_THROWS_WITH(load_manifest(dir / "bad_split.txt"), ContainsSubstring("split"));

    write_text(dir / "bad_fields.txt", "img.ppm mask.pgm train\n");
    REQUIRE_THROWS_AS(load_manifest(dir / "bad_fields.txt"), std::runtime_error);
}

TEST_CASE("manifest rejects missing files with the path in the error") {
    const auto dir = test_dir("manifest_missing");
    write_text(dir / "manifest.txt", "ghost.ppm\tghost.pgm\ttrain\n");
    REQUIRE_THROWS_WITH(load_manifest(dir / "manifest.txt"), ContainsSubstring("ghost.ppm"));
}

TEST_CASE("resize_sample at the current size is the identity") {
    Rng rng(6);
    const Sample sample = synthesize_sample(16, rng);
    const Sample same = resize_sample(sample, 16);
    REQUIRE(same.mask.labels == sample.mask.labels);
    for (std::size_t i = 0; i < sample.image.data().size(); ++i) {
        REQUIRE(same.image.data()[i] == sample.image.data()[i]);
    }
}

TEST_CASE("mask resizing introduces no new labels") {
    Rng rng(7);
    const Sample sample = synthesize_sample(32, rng);
    std::array<bool, 5> present{};
    for (auto v : sample.mask.labels) {
        present[v] = true;
    }
    const Sample small = resize_sample(sample, 16);
    for (auto v : small.mask.labels) {
        REQUIRE(present[v]);
    }
}

TEST_CASE("two-times mask upscale then downscale restores the original") {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::uint8_t> labels(64);
        for (auto& v : labels) {
            v = static_cast<std::uint8_t>(rng.uniform_int(0, 4));
        }
        const LabelMap mask{1, 8, 8, labels};
        const LabelMap up = resize_nearest(mask, 16, 16);
        const LabelMap down = resize_nearest(up, 8, 8);
        REQUIRE(down.labels == mask.labels);
    }
}
