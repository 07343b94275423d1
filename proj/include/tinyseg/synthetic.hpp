#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "tinyseg/image_io.hpp"
#include "tinyseg/label_map.hpp"
#include "tinyseg/manifest.hpp"
#include "tinyseg/rng.hpp"
#include "tinyseg/tensor.hpp"

namespace tinyseg {

namespace synth_detail {

/// Mean RGB per class. Textures are these means plus per-pixel noise, so
/// the class of a pixel is recoverable from color alone and small models
/// can overfit the task.
inline const std::array<std::array<double, 3>, 5>& class_colors() {
    static const std::array<std::array<double, 3>, 5> kColors{{
        {0.92, 0.90, 0.95},  // BG
        {0.45, 0.75, 0.50},  // NC
        {0.85, 0.80, 0.25},  // GP3
        {0.90, 0.55, 0.20},  // GP4
        {0.75, 0.20, 0.25},  // GP5
    }};
    return kColors;
}

inline constexpr double kTextureNoise = 0.05;

/// Rasterizes one random shape (disc, axis-aligned rectangle, or annulus)
/// into `hit`; returns false if it could not be placed without touching
/// already occupied pixels.
inline bool place_shape(std::int64_t size, Rng& rng, const std::vector<bool>& occupied,
                        std::vector<bool>& hit) {
    const double s = static_cast<double>(size);
    const int kind = static_cast<int>(rng.uniform_int(0, 2));
    std::fill(hit.begin(), hit.end(), false);
    auto mark = [&](std::int64_t y, std::int64_t x) {
        hit[static_cast<std::size_t>(y * size + x)] = true;
    };
    if (kind == 0 || kind == 2) {
        const double r_out = rng.uniform(s / 10.0, s / 6.0);
        const double r_in = kind == 2 ? r_out * rng.uniform(0.4, 0.6) : -1.0;
        const double cy = rng.uniform(r_out, s - 1.0 - r_out);
        const double cx = rng.uniform(r_out, s - 1.0 - r_out);
        for (std::int64_t y = 0; y < size; ++y) {
            for (std::int64_t x = 0; x < size; ++x) {
                const double dy = static_cast<double>(y) - cy;
                const double dx = static_cast<double>(x) - cx;
                const double d = std::sqrt(dy * dy + dx * dx);
                if (d <= r_out && d >= r_in) {
                    mark(y, x);
                }
            }
        }
    } else {
        const double half_h = rng.uniform(s / 12.0, s / 6.0);
        const double half_w = rng.uniform(s / 12.0, s / 6.0);
        const double cy = rng.uniform(half_h, s - 1.0 - half_h);
        const double cx = rng.uniform(half_w, s - 1.0 - half_w);
        for (std::int64_t y = 0; y < size; ++y) {
            for (std::int64_t x = 0; x < size; ++x) {
                if (std::abs(static_cast<double>(y) - cy) <= half_h &&
                    std::abs(static_cast<double>(x) - cx) <= half_w) {
                    mark(y, x);
                }
            }
        }
    }
    bool any = false;
    for (std::size_t i = 0; i < hit.size(); ++i) {
        if (hit[i]) {
            if (occupied[i]) {
                return false;
            }
            any = true;
        }
    }
    return any;
}

}  // namespace synth_detail

/// One synthetic sample: a background canvas with 1-4 non-overlapping
/// shapes, each carrying a class in 1..4 and a class-colored noisy
/// texture. The mask is the exact shape rasterization.
inline Sample synthesize_sample(std::int64_t size, Rng& rng) {
    require(size >= 16, "synthesize_sample: size must be >= 16 to place shapes");
    const std::int64_t pixels = size * size;
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(pixels), 0);
    std::vector<bool> occupied(static_cast<std::size_t>(pixels), false);
    std::vector<bool> hit(static_cast<std::size_t>(pixels), false);

    const std::int64_t shape_count = rng.uniform_int(1, 4);
    for (std::int64_t k = 0; k < shape_count; ++k) {
        const auto cls = static_cast<std::uint8_t>(rng.uniform_int(1, 4));
        for (int attempt = 0; attempt < 40; ++attempt) {
            if (synth_detail::place_shape(size, rng, occupied, hit)) {
                for (std::size_t i = 0; i < hit.size(); ++i) {
                    if (hit[i]) {
                        occupied[i] = true;
                        mask[i] = cls;
                    }
                }
                break;
            }
        }
    }

    const auto& colors = synth_detail::class_colors();
    std::vector<double> image(static_cast<std::size_t>(3 * pixels));
    for (std::int64_t p = 0; p < pixels; ++p) {
        const auto& color = colors[mask[static_cast<std::size_t>(p)]];
        for (std::int64_t c = 0; c < 3; ++c) {
            const double v = color[static_cast<std::size_t>(c)] +
                             rng.normal(0.0, synth_detail::kTextureNoise);
            image[static_cast<std::size_t>(c * pixels + p)] = std::clamp(v, 0.0, 1.0);
        }
    }
    return Sample{Tensor({1, 3, size, size}, std::move(image)),
                  LabelMap{1, size, size, std::move(mask)}};
}

/// Writes `count` synthetic samples plus a manifest into `out_dir` and
/// returns the manifest path. Identical (count, size, seed) runs produce
/// byte-identical files. Note the PPM quantization to 8 bits; masks are
/// exact.
inline std::filesystem::path generate_synthetic(int count, int size, std::uint64_t seed,
                                                const std::filesystem::path& out_dir,
                                                const std::string& split = "train") {
    require(count >= 1, "generate_synthetic: count must be >= 1");
    require(valid_split(split), "generate_synthetic: invalid split '" + split + "'");
    std::filesystem::create_directories(out_dir);
    Rng rng(derive_seed(seed, 101));
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < count; ++i) {
        const Sample sample = synthesize_sample(size, rng);
        char image_name[32];
        char mask_name[32];
        std::snprintf(image_name, sizeof(image_name), "img_%04d.ppm", i);
        std::snprintf(mask_name, sizeof(mask_name), "mask_%04d.pgm", i);
        write_ppm(out_dir / image_name, sample.image);
        write_pgm(out_dir / mask_name, sample.mask);
        entries.push_back(ManifestEntry{image_name, mask_name, split});
    }
    const std::filesystem::path manifest_path = out_dir / "manifest.txt";
    write_manifest(manifest_path, entries);
    return manifest_path;
}

}  // namespace tinyseg
