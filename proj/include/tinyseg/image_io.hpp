#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tinyseg/label_map.hpp"
#include "tinyseg/ops.hpp"
#include "tinyseg/tensor.hpp"

namespace tinyseg {

/// One image/mask pair. The image is (1, 3, h, w) with values in [0, 1];
/// the mask holds class indices 0..4.
struct Sample {
    Tensor image;
    LabelMap mask;
};

enum class MaskFormat { kRaw, kPalette };

/// Display palette for mask rendering: BG black, NC green, GP3 yellow,
/// GP4 orange, GP5 red.
inline const std::array<std::array<std::uint8_t, 3>, 5>& mask_palette() {
    static const std::array<std::array<std::uint8_t, 3>, 5> kPalette{{
        {0, 0, 0},
        {0, 160, 0},
        {255, 255, 0},
        {255, 128, 0},
        {255, 0, 0},
    }};
    return kPalette;
}

namespace detail {

[[noreturn]] inline void io_fail(const std::filesystem::path& path, const std::string& what) {
    throw std::runtime_error(path.string() + ": " + what);
}

/// Reads one whitespace-delimited header token, skipping `#` comments.
inline std::string next_pnm_token(std::istream& in) {
    std::string token;
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') {
                ch = in.get();
            }
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = in.get();
    }
    while (ch != EOF && !std::isspace(ch)) {
        token.push_back(static_cast<char>(ch));
        ch = in.get();
    }
    return token;
}

struct PnmHeader {
    std::int64_t width = 0;
    std::int64_t height = 0;
};

inline PnmHeader read_pnm_header(std::istream& in, const char* magic,
                                 const std::filesystem::path& path) {
    if (next_pnm_token(in) != magic) {
        io_fail(path, std::string("not a ") + magic + " file");
    }
    PnmHeader header;
    try {
        header.width = std::stoll(next_pnm_token(in));
        header.height = std::stoll(next_pnm_token(in));
        const long long maxval = std::stoll(next_pnm_token(in));
        if (maxval != 255) {
            io_fail(path, "only 8-bit (maxval 255) files are supported");
        }
    } catch (const std::logic_error&) {
        io_fail(path, "malformed header");
    }
    if (header.width <= 0 || header.height <= 0) {
        io_fail(path, "malformed header dimensions");
    }
    return header;
}

}  // namespace detail

/// Binary PPM (P6) -> (1, 3, h, w) tensor scaled to [0, 1].
inline Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        detail::io_fail(path, "cannot open");
    }
    const detail::PnmHeader header = detail::read_pnm_header(in, "P6", path);
    const std::int64_t pixels = header.width * header.height;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(pixels * 3));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        detail::io_fail(path, "truncated pixel data");
    }
    std::vector<double> data(static_cast<std::size_t>(pixels * 3));
    for (std::int64_t p = 0; p < pixels; ++p) {
        for (std::int64_t c = 0; c < 3; ++c) {
            data[static_cast<std::size_t>(c * pixels + p)] =
                static_cast<double>(raw[static_cast<std::size_t>(p * 3 + c)]) / 255.0;
        }
    }
    return Tensor({1, 3, header.height, header.width}, std::move(data));
}

inline void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    const Shape s = image.shape();
    require(s.n == 1 && s.c == 3, "write_ppm: expected a (1,3,h,w) tensor, got " + s.str());
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        detail::io_fail(path, "cannot open for writing");
    }
    out << "P6\n" << s.w << ' ' << s.h << "\n255\n";
    const auto v = image.data();
    const std::int64_t pixels = s.h * s.w;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(pixels * 3));
    for (std::int64_t p = 0; p < pixels; ++p) {
        for (std::int64_t c = 0; c < 3; ++c) {
            const double x = v[static_cast<std::size_t>(c * pixels + p)];
            const double q = std::round(std::clamp(x, 0.0, 1.0) * 255.0);
            raw[static_cast<std::size_t>(p * 3 + c)] = static_cast<std::uint8_t>(q);
        }
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) {
        detail::io_fail(path, "write failed");
    }
}

/// Binary PGM (P5) -> label map; values above `max_label` are rejected.
inline LabelMap read_pgm(const std::filesystem::path& path, int max_label = 4) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        detail::io_fail(path, "cannot open");
    }
    const detail::PnmHeader header = detail::read_pnm_header(in, "P5", path);
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(header.width * header.height));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        detail::io_fail(path, "truncated pixel data");
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] > max_label) {
            detail::io_fail(path, "mask value " + std::to_string(int(raw[i])) +
                                      " exceeds maximum label " + std::to_string(max_label));
        }
    }
    return LabelMap{1, header.height, header.width, std::move(raw)};
}

inline void write_pgm(const std::filesystem::path& path, const LabelMap& mask) {
    require(mask.n == 1, "write_pgm: expected a single-image label map");
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        detail::io_fail(path, "cannot open for writing");
    }
    out << "P5\n" << mask.w << ' ' << mask.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(mask.labels.data()),
              static_cast<std::streamsize>(mask.labels.size()));
    if (!out) {
        detail::io_fail(path, "write failed");
    }
}

/// Loads an image/mask pair and validates that their dimensions agree.
inline Sample load_sample(const std::filesystem::path& image_path,
                          const std::filesystem::path& mask_path) {
    Sample sample{read_ppm(image_path), read_pgm(mask_path)};
    if (sample.image.shape().h != sample.mask.h || sample.image.shape().w != sample.mask.w) {
        detail::io_fail(mask_path, "mask dimensions " + std::to_string(sample.mask.w) + "x" +
                                       std::to_string(sample.mask.h) +
                                       " do not match image " + sample.image.shape().str());
    }
    return sample;
}

/// Writes a predicted mask either as raw class indices (P5) or as a
/// colorized P6 image using the fixed palette.
inline void save_mask(const LabelMap& mask, const std::filesystem::path& path,
                      MaskFormat format) {
    require(mask.n == 1, "save_mask: expected a single-image label map");
    for (std::uint8_t v : mask.labels) {
        require(v <= 4, "save_mask: label " + std::to_string(int(v)) + " out of range 0..4");
    }
    if (format == MaskFormat::kRaw) {
        write_pgm(path, mask);
        return;
    }
    const auto& palette = mask_palette();
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        detail::io_fail(path, "cannot open for writing");
    }
    out << "P6\n" << mask.w << ' ' << mask.h << "\n255\n";
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(mask.numel() * 3));
    for (std::size_t i = 0; i < mask.labels.size(); ++i) {
        const auto& color = palette[mask.labels[i]];
        raw[i * 3] = color[0];
        raw[i * 3 + 1] = color[1];
        raw[i * 3 + 2] = color[2];
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) {
        detail::io_fail(path, "write failed");
    }
}

/// Nearest-neighbour label resize; labels stay integral and no new labels
/// appear.
inline LabelMap resize_nearest(const LabelMap& mask, std::int64_t out_h, std::int64_t out_w) {
    require(out_h >= 1 && out_w >= 1, "resize_nearest: output dims must be >= 1");
    LabelMap out{mask.n, out_h, out_w,
                 std::vector<std::uint8_t>(static_cast<std::size_t>(mask.n * out_h * out_w))};
    for (std::int64_t n = 0; n < mask.n; ++n) {
        for (std::int64_t i = 0; i < out_h; ++i) {
            const auto src_i = std::min<std::int64_t>(
                mask.h - 1,
                static_cast<std::int64_t>((static_cast<double>(i) + 0.5) *
                                          static_cast<double>(mask.h) / static_cast<double>(out_h)));
            for (std::int64_t j = 0; j < out_w; ++j) {
                const auto src_j = std::min<std::int64_t>(
                    mask.w - 1, static_cast<std::int64_t>((static_cast<double>(j) + 0.5) *
                                                          static_cast<double>(mask.w) /
                                                          static_cast<double>(out_w)));
                out.labels[static_cast<std::size_t>((n * out_h + i) * out_w + j)] =
                    mask.at(n, src_i, src_j);
            }
        }
    }
    return out;
}

/// Resizes image (bilinear) and mask (nearest) to a square target size.
inline Sample resize_sample(const Sample& sample, std::int64_t target) {
    require(target >= 1, "resize_sample: target must be >= 1");
    if (sample.image.shape().h == target && sample.image.shape().w == target) {
        return sample;
    }
    return Sample{resize_bilinear(sample.image, target, target),
                  resize_nearest(sample.mask, target, target)};
}

}  // namespace tinyseg
