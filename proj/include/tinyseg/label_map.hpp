#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tinyseg/tensor.hpp"

namespace tinyseg {

/// Per-pixel class indices, row-major (n, h, w). For the Gleason head the
/// classes are 0=BG, 1=NC, 2=GP3, 3=GP4, 4=GP5.
struct LabelMap {
    std::int64_t n = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<std::uint8_t> labels;

    std::int64_t numel() const { return n * h * w; }

    std::uint8_t at(std::int64_t in, std::int64_t ih, std::int64_t iw) const {
        return labels[static_cast<std::size_t>((in * h + ih) * w + iw)];
    }

    bool operator==(const LabelMap& other) const = default;
};

inline LabelMap make_label_map(std::int64_t n, std::int64_t h, std::int64_t w,
                               std::vector<std::uint8_t> labels) {
    require(static_cast<std::int64_t>(labels.size()) == n * h * w,
            "label map data length does not match (n,h,w)");
    return LabelMap{n, h, w, std::move(labels)};
}

/// Exact {0,1} channel masks, shape (n, num_classes, h, w); per pixel the
/// channel of the label is 1 and every other channel 0.
inline Tensor one_hot(const LabelMap& labels, int num_classes) {
    const Shape shape{labels.n, num_classes, labels.h, labels.w};
    std::vector<double> out(static_cast<std::size_t>(shape.numel()), 0.0);
    const std::int64_t plane = labels.h * labels.w;
    for (std::int64_t i = 0; i < labels.n; ++i) {
        for (std::int64_t p = 0; p < plane; ++p) {
            const std::uint8_t cls = labels.labels[static_cast<std::size_t>(i * plane + p)];
            require(cls < num_classes,
                    "one_hot: label " + std::to_string(int(cls)) + " out of range for " +
                        std::to_string(num_classes) + " classes");
            out[static_cast<std::size_t>((i * num_classes + cls) * plane + p)] = 1.0;
        }
    }
    return Tensor(shape, std::move(out));
}

}  // namespace tinyseg
