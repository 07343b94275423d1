#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tinyseg/tape.hpp"
#include "tinyseg/tensor.hpp"

namespace tinyseg {

/// Argmax record of a 2x2 max-pool. `offsets` holds, for every pooled
/// element, the row-major offset of the selected maximum inside its input
/// window (0..3). `tag` is free-form and lets builders label which encoder
/// level produced the indices.
struct PoolIndices {
    Shape shape;
    std::vector<std::uint8_t> offsets;
    std::string tag;
};

/// 2x2 max-pool with stride 2. Spatial dims must be even. Ties select the
/// lowest window offset.
inline std::pair<Tensor, PoolIndices> max_pool2d(const Tensor& x, Tape* tape = nullptr) {
    const Shape s = x.shape();
    require(s.h % 2 == 0 && s.w % 2 == 0,
            "max_pool2d: spatial dims must be even, got " + s.str());
    const Shape out_shape{s.n, s.c, s.h / 2, s.w / 2};
    const auto xv = x.data();
    std::vector<double> out(static_cast<std::size_t>(out_shape.numel()));
    std::vector<std::uint8_t> offsets(out.size());
    std::size_t o = 0;
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            const double* plane = xv.data() + (n * s.c + c) * s.h * s.w;
            for (std::int64_t oh = 0; oh < out_shape.h; ++oh) {
                for (std::int64_t ow = 0; ow < out_shape.w; ++ow, ++o) {
                    const double* win = plane + 2 * oh * s.w + 2 * ow;
                    const double vals[4] = {win[0], win[1], win[s.w], win[s.w + 1]};
                    int best = 0;
                    for (int t = 1; t < 4; ++t) {
                        if (vals[t] > vals[best]) {
                            best = t;
                        }
                    }
                    out[o] = vals[best];
                    offsets[o] = static_cast<std::uint8_t>(best);
                }
            }
        }
    }
    PoolIndices indices{out_shape, offsets, {}};
    int node = -1;
    if (tape != nullptr) {
        const int nx = tape_input(tape, x);
        if (nx >= 0) {
            node = tape->record(out_shape, [nx, s, out_shape, offsets](
                                               Tape& t, const std::vector<double>& g) {
                std::vector<double> dx(static_cast<std::size_t>(s.numel()), 0.0);
                std::size_t o = 0;
                for (std::int64_t n = 0; n < s.n; ++n) {
                    for (std::int64_t c = 0; c < s.c; ++c) {
                        double* plane = dx.data() + (n * s.c + c) * s.h * s.w;
                        for (std::int64_t oh = 0; oh < out_shape.h; ++oh) {
                            for (std::int64_t ow = 0; ow < out_shape.w; ++ow, ++o) {
                                const int off = offsets[o];
                                plane[(2 * oh + off / 2) * s.w + 2 * ow + off % 2] += g[o];
                            }
                        }
                    }
                }
                t.add_grad(nx, dx);
            });
        }
    }
    return {tape_output(out_shape, std::move(out), tape, node), std::move(indices)};
}

/// Scatters `y` back to the argmax positions recorded by `max_pool2d`;
/// every other element of the (out_h, out_w) output is zero.
inline Tensor max_unpool2d(const Tensor& y, const PoolIndices& idx, std::int64_t out_h,
                           std::int64_t out_w, Tape* tape = nullptr) {
    const Shape s = y.shape();
    require(idx.shape == s, "max_unpool2d: indices shape " + idx.shape.str() +
                                " does not match input " + s.str());
    require(out_h == 2 * s.h && out_w == 2 * s.w,
            "max_unpool2d: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                " is not twice the pooled size " + s.str());
    const Shape out_shape{s.n, s.c, out_h, out_w};
    const auto yv = y.data();
    std::vector<double> out(static_cast<std::size_t>(out_shape.numel()), 0.0);
    std::size_t o = 0;
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            double* plane = out.data() + (n * s.c + c) * out_h * out_w;
            for (std::int64_t oh = 0; oh < s.h; ++oh) {
                for (std::int64_t ow = 0; ow < s.w; ++ow, ++o) {
                    const int off = idx.offsets[o];
                    plane[(2 * oh + off / 2) * out_w + 2 * ow + off % 2] = yv[o];
                }
            }
        }
    }
    int node = -1;
    if (tape != nullptr) {
        const int ny = tape_input(tape, y);
        if (ny >= 0) {
            const std::vector<std::uint8_t> offsets = idx.offsets;
            node = tape->record(out_shape, [ny, s, out_h, out_w, offsets](
                                               Tape& t, const std::vector<double>& g) {
                std::vector<double> dy(static_cast<std::size_t>(s.numel()));
                std::size_t o = 0;
                for (std::int64_t n = 0; n < s.n; ++n) {
                    for (std::int64_t c = 0; c < s.c; ++c) {
                        const double* plane = g.data() + (n * s.c + c) * out_h * out_w;
                        for (std::int64_t oh = 0; oh < s.h; ++oh) {
                            for (std::int64_t ow = 0; ow < s.w; ++ow, ++o) {
                                const int off = offsets[o];
                                dy[o] = plane[(2 * oh + off / 2) * out_w + 2 * ow + off % 2];
                            }
                        }
                    }
                }
                t.add_grad(ny, dy);
            });
        }
    }
    return tape_output(out_shape, std::move(out), tape, node);
}

}  // namespace tinyseg
