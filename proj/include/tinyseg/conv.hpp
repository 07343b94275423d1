#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "tinyseg/tape.hpp"
#include "tinyseg/tensor.hpp"

namespace tinyseg {

enum class Padding { kSame, kValid };

/// Convolution parameters. Weight layout is (out_c, in_c, kh, kw) with
/// square kernels; bias is stored as a (1, out_c, 1, 1) tensor.
struct ConvParams {
    Tensor weight;
    Tensor bias;
    int stride = 1;
    Padding padding = Padding::kSame;
};

namespace detail {

struct ConvGeometry {
    std::int64_t out_h = 0;
    std::int64_t out_w = 0;
    std::int64_t pad_top = 0;
    std::int64_t pad_left = 0;
};

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

inline ConvGeometry conv2d_geometry(std::int64_t h, std::int64_t w, std::int64_t k,
                                    std::int64_t stride, Padding padding) {
    ConvGeometry g;
    if (padding == Padding::kSame) {
        g.out_h = ceil_div(h, stride);
        g.out_w = ceil_div(w, stride);
        const std::int64_t pad_h = std::max<std::int64_t>((g.out_h - 1) * stride + k - h, 0);
        const std::int64_t pad_w = std::max<std::int64_t>((g.out_w - 1) * stride + k - w, 0);
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
    } else {
        g.out_h = (h - k) / stride + 1;
        g.out_w = (w - k) / stride + 1;
        require(h >= k && w >= k && g.out_h >= 1 && g.out_w >= 1,
                "conv2d: valid padding gives non-positive output for input " +
                    std::to_string(h) + "x" + std::to_string(w) + ", kernel " + std::to_string(k));
    }
    return g;
}

/// C (MxN, row stride ldc) = A (MxK, row stride lda) * B (KxN, row stride
/// ldb), optionally accumulating into C. Plain ikj order; the inner loop
/// runs over contiguous rows of B and C.
inline void gemm(std::int64_t m_count, std::int64_t n_count, std::int64_t k_count,
                 const double* a, std::int64_t lda, const double* b, std::int64_t ldb, double* c,
                 std::int64_t ldc, bool accumulate) {
    for (std::int64_t m = 0; m < m_count; ++m) {
        double* c_row = c + m * ldc;
        if (!accumulate) {
            std::fill(c_row, c_row + n_count, 0.0);
        }
        const double* a_row = a + m * lda;
        for (std::int64_t k = 0; k < k_count; ++k) {
            const double a_mk = a_row[k];
            if (a_mk == 0.0) {
                continue;
            }
            const double* b_row = b + k * ldb;
            for (std::int64_t n = 0; n < n_count; ++n) {
                c_row[n] += a_mk * b_row[n];
            }
        }
    }
}

/// C (MxN, ldc) += A (MxK, lda) * B^T where B is (NxK, ldb). Both inner
/// vectors are contiguous.
inline void gemm_abt(std::int64_t m_count, std::int64_t n_count, std::int64_t k_count,
                     const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
                     double* c, std::int64_t ldc) {
    for (std::int64_t m = 0; m < m_count; ++m) {
        const double* a_row = a + m * lda;
        double* c_row = c + m * ldc;
        for (std::int64_t n = 0; n < n_count; ++n) {
            const double* b_row = b + n * ldb;
            double acc = 0.0;
            for (std::int64_t k = 0; k < k_count; ++k) {
                acc += a_row[k] * b_row[k];
            }
            c_row[n] += acc;
        }
    }
}

/// Unfolds the output rows [oh0, oh0+oh_count) of one image into a column
/// matrix of shape (in_c*k*k, oh_count*out_w). Out-of-bounds taps are zero.
inline void im2col_tile(const double* x, std::int64_t in_c, std::int64_t h, std::int64_t w,
                        std::int64_t k, std::int64_t stride, const ConvGeometry& geo,
                        std::int64_t oh0, std::int64_t oh_count, double* col) {
    const std::int64_t tile_cols = oh_count * geo.out_w;
    std::int64_t row = 0;
    for (std::int64_t ic = 0; ic < in_c; ++ic) {
        const double* plane = x + ic * h * w;
        for (std::int64_t u = 0; u < k; ++u) {
            for (std::int64_t v = 0; v < k; ++v, ++row) {
                double* col_row = col + row * tile_cols;
                for (std::int64_t t = 0; t < oh_count; ++t) {
                    const std::int64_t oh = oh0 + t;
                    const std::int64_t ih = oh * stride + u - geo.pad_top;
                    double* dst = col_row + t * geo.out_w;
                    if (ih < 0 || ih >= h) {
                        std::fill(dst, dst + geo.out_w, 0.0);
                        continue;
                    }
                    const double* src_row = plane + ih * w;
                    if (stride == 1) {
                        const std::int64_t iw0 = v - geo.pad_left;
                        const std::int64_t lo = std::max<std::int64_t>(0, -iw0);
                        const std::int64_t hi =
                            std::min<std::int64_t>(geo.out_w, w - iw0);
                        std::fill(dst, dst + std::min(lo, geo.out_w), 0.0);
                        if (hi > lo) {
                            std::memcpy(dst + lo, src_row + iw0 + lo,
                                        static_cast<std::size_t>(hi - lo) * sizeof(double));
                        }
                        std::fill(dst + std::max(lo, hi), dst + geo.out_w, 0.0);
                    } else {
                        for (std::int64_t ow = 0; ow < geo.out_w; ++ow) {
                            const std::int64_t iw = ow * stride + v - geo.pad_left;
                            dst[ow] = (iw >= 0 && iw < w) ? src_row[iw] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col_tile`: accumulates the column matrix back into the
/// image gradient.
inline void col2im_tile(const double* col, std::int64_t in_c, std::int64_t h, std::int64_t w,
                        std::int64_t k, std::int64_t stride, const ConvGeometry& geo,
                        std::int64_t oh0, std::int64_t oh_count, double* dx) {
    const std::int64_t tile_cols = oh_count * geo.out_w;
    std::int64_t row = 0;
    for (std::int64_t ic = 0; ic < in_c; ++ic) {
        double* plane = dx + ic * h * w;
        for (std::int64_t u = 0; u < k; ++u) {
            for (std::int64_t v = 0; v < k; ++v, ++row) {
                const double* col_row = col + row * tile_cols;
                for (std::int64_t t = 0; t < oh_count; ++t) {
                    const std::int64_t oh = oh0 + t;
                    const std::int64_t ih = oh * stride + u - geo.pad_top;
                    if (ih < 0 || ih >= h) {
                        continue;
                    }
                    double* dst_row = plane + ih * w;
                    const double* src = col_row + t * geo.out_w;
                    for (std::int64_t ow = 0; ow < geo.out_w; ++ow) {
                        const std::int64_t iw = ow * stride + v - geo.pad_left;
                        if (iw >= 0 && iw < w) {
                            dst_row[iw] += src[ow];
                        }
                    }
                }
            }
        }
    }
}

inline std::int64_t conv_tile_rows(std::int64_t kernel_rows, std::int64_t out_w,
                                   std::int64_t out_h) {
    // Bound the column buffer to ~8 MB.
    const std::int64_t budget = (8 << 20) / 8;
    return std::clamp<std::int64_t>(budget / std::max<std::int64_t>(kernel_rows * out_w, 1), 1,
                                    out_h);
}

/// y (n, out_c, out_h, out_w) = x (n, in_c, h, w) * w; no bias.
inline std::vector<double> conv_forward(const double* x, const Shape& xs, const double* wgt,
                                        std::int64_t out_c, std::int64_t k, std::int64_t stride,
                                        const ConvGeometry& geo) {
    const std::int64_t kernel_rows = xs.c * k * k;
    const std::int64_t out_plane = geo.out_h * geo.out_w;
    std::vector<double> y(static_cast<std::size_t>(xs.n * out_c * out_plane));
    const std::int64_t tile_rows = conv_tile_rows(kernel_rows, geo.out_w, geo.out_h);
    std::vector<double> col(static_cast<std::size_t>(kernel_rows * tile_rows * geo.out_w));
    for (std::int64_t n = 0; n < xs.n; ++n) {
        const double* xn = x + n * xs.c * xs.h * xs.w;
        double* yn = y.data() + n * out_c * out_plane;
        for (std::int64_t oh0 = 0; oh0 < geo.out_h; oh0 += tile_rows) {
            const std::int64_t rows = std::min(tile_rows, geo.out_h - oh0);
            im2col_tile(xn, xs.c, xs.h, xs.w, k, stride, geo, oh0, rows, col.data());
            gemm(out_c, rows * geo.out_w, kernel_rows, wgt, kernel_rows, col.data(),
                 rows * geo.out_w, yn + oh0 * geo.out_w, out_plane, false);
        }
    }
    return y;
}

/// dx = adjoint of `conv_forward` applied to g (n, out_c, out_h, out_w).
inline std::vector<double> conv_dinput(const double* g, const Shape& xs, const double* wgt,
                                       std::int64_t out_c, std::int64_t k, std::int64_t stride,
                                       const ConvGeometry& geo) {
    const std::int64_t kernel_rows = xs.c * k * k;
    const std::int64_t out_plane = geo.out_h * geo.out_w;
    std::vector<double> dx(static_cast<std::size_t>(xs.numel()), 0.0);
    std::vector<double> wt(static_cast<std::size_t>(kernel_rows * out_c));
    for (std::int64_t oc = 0; oc < out_c; ++oc) {
        for (std::int64_t r = 0; r < kernel_rows; ++r) {
            wt[static_cast<std::size_t>(r * out_c + oc)] =
                wgt[static_cast<std::size_t>(oc * kernel_rows + r)];
        }
    }
    const std::int64_t tile_rows = conv_tile_rows(kernel_rows, geo.out_w, geo.out_h);
    std::vector<double> dcol(static_cast<std::size_t>(kernel_rows * tile_rows * geo.out_w));
    for (std::int64_t n = 0; n < xs.n; ++n) {
        const double* gn = g + n * out_c * out_plane;
        double* dxn = dx.data() + n * xs.c * xs.h * xs.w;
        for (std::int64_t oh0 = 0; oh0 < geo.out_h; oh0 += tile_rows) {
            const std::int64_t rows = std::min(tile_rows, geo.out_h - oh0);
            gemm(kernel_rows, rows * geo.out_w, out_c, wt.data(), out_c, gn + oh0 * geo.out_w,
                 out_plane, dcol.data(), rows * geo.out_w, false);
            col2im_tile(dcol.data(), xs.c, xs.h, xs.w, k, stride, geo, oh0, rows, dxn);
        }
    }
    return dx;
}

/// dW (out_c, in_c, k, k) = sum over batch of g * im2col(x)^T.
inline std::vector<double> conv_dweight(const double* x, const Shape& xs, const double* g,
                                        std::int64_t out_c, std::int64_t k, std::int64_t stride,
                                        const ConvGeometry& geo) {
    const std::int64_t kernel_rows = xs.c * k * k;
    const std::int64_t out_plane = geo.out_h * geo.out_w;
    std::vector<double> dw(static_cast<std::size_t>(out_c * kernel_rows), 0.0);
    const std::int64_t tile_rows = conv_tile_rows(kernel_rows, geo.out_w, geo.out_h);
    std::vector<double> col(static_cast<std::size_t>(kernel_rows * tile_rows * geo.out_w));
    for (std::int64_t n = 0; n < xs.n; ++n) {
        const double* xn = x + n * xs.c * xs.h * xs.w;
        const double* gn = g + n * out_c * out_plane;
        for (std::int64_t oh0 = 0; oh0 < geo.out_h; oh0 += tile_rows) {
            const std::int64_t rows = std::min(tile_rows, geo.out_h - oh0);
            im2col_tile(xn, xs.c, xs.h, xs.w, k, stride, geo, oh0, rows, col.data());
            gemm_abt(out_c, kernel_rows, rows * geo.out_w, gn + oh0 * geo.out_w, out_plane,
                     col.data(), rows * geo.out_w, dw.data(), kernel_rows);
        }
    }
    return dw;
}

inline void check_conv_weight(const Tensor& w, const char* op) {
    require(w.shape().h == w.shape().w,
            std::string(op) + ": kernel must be square, got " + w.shape().str());
    require(w.shape().h >= 1, std::string(op) + ": kernel size must be >= 1");
}

inline void check_conv_bias(const Tensor& b, std::int64_t channels, const char* op) {
    if (b.empty()) {
        return;
    }
    require(b.numel() == channels, std::string(op) + ": bias has " + std::to_string(b.numel()) +
                                       " elements for " + std::to_string(channels) + " channels");
}

}  // namespace detail

/// 2-D cross-correlation over NCHW tensors. Same padding keeps
/// out = ceil(in / stride); valid padding shrinks by the kernel size.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                     Padding padding, Tape* tape = nullptr) {
    const Shape xs = x.shape();
    const Shape ws = w.shape();
    detail::check_conv_weight(w, "conv2d");
    require(stride >= 1, "conv2d: stride must be >= 1");
    require(xs.c == ws.c, "conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " +
                              std::to_string(ws.c));
    detail::check_conv_bias(b, ws.n, "conv2d");
    const std::int64_t k = ws.h;
    const detail::ConvGeometry geo = detail::conv2d_geometry(xs.h, xs.w, k, stride, padding);
    std::vector<double> y =
        detail::conv_forward(x.data().data(), xs, w.data().data(), ws.n, k, stride, geo);
    const Shape out_shape{xs.n, ws.n, geo.out_h, geo.out_w};
    if (!b.empty()) {
        const auto bv = b.data();
        const std::int64_t out_plane = geo.out_h * geo.out_w;
        for (std::int64_t n = 0; n < xs.n; ++n) {
            for (std::int64_t oc = 0; oc < ws.n; ++oc) {
                double* row = y.data() + (n * ws.n + oc) * out_plane;
                const double bias = bv[static_cast<std::size_t>(oc)];
                for (std::int64_t p = 0; p < out_plane; ++p) {
                    row[p] += bias;
                }
            }
        }
    }
    int node = -1;
    if (tape != nullptr) {
        const int nx = tape_input(tape, x);
        const int nw = tape_input(tape, w);
        const int nb = b.empty() ? -1 : tape_input(tape, b);
        if (nx >= 0 || nw >= 0 || nb >= 0) {
            const int stride_c = stride;
            node = tape->record(out_shape, [nx, nw, nb, x, w, xs, ws, k, stride_c, geo](
                                               Tape& t, const std::vector<double>& g) {
                if (nx >= 0) {
                    t.add_grad(nx, detail::conv_dinput(g.data(), xs, w.data().data(), ws.n, k,
                                                       stride_c, geo));
                }
                if (nw >= 0) {
                    t.add_grad(nw, detail::conv_dweight(x.data().data(), xs, g.data(), ws.n, k,
                                                        stride_c, geo));
                }
                if (nb >= 0) {
                    std::vector<double> db(static_cast<std::size_t>(ws.n), 0.0);
                    const std::int64_t out_plane = geo.out_h * geo.out_w;
                    for (std::int64_t n = 0; n < xs.n; ++n) {
                        for (std::int64_t oc = 0; oc < ws.n; ++oc) {
                            const double* row = g.data() + (n * ws.n + oc) * out_plane;
                            double acc = 0.0;
                            for (std::int64_t p = 0; p < out_plane; ++p) {
                                acc += row[p];
                            }
                            db[static_cast<std::size_t>(oc)] += acc;
                        }
                    }
                    t.add_grad(nb, db);
                }
            });
        }
    }
    return tape_output(out_shape, std::move(y), tape, node);
}

inline Tensor conv2d(const Tensor& x, const ConvParams& p, Tape* tape = nullptr) {
    return conv2d(x, p.weight, p.bias, p.stride, p.padding, tape);
}

/// Adjoint of the same-padded strided conv2d with the same weight: maps a
/// (n, out_c, h, w) tensor to (n, in_c, h*stride, w*stride). `bias` (one
/// value per in_c channel) is added after the adjoint. With the 2x2
/// kernel / stride-2 convention used by the decoders this doubles the
/// spatial dimensions.
inline Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                               Tape* tape = nullptr) {
    const Shape xs = x.shape();
    const Shape ws = w.shape();
    detail::check_conv_weight(w, "conv2d_transpose");
    require(stride >= 1, "conv2d_transpose: stride must be >= 1");
    require(xs.c == ws.n, "conv2d_transpose: input has " + std::to_string(xs.c) +
                              " channels, weight expects " + std::to_string(ws.n));
    detail::check_conv_bias(b, ws.c, "conv2d_transpose");
    const std::int64_t k = ws.h;
    const Shape big{xs.n, ws.c, xs.h * stride, xs.w * stride};
    const detail::ConvGeometry geo =
        detail::conv2d_geometry(big.h, big.w, k, stride, Padding::kSame);
    require(geo.out_h == xs.h && geo.out_w == xs.w,
            "conv2d_transpose: inconsistent geometry for input " + xs.str());
    std::vector<double> y =
        detail::conv_dinput(x.data().data(), big, w.data().data(), ws.n, k, stride, geo);
    if (!b.empty()) {
        const auto bv = b.data();
        const std::int64_t plane = big.h * big.w;
        for (std::int64_t n = 0; n < big.n; ++n) {
            for (std::int64_t c = 0; c < big.c; ++c) {
                double* row = y.data() + (n * big.c + c) * plane;
                const double bias = bv[static_cast<std::size_t>(c)];
                for (std::int64_t p = 0; p < plane; ++p) {
                    row[p] += bias;
                }
            }
        }
    }
    int node = -1;
    if (tape != nullptr) {
        const int nx = tape_input(tape, x);
        const int nw = tape_input(tape, w);
        const int nb = b.empty() ? -1 : tape_input(tape, b);
        if (nx >= 0 || nw >= 0 || nb >= 0) {
            const int stride_c = stride;
            node = tape->record(big, [nx, nw, nb, x, w, xs, ws, big, k, stride_c, geo](
                                         Tape& t, const std::vector<double>& g) {
                if (nx >= 0) {
                    t.add_grad(nx, detail::conv_forward(g.data(), big, w.data().data(), ws.n, k,
                                                        stride_c, geo));
                }
                if (nw >= 0) {
                    t.add_grad(nw, detail::conv_dweight(g.data(), big, x.data().data(), ws.n, k,
                                                        stride_c, geo));
                }
                if (nb >= 0) {
                    std::vector<double> db(static_cast<std::size_t>(ws.c), 0.0);
                    const std::int64_t plane = big.h * big.w;
                    for (std::int64_t n = 0; n < big.n; ++n) {
                        for (std::int64_t c = 0; c < big.c; ++c) {
                            const double* row = g.data() + (n * big.c + c) * plane;
                            double acc = 0.0;
                            for (std::int64_t p = 0; p < plane; ++p) {
                                acc += row[p];
                            }
                            db[static_cast<std::size_t>(c)] += acc;
                        }
                    }
                    t.add_grad(nb, db);
                }
            });
        }
    }
    return tape_output(big, std::move(y), tape, node);
}

}  // namespace tinyseg
