#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tinyseg/label_map.hpp"
#include "tinyseg/tape.hpp"
#include "tinyseg/tensor.hpp"

namespace tinyseg {

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + a.shape().str() +
                                        " vs " + b.shape().str());
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::check_same_shape(a, b, "add");
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] + bv[i];
    }
    int node = -1;
    if (tape != nullptr) {
        const int na = tape_input(tape, a);
        const int nb = tape_input(tape, b);
        if (na >= 0 || nb >= 0) {
            node = tape->record(a.shape(), [na, nb](Tape& t, const std::vector<double>& g) {
                if (na >= 0) t.add_grad(na, g);
                if (nb >= 0) t.add_grad(nb, g);
            });
        }
    }
    return tape_output(a.shape(), std::move(out), tape, node);
}

inline Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::check_same_shape(a, b, "sub");
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] - bv[i];
    }
    int node = -1;
    if (tape != nullptr) {
        const int na = tape_input(tape, a);
        const int nb = tape_input(tape, b);
        if (na >= 0 || nb >= 0) {
            node = tape->record(a.shape(), [na, nb](Tape& t, const std::vector<double>& g) {
                if (na >= 0) t.add_grad(na, g);
                if (nb >= 0) {
                    std::vector<double> db(g.size());
                    for (std::size_t i = 0; i < g.size(); ++i) db[i] = -g[i];
                    t.add_grad(nb, db);
                }
            });
        }
    }
    return tape_output(a.shape(), std::move(out), tape, node);
}

inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::check_same_shape(a, b, "mul");
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    int node = -1;
    if (tape != nullptr) {
        const int na = tape_input(tape, a);
        const int nb = tape_input(tape, b);
        if (na >= 0 || nb >= 0) {
            node = tape->record(a.shape(), [na, nb, a, b](Tape& t, const std::vector<double>& g) {
                if (na >= 0) {
                    std::vector<double> da(g.size());
                    const auto bd = b.data();
                    for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * bd[i];
                    t.add_grad(na, da);
                }
                if (nb >= 0) {
                    std::vector<double> db(g.size());
                    const auto ad = a.data();
                    for (std::size_t i = 0; i < g.size(); ++i) db[i] = g[i] * ad[i];
                    t.add_grad(nb, db);
                }
            });
        }
    }
    return tape_output(a.shape(), std::move(out), tape, node);
}

/// Elementwise quotient; the caller guarantees a nonzero denominator.
inline Tensor div(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::check_same_shape(a, b, "div");
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] / bv[i];
    }
    int node = -1;
    if (tape != nullptr) {
        const int na = tape_input(tape, a);
        const int nb = tape_input(tape, b);
        if (na >= 0 || nb >= 0) {
            node = tape->record(a.shape(), [na, nb, a, b](Tape& t, const std::vector<double>& g) {
                const auto ad = a.data();
                const auto bd = b.data();
                if (na >= 0) {
                    std::vector<double> da(g.size());
                    for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] / bd[i];
                    t.add_grad(na, da);
                }
                if (nb >= 0) {
                    std::vector<double> db(g.size());
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        db[i] = -g[i] * ad[i] / (bd[i] * bd[i]);
                    }
                    t.add_grad(nb, db);
                }
            });
        }
    }
    return tape_output(a.shape(), std::move(out), tape, node);
}

/// max(0, x). The subgradient at exactly zero is taken as 0.
inline Tensor relu(const Tensor& a, Tape* tape = nullptr) {
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] > 0.0 ? av[i] : 0.0;
    }
    int node = -1;
    if (tape != nullptr) {
        const int na = tape_input(tape, a);
        if (na >= 0) {
            node = tape->record(a.shape(), [na, a](Tape& t, const std::vector<double>& g) {
                std::vector<double> da(g.size());
                const auto ad = a.data();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    da[i] = ad[i] > 0.0 ? g[i] : 0.0;
                }
                t.add_grad(na, da);
            });
        }
    }
    return tape_output(a.shape(), std::move(out), tape, node);
}

inline Tensor scale(const Tensor& a, double k, Tape* tape = nullptr) {
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] * k;
    }
    int node = -1;
    if (tape != nullptr) {
        const int na = tape_input(tape, a);
        if (na >= 0) {
            node = tape->record(a.shape(), [na, k](Tape& t, const std::vector<double>& g) {
                std::vector<double> da(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * k;
                t.add_grad(na, da);
            });
        }
    }
    return tape_output(a.shape(), std::move(out), tape, node);
}

inline Tensor add_scalar(const Tensor& a, double k, Tape* tape = nullptr) {
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] + k;
    }
    int node = -1;
    if (tape != nullptr) {
        const int na = tape_input(tape, a);
        if (na >= 0) {
            node = tape->record(a.shape(), [na](Tape& t, const std::vector<double>& g) {
                t.add_grad(na, g);
            });
        }
    }
    return tape_output(a.shape(), std::move(out), tape, node);
}

/// Sums over the given axes (0=n, 1=c, 2=h, 3=w); reduced dimensions
/// collapse to size 1. An empty axis list returns the input unchanged.
inline Tensor reduce_sum(const Tensor& a, const std::vector<int>& axes, Tape* tape = nullptr) {
    std::array<bool, 4> reduce{false, false, false, false};
    for (int axis : axes) {
        require(axis >= 0 && axis < 4, "reduce_sum: invalid axis " + std::to_string(axis));
        reduce[static_cast<std::size_t>(axis)] = true;
    }
    if (axes.empty()) {
        return a;
    }
    const Shape in = a.shape();
    const Shape out_shape{reduce[0] ? 1 : in.n, reduce[1] ? 1 : in.c, reduce[2] ? 1 : in.h,
                          reduce[3] ? 1 : in.w};
    std::vector<double> out(static_cast<std::size_t>(out_shape.numel()), 0.0);
    const auto av = a.data();
    auto out_index = [reduce, out_shape](std::int64_t n, std::int64_t c, std::int64_t h,
                                         std::int64_t w) {
        if (reduce[0]) n = 0;
        if (reduce[1]) c = 0;
        if (reduce[2]) h = 0;
        if (reduce[3]) w = 0;
        return ((n * out_shape.c + c) * out_shape.h + h) * out_shape.w + w;
    };
    std::size_t i = 0;
    for (std::int64_t n = 0; n < in.n; ++n)
        for (std::int64_t c = 0; c < in.c; ++c)
            for (std::int64_t h = 0; h < in.h; ++h)
                for (std::int64_t w = 0; w < in.w; ++w, ++i) {
                    out[static_cast<std::size_t>(out_index(n, c, h, w))] += av[i];
                }
    int node = -1;
    if (tape != nullptr) {
        const int na = tape_input(tape, a);
        if (na >= 0) {
            node = tape->record(out_shape, [na, in, out_shape, out_index](
                                               Tape& t, const std::vector<double>& g) {
                std::vector<double> da(static_cast<std::size_t>(in.numel()));
                std::size_t j = 0;
                for (std::int64_t n = 0; n < in.n; ++n)
                    for (std::int64_t c = 0; c < in.c; ++c)
                        for (std::int64_t h = 0; h < in.h; ++h)
                            for (std::int64_t w = 0; w < in.w; ++w, ++j) {
                                da[j] = g[static_cast<std::size_t>(out_index(n, c, h, w))];
                            }
                t.add_grad(na, da);
            });
        }
    }
    return tape_output(out_shape, std::move(out), tape, node);
}

inline Tensor reduce_sum_all(const Tensor& a, Tape* tape = nullptr) {
    return reduce_sum(a, {0, 1, 2, 3}, tape);
}

/// Per-pixel softmax over the channel axis, computed with max subtraction.
inline Tensor softmax_channels(const Tensor& x, Tape* tape = nullptr) {
    const Shape s = x.shape();
    require(s.c >= 2, "softmax_channels: needs at least 2 channels, got " + s.str());
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t p = 0; p < plane; ++p) {
            const std::int64_t base = n * s.c * plane + p;
            double max_logit = xv[static_cast<std::size_t>(base)];
            for (std::int64_t c = 1; c < s.c; ++c) {
                max_logit = std::max(max_logit, xv[static_cast<std::size_t>(base + c * plane)]);
            }
            double sum = 0.0;
            for (std::int64_t c = 0; c < s.c; ++c) {
                const double e = std::exp(xv[static_cast<std::size_t>(base + c * plane)] - max_logit);
                out[static_cast<std::size_t>(base + c * plane)] = e;
                sum += e;
            }
            for (std::int64_t c = 0; c < s.c; ++c) {
                out[static_cast<std::size_t>(base + c * plane)] /= sum;
            }
        }
    }
    int node = -1;
    if (tape != nullptr) {
        const int nx = tape_input(tape, x);
        if (nx >= 0) {
            const Tensor y_copy(s, out);
            node = tape->record(s, [nx, s, y_copy, plane](Tape& t, const std::vector<double>& g) {
                const auto yv = y_copy.data();
                std::vector<double> dx(g.size());
                for (std::int64_t n = 0; n < s.n; ++n) {
                    for (std::int64_t p = 0; p < plane; ++p) {
                        const std::int64_t base = n * s.c * plane + p;
                        double dot = 0.0;
                        for (std::int64_t c = 0; c < s.c; ++c) {
                            const std::size_t i = static_cast<std::size_t>(base + c * plane);
                            dot += g[i] * yv[i];
                        }
                        for (std::int64_t c = 0; c < s.c; ++c) {
                            const std::size_t i = static_cast<std::size_t>(base + c * plane);
                            dx[i] = yv[i] * (g[i] - dot);
                        }
                    }
                }
                t.add_grad(nx, dx);
            });
        }
    }
    return tape_output(s, std::move(out), tape, node);
}

/// Stacks `a`'s channels before `b`'s; batch and spatial dims must agree.
inline Tensor concat_channels(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    require(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w,
            "concat_channels: batch/spatial mismatch " + sa.str() + " vs " + sb.str());
    const Shape out_shape{sa.n, sa.c + sb.c, sa.h, sa.w};
    const std::int64_t plane = sa.h * sa.w;
    std::vector<double> out(static_cast<std::size_t>(out_shape.numel()));
    const auto av = a.data();
    const auto bv = b.data();
    for (std::int64_t n = 0; n < sa.n; ++n) {
        std::copy_n(av.begin() + n * sa.c * plane, sa.c * plane,
                    out.begin() + n * out_shape.c * plane);
        std::copy_n(bv.begin() + n * sb.c * plane, sb.c * plane,
                    out.begin() + n * out_shape.c * plane + sa.c * plane);
    }
    int node = -1;
    if (tape != nullptr) {
        const int na = tape_input(tape, a);
        const int nb = tape_input(tape, b);
        if (na >= 0 || nb >= 0) {
            node = tape->record(out_shape, [na, nb, sa, sb, out_shape, plane](
                                               Tape& t, const std::vector<double>& g) {
                if (na >= 0) {
                    std::vector<double> da(static_cast<std::size_t>(sa.numel()));
                    for (std::int64_t n = 0; n < sa.n; ++n) {
                        std::copy_n(g.begin() + n * out_shape.c * plane, sa.c * plane,
                                    da.begin() + n * sa.c * plane);
                    }
                    t.add_grad(na, da);
                }
                if (nb >= 0) {
                    std::vector<double> db(static_cast<std::size_t>(sb.numel()));
                    for (std::int64_t n = 0; n < sb.n; ++n) {
                        std::copy_n(g.begin() + n * out_shape.c * plane + sa.c * plane,
                                    sb.c * plane, db.begin() + n * sb.c * plane);
                    }
                    t.add_grad(nb, db);
                }
            });
        }
    }
    return tape_output(out_shape, std::move(out), tape, node);
}

/// Channels [c_begin, c_end) of `x`.
inline Tensor slice_channels(const Tensor& x, std::int64_t c_begin, std::int64_t c_end,
                             Tape* tape = nullptr) {
    const Shape s = x.shape();
    require(0 <= c_begin && c_begin <= c_end && c_end <= s.c,
            "slice_channels: invalid range [" + std::to_string(c_begin) + "," +
                std::to_string(c_end) + ") for " + s.str());
    const Shape out_shape{s.n, c_end - c_begin, s.h, s.w};
    const std::int64_t plane = s.h * s.w;
    std::vector<double> out(static_cast<std::size_t>(out_shape.numel()));
    const auto xv = x.data();
    for (std::int64_t n = 0; n < s.n; ++n) {
        std::copy_n(xv.begin() + (n * s.c + c_begin) * plane, out_shape.c * plane,
                    out.begin() + n * out_shape.c * plane);
    }
    int node = -1;
    if (tape != nullptr) {
        const int nx = tape_input(tape, x);
        if (nx >= 0) {
            node = tape->record(out_shape, [nx, s, out_shape, c_begin, plane](
                                               Tape& t, const std::vector<double>& g) {
                std::vector<double> dx(static_cast<std::size_t>(s.numel()), 0.0);
                for (std::int64_t n = 0; n < s.n; ++n) {
                    std::copy_n(g.begin() + n * out_shape.c * plane, out_shape.c * plane,
                                dx.begin() + (n * s.c + c_begin) * plane);
                }
                t.add_grad(nx, dx);
            });
        }
    }
    return tape_output(out_shape, std::move(out), tape, node);
}

/// Per-pixel index of the largest channel; ties go to the lowest index.
inline LabelMap argmax_channels(const Tensor& probs) {
    const Shape s = probs.shape();
    require(s.c >= 1, "argmax_channels: needs at least one channel");
    const auto pv = probs.data();
    const std::int64_t plane = s.h * s.w;
    std::vector<std::uint8_t> labels(static_cast<std::size_t>(s.n * plane));
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t p = 0; p < plane; ++p) {
            const std::int64_t base = n * s.c * plane + p;
            std::int64_t best = 0;
            double best_value = pv[static_cast<std::size_t>(base)];
            for (std::int64_t c = 1; c < s.c; ++c) {
                const double v = pv[static_cast<std::size_t>(base + c * plane)];
                if (v > best_value) {
                    best_value = v;
                    best = c;
                }
            }
            labels[static_cast<std::size_t>(n * plane + p)] = static_cast<std::uint8_t>(best);
        }
    }
    return LabelMap{s.n, s.h, s.w, std::move(labels)};
}

namespace detail {

struct BilinearTap {
    std::int64_t lo;
    std::int64_t hi;
    double frac;
};

/// Source taps for align-corners-false bilinear sampling.
inline BilinearTap bilinear_tap(std::int64_t i, std::int64_t in_dim, std::int64_t out_dim) {
    const double src =
        std::clamp((static_cast<double>(i) + 0.5) * static_cast<double>(in_dim) /
                           static_cast<double>(out_dim) -
                       0.5,
                   0.0, static_cast<double>(in_dim - 1));
    const auto lo = static_cast<std::int64_t>(src);
    return BilinearTap{lo, std::min<std::int64_t>(lo + 1, in_dim - 1), src - static_cast<double>(lo)};
}

}  // namespace detail

inline Tensor resize_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w,
                              Tape* tape = nullptr) {
    const Shape s = x.shape();
    require(out_h >= 1 && out_w >= 1, "resize_bilinear: output dims must be >= 1");
    const Shape out_shape{s.n, s.c, out_h, out_w};
    std::vector<detail::BilinearTap> rows(static_cast<std::size_t>(out_h));
    std::vector<detail::BilinearTap> cols(static_cast<std::size_t>(out_w));
    for (std::int64_t i = 0; i < out_h; ++i) rows[static_cast<std::size_t>(i)] = detail::bilinear_tap(i, s.h, out_h);
    for (std::int64_t j = 0; j < out_w; ++j) cols[static_cast<std::size_t>(j)] = detail::bilinear_tap(j, s.w, out_w);

    const auto xv = x.data();
    std::vector<double> out(static_cast<std::size_t>(out_shape.numel()));
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            const std::int64_t in_base = (n * s.c + c) * s.h * s.w;
            const std::int64_t out_base = (n * s.c + c) * out_h * out_w;
            for (std::int64_t i = 0; i < out_h; ++i) {
                const auto& r = rows[static_cast<std::size_t>(i)];
                for (std::int64_t j = 0; j < out_w; ++j) {
                    const auto& q = cols[static_cast<std::size_t>(j)];
                    const double v00 = xv[static_cast<std::size_t>(in_base + r.lo * s.w + q.lo)];
                    const double v01 = xv[static_cast<std::size_t>(in_base + r.lo * s.w + q.hi)];
                    const double v10 = xv[static_cast<std::size_t>(in_base + r.hi * s.w + q.lo)];
                    const double v11 = xv[static_cast<std::size_t>(in_base + r.hi * s.w + q.hi)];
                    const double top = v00 + (v01 - v00) * q.frac;
                    const double bottom = v10 + (v11 - v10) * q.frac;
                    out[static_cast<std::size_t>(out_base + i * out_w + j)] =
                        top + (bottom - top) * r.frac;
                }
            }
        }
    }
    int node = -1;
    if (tape != nullptr) {
        const int nx = tape_input(tape, x);
        if (nx >= 0) {
            node = tape->record(out_shape, [nx, s, out_h, out_w, rows, cols](
                                               Tape& t, const std::vector<double>& g) {
                std::vector<double> dx(static_cast<std::size_t>(s.numel()), 0.0);
                for (std::int64_t n = 0; n < s.n; ++n) {
                    for (std::int64_t c = 0; c < s.c; ++c) {
                        const std::int64_t in_base = (n * s.c + c) * s.h * s.w;
                        const std::int64_t out_base = (n * s.c + c) * out_h * out_w;
                        for (std::int64_t i = 0; i < out_h; ++i) {
                            const auto& r = rows[static_cast<std::size_t>(i)];
                            for (std::int64_t j = 0; j < out_w; ++j) {
                                const auto& q = cols[static_cast<std::size_t>(j)];
                                const double go =
                                    g[static_cast<std::size_t>(out_base + i * out_w + j)];
                                dx[static_cast<std::size_t>(in_base + r.lo * s.w + q.lo)] +=
                                    go * (1.0 - r.frac) * (1.0 - q.frac);
                                dx[static_cast<std::size_t>(in_base + r.lo * s.w + q.hi)] +=
                                    go * (1.0 - r.frac) * q.frac;
                                dx[static_cast<std::size_t>(in_base + r.hi * s.w + q.lo)] +=
                                    go * r.frac * (1.0 - q.frac);
                                dx[static_cast<std::size_t>(in_base + r.hi * s.w + q.hi)] +=
                                    go * r.frac * q.frac;
                            }
                        }
                    }
                }
                t.add_grad(nx, dx);
            });
        }
    }
    return tape_output(out_shape, std::move(out), tape, node);
}

}  // namespace tinyseg
