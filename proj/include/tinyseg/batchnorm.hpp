#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tinyseg/tape.hpp"
#include "tinyseg/tensor.hpp"

namespace tinyseg {

/// Per-channel batch-norm parameters and statistics. All tensors are
/// (1, c, 1, 1). Running statistics follow
/// running' = momentum * running + (1 - momentum) * batch, with population
/// (biased) batch variance.
struct BatchNormState {
    enum class Mode { kTrain, kEval };

    Tensor gamma;
    Tensor beta;
    Tensor running_mean;
    Tensor running_var;
    double epsilon = 1e-5;
    double momentum = 0.9;
    Mode mode = Mode::kEval;
};

struct BatchNormOutput {
    Tensor value;
    Tensor running_mean;
    Tensor running_var;
};

/// Batch normalization over (n, h, w) per channel. Train mode normalizes
/// with batch statistics and reports updated running statistics; eval mode
/// normalizes with the stored running statistics and returns them
/// unchanged.
inline BatchNormOutput batch_norm2d(const Tensor& x, const BatchNormState& s,
                                    Tape* tape = nullptr) {
    const Shape xs = x.shape();
    require(s.gamma.numel() == xs.c && s.beta.numel() == xs.c &&
                s.running_mean.numel() == xs.c && s.running_var.numel() == xs.c,
            "batch_norm2d: state is not sized for " + std::to_string(xs.c) + " channels");
    const std::int64_t plane = xs.h * xs.w;
    const std::int64_t per_channel = xs.n * plane;
    const bool training = s.mode == BatchNormState::Mode::kTrain;
    require(!training || per_channel > 1,
            "batch_norm2d: train mode needs more than one value per channel (variance undefined)");

    const auto xv = x.data();
    const auto gammav = s.gamma.data();
    const auto betav = s.beta.data();

    std::vector<double> mean(static_cast<std::size_t>(xs.c));
    std::vector<double> var(static_cast<std::size_t>(xs.c));
    if (training) {
        for (std::int64_t c = 0; c < xs.c; ++c) {
            double acc = 0.0;
            for (std::int64_t n = 0; n < xs.n; ++n) {
                const double* row = xv.data() + (n * xs.c + c) * plane;
                for (std::int64_t p = 0; p < plane; ++p) {
                    acc += row[p];
                }
            }
            const double mu = acc / static_cast<double>(per_channel);
            double sq = 0.0;
            for (std::int64_t n = 0; n < xs.n; ++n) {
                const double* row = xv.data() + (n * xs.c + c) * plane;
                for (std::int64_t p = 0; p < plane; ++p) {
                    const double d = row[p] - mu;
                    sq += d * d;
                }
            }
            mean[static_cast<std::size_t>(c)] = mu;
            var[static_cast<std::size_t>(c)] = sq / static_cast<double>(per_channel);
        }
    } else {
        const auto rm = s.running_mean.data();
        const auto rv = s.running_var.data();
        mean.assign(rm.begin(), rm.end());
        var.assign(rv.begin(), rv.end());
    }

    std::vector<double> inv_std(static_cast<std::size_t>(xs.c));
    for (std::int64_t c = 0; c < xs.c; ++c) {
        inv_std[static_cast<std::size_t>(c)] =
            1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + s.epsilon);
    }

    std::vector<double> out(static_cast<std::size_t>(xs.numel()));
    for (std::int64_t n = 0; n < xs.n; ++n) {
        for (std::int64_t c = 0; c < xs.c; ++c) {
            const double* row = xv.data() + (n * xs.c + c) * plane;
            double* dst = out.data() + (n * xs.c + c) * plane;
            const double mu = mean[static_cast<std::size_t>(c)];
            const double inv = inv_std[static_cast<std::size_t>(c)];
            const double gm = gammav[static_cast<std::size_t>(c)];
            const double bt = betav[static_cast<std::size_t>(c)];
            for (std::int64_t p = 0; p < plane; ++p) {
                dst[p] = gm * (row[p] - mu) * inv + bt;
            }
        }
    }

    BatchNormOutput result;
    if (training) {
        std::vector<double> new_mean(static_cast<std::size_t>(xs.c));
        std::vector<double> new_var(static_cast<std::size_t>(xs.c));
        const auto rm = s.running_mean.data();
        const auto rv = s.running_var.data();
        for (std::int64_t c = 0; c < xs.c; ++c) {
            const auto i = static_cast<std::size_t>(c);
            new_mean[i] = s.momentum * rm[i] + (1.0 - s.momentum) * mean[i];
            new_var[i] = s.momentum * rv[i] + (1.0 - s.momentum) * var[i];
        }
        result.running_mean = Tensor({1, xs.c, 1, 1}, std::move(new_mean));
        result.running_var = Tensor({1, xs.c, 1, 1}, std::move(new_var));
    } else {
        result.running_mean = s.running_mean;
        result.running_var = s.running_var;
    }

    int node = -1;
    if (tape != nullptr) {
        const int nx = tape_input(tape, x);
        const int ng = tape_input(tape, s.gamma);
        const int nb = tape_input(tape, s.beta);
        if (nx >= 0 || ng >= 0 || nb >= 0) {
            const Tensor x_saved = x;
            const Tensor gamma_saved = s.gamma;
            node = tape->record(
                xs, [nx, ng, nb, x_saved, gamma_saved, xs, plane, per_channel, training, mean,
                     inv_std](Tape& t, const std::vector<double>& g) {
                    const auto xd = x_saved.data();
                    const auto gm = gamma_saved.data();
                    // Per-channel sums of g and g * xhat feed every term.
                    std::vector<double> sum_g(static_cast<std::size_t>(xs.c), 0.0);
                    std::vector<double> sum_gx(static_cast<std::size_t>(xs.c), 0.0);
                    for (std::int64_t n = 0; n < xs.n; ++n) {
                        for (std::int64_t c = 0; c < xs.c; ++c) {
                            const auto i = static_cast<std::size_t>(c);
                            const double* grow = g.data() + (n * xs.c + c) * plane;
                            const double* xrow = xd.data() + (n * xs.c + c) * plane;
                            double a = 0.0;
                            double b = 0.0;
                            for (std::int64_t p = 0; p < plane; ++p) {
                                const double xhat = (xrow[p] - mean[i]) * inv_std[i];
                                a += grow[p];
                                b += grow[p] * xhat;
                            }
                            sum_g[i] += a;
                            sum_gx[i] += b;
                        }
                    }
                    if (nb >= 0) {
                        t.add_grad(nb, sum_g);
                    }
                    if (ng >= 0) {
                        t.add_grad(ng, sum_gx);
                    }
                    if (nx >= 0) {
                        std::vector<double> dx(static_cast<std::size_t>(xs.numel()));
                        const double m = static_cast<double>(per_channel);
                        for (std::int64_t n = 0; n < xs.n; ++n) {
                            for (std::int64_t c = 0; c < xs.c; ++c) {
                                const auto i = static_cast<std::size_t>(c);
                                const double* grow = g.data() + (n * xs.c + c) * plane;
                                const double* xrow = xd.data() + (n * xs.c + c) * plane;
                                double* drow = dx.data() + (n * xs.c + c) * plane;
                                const double k = gm[i] * inv_std[i];
                                for (std::int64_t p = 0; p < plane; ++p) {
                                    if (training) {
                                        const double xhat = (xrow[p] - mean[i]) * inv_std[i];
                                        drow[p] =
                                            k * (grow[p] - sum_g[i] / m - xhat * sum_gx[i] / m);
                                    } else {
                                        drow[p] = k * grow[p];
                                    }
                                }
                            }
                        }
                        t.add_grad(nx, dx);
                    }
                });
        }
    }
    result.value = tape_output(xs, std::move(out), tape, node);
    return result;
}

}  // namespace tinyseg
