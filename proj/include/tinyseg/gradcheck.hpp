#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tinyseg/architectures.hpp"
#include "tinyseg/loss.hpp"
#include "tinyseg/ops.hpp"
#include "tinyseg/rng.hpp"
#include "tinyseg/tape.hpp"
#include "tinyseg/tensor.hpp"

namespace tinyseg {

/// A scalar-valued tensor function. The tape pointer is non-null for the
/// analytic pass and null for the finite-difference evaluations.
using ScalarFn = std::function<Tensor(const Tensor&, Tape*)>;

/// Compares reverse-mode gradients of `f` at `x` against central finite
/// differences. Returns the maximum over elements of
///   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
    require(eps > 0.0, "grad_check: eps must be positive");
    Tape tape;
    const Tensor xw = tape.watch(x.with_grad());
    const Tensor y = f(xw, &tape);
    require(y.shape() == Shape{1, 1, 1, 1},
            "grad_check: f must be scalar-valued, got " + y.shape().str());
    if (!std::isfinite(y.item())) {
        throw std::runtime_error("grad_check: f produced a non-finite value");
    }
    tape.backward(y);
    const std::vector<double>* tape_grad = tape.grad(xw);
    std::vector<double> analytic(static_cast<std::size_t>(x.numel()), 0.0);
    if (tape_grad != nullptr) {
        analytic = *tape_grad;
    }

    std::vector<double> base(x.data().begin(), x.data().end());
    double max_error = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        std::vector<double> plus = base;
        std::vector<double> minus = base;
        plus[i] += eps;
        minus[i] -= eps;
        const double f_plus = f(Tensor(x.shape(), std::move(plus)), nullptr).item();
        const double f_minus = f(Tensor(x.shape(), std::move(minus)), nullptr).item();
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
            throw std::runtime_error("grad_check: f produced a non-finite value");
        }
        const double numeric = (f_plus - f_minus) / (2.0 * eps);
        const double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
        max_error = std::max(max_error, std::abs(analytic[i] - numeric) / denom);
    }
    return max_error;
}

struct GradCheckCase {
    std::string name;
    double error = 0.0;
    double threshold = 0.0;
    bool passed = false;
};

namespace gradcheck_detail {

inline Tensor random_uniform(const Shape& shape, double lo, double hi, Rng& rng) {
    std::vector<double> values(static_cast<std::size_t>(shape.numel()));
    for (double& v : values) {
        v = rng.uniform(lo, hi);
    }
    return Tensor(shape, std::move(values));
}

/// Values with |v| >= margin, away from the relu kink.
inline Tensor random_away_from_zero(const Shape& shape, double margin, Rng& rng) {
    std::vector<double> values(static_cast<std::size_t>(shape.numel()));
    for (double& v : values) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        v = sign * rng.uniform(margin, 1.0);
    }
    return Tensor(shape, std::move(values));
}

/// Every 2x2 pool window gets four well-separated values (pairwise gap
/// >= 0.1), so the argmax is stable under eps-sized perturbations.
inline Tensor random_pool_safe(const Shape& shape, Rng& rng) {
    std::vector<double> values(static_cast<std::size_t>(shape.numel()));
    for (std::int64_t n = 0; n < shape.n; ++n) {
        for (std::int64_t c = 0; c < shape.c; ++c) {
            double* plane = values.data() + (n * shape.c + c) * shape.h * shape.w;
            for (std::int64_t oh = 0; oh + 1 < shape.h; oh += 2) {
                for (std::int64_t ow = 0; ow + 1 < shape.w; ow += 2) {
                    std::vector<double> levels{0.2, 0.4, 0.6, 0.8};
                    rng.shuffle(levels);
                    plane[oh * shape.w + ow] = levels[0] + rng.uniform(-0.04, 0.04);
                    plane[oh * shape.w + ow + 1] = levels[1] + rng.uniform(-0.04, 0.04);
                    plane[(oh + 1) * shape.w + ow] = levels[2] + rng.uniform(-0.04, 0.04);
                    plane[(oh + 1) * shape.w + ow + 1] = levels[3] + rng.uniform(-0.04, 0.04);
                }
            }
        }
    }
    return Tensor(shape, std::move(values));
}

/// Projects a tensor-valued function to a scalar with fixed random
/// weights, so every output element contributes to the gradient.
inline ScalarFn weighted_sum(const std::function<Tensor(const Tensor&, Tape*)>& op,
                             const Tensor& weights) {
    return [op, weights](const Tensor& x, Tape* tape) {
        return reduce_sum_all(mul(op(x, tape), weights, tape), tape);
    };
}

}  // namespace gradcheck_detail

inline std::vector<std::string> gradcheck_op_names() {
    return {"add",
            "sub",
            "mul",
            "div",
            "relu",
            "scale",
            "reduce_sum",
            "slice_channels",
            "softmax_channels",
            "concat_channels",
            "resize_bilinear",
            "conv2d_input",
            "conv2d_weight",
            "conv2d_bias",
            "conv2d_transpose_input",
            "conv2d_transpose_weight",
            "max_pool2d",
            "max_unpool2d",
            "batch_norm2d_eval",
            "batch_norm2d_train",
            "batch_norm2d_gamma",
            "dice_loss",
            "residual_block"};
}

/// Gradient check of one named operation at a seeded random point.
/// Thresholds follow the library-wide contract: 1e-5 relative error with
/// eps = 1e-5, points sampled away from relu/pool kinks.
inline GradCheckCase run_gradcheck_op(const std::string& name, std::uint64_t seed) {
    using gradcheck_detail::random_away_from_zero;
    using gradcheck_detail::random_pool_safe;
    using gradcheck_detail::random_uniform;
    using gradcheck_detail::weighted_sum;

    Rng rng(derive_seed(seed, 17));
    const double eps = 1e-5;
    GradCheckCase result{name, 0.0, 1e-5, false};

    const Shape small{1, 3, 4, 4};
    const Tensor w_small = random_uniform(small, -1.0, 1.0, rng);

    if (name == "add") {
        const Tensor other = random_uniform(small, -1.0, 1.0, rng);
        result.error = grad_check(
            weighted_sum([other](const Tensor& x, Tape* t) { return add(x, other, t); }, w_small),
            random_uniform(small, -1.0, 1.0, rng), eps);
    } else if (name == "sub") {
        const Tensor other = random_uniform(small, -1.0, 1.0, rng);
        result.error = grad_check(
            weighted_sum([other](const Tensor& x, Tape* t) { return sub(other, x, t); }, w_small),
            random_uniform(small, -1.0, 1.0, rng), eps);
    } else if (name == "div") {
        const Tensor numer = random_away_from_zero(small, 0.3, rng);
        result.error = grad_check(
            weighted_sum([numer](const Tensor& x, Tape* t) { return div(numer, x, t); }, w_small),
            random_away_from_zero(small, 0.3, rng), eps);
    } else if (name == "slice_channels") {
        const Tensor w = random_uniform({1, 2, 4, 4}, -1.0, 1.0, rng);
        result.error = grad_check(
            weighted_sum([](const Tensor& x, Tape* t) { return slice_channels(x, 1, 3, t); }, w),
            random_uniform(small, -1.0, 1.0, rng), eps);
    } else if (name == "mul") {
        const Tensor other = random_uniform(small, -1.0, 1.0, rng);
        result.error = grad_check(
            weighted_sum([other](const Tensor& x, Tape* t) { return mul(x, other, t); }, w_small),
            random_uniform(small, -1.0, 1.0, rng), eps);
    } else if (name == "relu") {
        result.error = grad_check(
            weighted_sum([](const Tensor& x, Tape* t) { return relu(x, t); }, w_small),
            random_away_from_zero(small, 0.05, rng), eps);
    } else if (name == "scale") {
        result.error = grad_check(
            weighted_sum([](const Tensor& x, Tape* t) { return scale(x, -1.7, t); }, w_small),
            random_uniform(small, -1.0, 1.0, rng), eps);
    } else if (name == "reduce_sum") {
        const Tensor w = random_uniform({1, 1, 4, 4}, -1.0, 1.0, rng);
        result.error = grad_check(
            weighted_sum([](const Tensor& x, Tape* t) { return reduce_sum(x, {0, 1}, t); }, w),
            random_uniform(small, -1.0, 1.0, rng), eps);
    } else if (name == "softmax_channels") {
        result.error = grad_check(
            weighted_sum([](const Tensor& x, Tape* t) { return softmax_channels(x, t); }, w_small),
            random_uniform(small, -2.0, 2.0, rng), eps);
    } else if (name == "concat_channels") {
        const Tensor other = random_uniform({1, 2, 4, 4}, -1.0, 1.0, rng);
        const Tensor w = random_uniform({1, 5, 4, 4}, -1.0, 1.0, rng);
        result.error = grad_check(
            weighted_sum(
                [other](const Tensor& x, Tape* t) { return concat_channels(x, other, t); }, w),
            random_uniform(small, -1.0, 1.0, rng), eps);
    } else if (name == "resize_bilinear") {
        const Tensor w = random_uniform({1, 2, 7, 5}, -1.0, 1.0, rng);
        result.error = grad_check(
            weighted_sum([](const Tensor& x, Tape* t) { return resize_bilinear(x, 7, 5, t); }, w),
            random_uniform({1, 2, 4, 4}, -1.0, 1.0, rng), eps);
    } else if (name == "conv2d_input" || name == "conv2d_weight" || name == "conv2d_bias") {
        const Shape xs{1, 2, 5, 5};
        const Tensor x0 = random_uniform(xs, -1.0, 1.0, rng);
        const Tensor w0 = random_uniform({3, 2, 3, 3}, -0.7, 0.7, rng);
        const Tensor b0 = random_uniform({1, 3, 1, 1}, -0.3, 0.3, rng);
        const Tensor w = random_uniform({1, 3, 5, 5}, -1.0, 1.0, rng);
        if (name == "conv2d_input") {
            result.error = grad_check(
                weighted_sum([w0, b0](const Tensor& x, Tape* t) {
                    return conv2d(x, w0, b0, 1, Padding::kSame, t);
                }, w),
                x0, eps);
        } else if (name == "conv2d_weight") {
            result.error = grad_check(
                weighted_sum([x0, b0](const Tensor& wv, Tape* t) {
                    return conv2d(x0, wv, b0, 1, Padding::kSame, t);
                }, w),
                w0, eps);
        } else {
            result.error = grad_check(
                weighted_sum([x0, w0](const Tensor& bv, Tape* t) {
                    return conv2d(x0, w0, bv, 1, Padding::kSame, t);
                }, w),
                b0, eps);
        }
    } else if (name == "conv2d_transpose_input" || name == "conv2d_transpose_weight") {
        const Tensor x0 = random_uniform({1, 3, 3, 3}, -1.0, 1.0, rng);
        const Tensor w0 = random_uniform({3, 2, 2, 2}, -0.7, 0.7, rng);
        const Tensor b0 = random_uniform({1, 2, 1, 1}, -0.3, 0.3, rng);
        const Tensor w = random_uniform({1, 2, 6, 6}, -1.0, 1.0, rng);
        if (name == "conv2d_transpose_input") {
            result.error = grad_check(
                weighted_sum([w0, b0](const Tensor& x, Tape* t) {
                    return conv2d_transpose(x, w0, b0, 2, t);
                }, w),
                x0, eps);
        } else {
            result.error = grad_check(
                weighted_sum([x0, b0](const Tensor& wv, Tape* t) {
                    return conv2d_transpose(x0, wv, b0, 2, t);
                }, w),
                w0, eps);
        }
    } else if (name == "max_pool2d") {
        const Tensor w = random_uniform({1, 2, 3, 3}, -1.0, 1.0, rng);
        result.error = grad_check(
            weighted_sum([](const Tensor& x, Tape* t) { return max_pool2d(x, t).first; }, w),
            random_pool_safe({1, 2, 6, 6}, rng), eps);
    } else if (name == "max_unpool2d") {
        const Tensor src = random_pool_safe({1, 2, 6, 6}, rng);
        const PoolIndices idx = max_pool2d(src).second;
        const Tensor w = random_uniform({1, 2, 6, 6}, -1.0, 1.0, rng);
        result.error = grad_check(
            weighted_sum([idx](const Tensor& y, Tape* t) { return max_unpool2d(y, idx, 6, 6, t); },
                         w),
            random_uniform({1, 2, 3, 3}, -1.0, 1.0, rng), eps);
    } else if (name == "batch_norm2d_eval" || name == "batch_norm2d_train" ||
               name == "batch_norm2d_gamma") {
        const Shape xs{2, 3, 4, 4};
        const Tensor x0 = random_uniform(xs, -1.0, 1.0, rng);
        BatchNormState state;
        state.gamma = random_uniform({1, 3, 1, 1}, 0.5, 1.5, rng);
        state.beta = random_uniform({1, 3, 1, 1}, -0.5, 0.5, rng);
        state.running_mean = random_uniform({1, 3, 1, 1}, -0.2, 0.2, rng);
        state.running_var = random_uniform({1, 3, 1, 1}, 0.5, 1.5, rng);
        state.mode = name == "batch_norm2d_eval" ? BatchNormState::Mode::kEval
                                                 : BatchNormState::Mode::kTrain;
        const Tensor w = random_uniform(xs, -1.0, 1.0, rng);
        if (name == "batch_norm2d_gamma") {
            state.mode = BatchNormState::Mode::kTrain;
            result.error = grad_check(
                weighted_sum([x0, state](const Tensor& gamma, Tape* t) {
                    BatchNormState s = state;
                    s.gamma = gamma;
                    return batch_norm2d(x0, s, t).value;
                }, w),
                state.gamma, eps);
        } else {
            result.error = grad_check(
                weighted_sum([state](const Tensor& x, Tape* t) {
                    return batch_norm2d(x, state, t).value;
                }, w),
                x0, eps);
        }
    } else if (name == "dice_loss") {
        const Shape xs{1, 3, 4, 4};
        std::vector<std::uint8_t> labels(16);
        for (auto& v : labels) {
            v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
        }
        const Tensor truth = one_hot(LabelMap{1, 4, 4, labels}, 3);
        // Probabilities via softmax so x is unconstrained.
        result.error = grad_check(
            [truth](const Tensor& x, Tape* t) {
                return dice_loss(softmax_channels(x, t), truth, t);
            },
            random_uniform(xs, -1.0, 1.0, rng), eps);
    } else if (name == "residual_block") {
        ParamStore store;
        Rng init_rng(derive_seed(seed, 23));
        const LayerGraph block = build_residual_block(store, "block", 2, 3, init_rng);
        const Tensor w = random_uniform({1, 3, 6, 6}, -1.0, 1.0, rng);
        const Tensor x0 = random_uniform({1, 2, 6, 6}, -1.0, 1.0, rng);
        ParamStore* store_ptr = &store;
        result.error = grad_check(
            weighted_sum([block, store_ptr](const Tensor& x, Tape* t) {
                ForwardCtx ctx;
                ctx.params = store_ptr;
                ctx.tape = t;
                return block(x, ctx);
            }, w),
            x0, eps);
    } else {
        throw std::invalid_argument("unknown gradcheck op: " + name);
    }
    result.passed = result.error < result.threshold;
    return result;
}

inline std::vector<std::string> gradcheck_arch_names() {
    return {"unet", "resunet", "segnet", "fcn"};
}

/// End-to-end gradient check of a depth-1, base-2 model: the objective is
/// the Dice loss of the forward maps against a fixed random ground truth.
/// Sample inputs are re-drawn until the forward pass stays clear of relu
/// and max-pool kinks.
inline GradCheckCase run_gradcheck_arch(const std::string& name, std::uint64_t seed) {
    GradCheckCase result{name, 0.0, 1e-4, false};
    ArchitectureSpec spec = default_spec(family_from_name(name));
    spec.depth = 1;
    spec.base_filters = 2;
    spec.in_channels = 2;
    spec.num_classes = 3;
    spec.input_size = 8;
    if (spec.family == Family::kFcn) {
        spec.stride = 2;
    }
    Rng rng(derive_seed(seed, 31));
    Model model = build_model(spec, rng);

    std::vector<std::uint8_t> labels(64);
    for (auto& v : labels) {
        v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    }
    const Tensor truth = one_hot(LabelMap{1, 8, 8, labels}, 3);

    const Shape xs{1, 2, 8, 8};
    constexpr double kKinkMargin = 3e-4;
    Tensor x;
    for (int attempt = 0; attempt < 64; ++attempt) {
        x = gradcheck_detail::random_uniform(xs, -1.0, 1.0, rng);
        KinkMonitor monitor;
        ForwardCtx ctx;
        ctx.monitor = &monitor;
        model.forward(x, ctx);
        if (monitor.min_relu_gap >= kKinkMargin && monitor.min_pool_gap >= kKinkMargin) {
            break;
        }
        require(attempt < 63, "gradcheck: could not sample an input away from kinks");
    }

    Model* model_ptr = &model;
    result.error = grad_check(
        [model_ptr, truth](const Tensor& v, Tape* t) {
            ForwardCtx ctx;
            ctx.tape = t;
            return dice_loss(model_ptr->forward(v, ctx), truth, t);
        },
        x, 1e-5);
    result.passed = result.error < result.threshold;
    return result;
}

}  // namespace tinyseg
