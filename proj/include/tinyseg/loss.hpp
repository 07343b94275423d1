#pragma once

#include <cstdint>

#include "tinyseg/ops.hpp"
#include "tinyseg/tape.hpp"
#include "tinyseg/tensor.hpp"

namespace tinyseg {

/// Smoothing added to both sides of the Dice ratio so empty classes stay
/// defined.
inline constexpr double kDiceSmoothing = 1e-7;

/// Soft Dice overlap between a predicted class plane (values in [0,1]) and
/// a binary ground-truth plane:
///   (2 * sum(p*g) + eps) / (sum(p^2) + sum(g^2) + eps).
inline double dice_coefficient(const Tensor& p, const Tensor& g) {
    require(p.shape() == g.shape(), "dice_coefficient: shape mismatch " + p.shape().str() +
                                        " vs " + g.shape().str());
    const auto pv = p.data();
    const auto gv = g.data();
    double inter = 0.0;
    double p_sq = 0.0;
    double g_sq = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        inter += pv[i] * gv[i];
        p_sq += pv[i] * pv[i];
        g_sq += gv[i] * gv[i];
    }
    return (2.0 * inter + kDiceSmoothing) / (p_sq + g_sq + kDiceSmoothing);
}

/// Dice training objective: one minus the mean over classes of the soft
/// per-class Dice, with sums taken over the whole batch. `probs` are the
/// softmax maps, `truth` the one-hot ground truth; both (n, classes, h, w).
/// Differentiable w.r.t. `probs`; the result lies in [0, 1).
inline Tensor dice_loss(const Tensor& probs, const Tensor& truth, Tape* tape = nullptr) {
    require(probs.shape() == truth.shape(), "dice_loss: shape mismatch " + probs.shape().str() +
                                                " vs " + truth.shape().str());
    const std::vector<int> batch_and_space{0, 2, 3};
    const Tensor inter = reduce_sum(mul(probs, truth, tape), batch_and_space, tape);
    const Tensor p_sq = reduce_sum(mul(probs, probs, tape), batch_and_space, tape);
    const Tensor g_sq = reduce_sum(mul(truth, truth, tape), batch_and_space, tape);
    const Tensor numer = add_scalar(scale(inter, 2.0, tape), kDiceSmoothing, tape);
    const Tensor denom = add_scalar(add(p_sq, g_sq, tape), kDiceSmoothing, tape);
    const Tensor dice_per_class = div(numer, denom, tape);
    const Tensor mean_dice =
        scale(reduce_sum(dice_per_class, {1}, tape), 1.0 / static_cast<double>(probs.shape().c), tape);
    return add_scalar(scale(mean_dice, -1.0, tape), 1.0, tape);
}

}  // namespace tinyseg
