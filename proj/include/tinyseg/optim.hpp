#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "tinyseg/params.hpp"
#include "tinyseg/tensor.hpp"

namespace tinyseg {

enum class OptimizerKind { kSgdMomentum, kAdam };

inline std::string optimizer_name(OptimizerKind kind) {
    return kind == OptimizerKind::kAdam ? "adam" : "sgd_momentum";
}

inline OptimizerKind optimizer_from_name(const std::string& name) {
    if (name == "adam") return OptimizerKind::kAdam;
    if (name == "sgd" || name == "sgd_momentum") return OptimizerKind::kSgdMomentum;
    throw std::invalid_argument("unknown optimizer: " + name);
}

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::kAdam;
    double lr = 1e-3;
    double momentum = 0.9;    // sgd_momentum
    double beta1 = 0.9;       // adam
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// SGD with momentum (v <- mu*v + g, p <- p - lr*v) or bias-corrected
/// Adam. Moment buffers are created lazily per parameter name; updates
/// iterate parameters in store order, so steps are deterministic.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config) : config_(config) {}

    const OptimizerConfig& config() const { return config_; }
    std::int64_t step_count() const { return step_; }

    /// Applies one update. `grads` must contain an entry for every
    /// trainable parameter.
    void step(ParamStore& params,
              const std::unordered_map<std::string, std::vector<double>>& grads) {
        ++step_;
        for (const ParamEntry& entry : params.entries()) {
            if (!entry.trainable) {
                continue;
            }
            const auto it = grads.find(entry.name);
            require(it != grads.end(), "optimizer: missing gradient for parameter " + entry.name);
            const std::vector<double>& g = it->second;
            require(static_cast<std::int64_t>(g.size()) == entry.value.numel(),
                    "optimizer: gradient size mismatch for " + entry.name);
            const auto values = entry.value.data();
            std::vector<double> updated(values.begin(), values.end());
            if (config_.kind == OptimizerKind::kSgdMomentum) {
                std::vector<double>& v = buffer(velocity_, entry.name, g.size());
                for (std::size_t i = 0; i < g.size(); ++i) {
                    v[i] = config_.momentum * v[i] + g[i];
                    updated[i] -= config_.lr * v[i];
                }
            } else {
                std::vector<double>& m = buffer(first_moment_, entry.name, g.size());
                std::vector<double>& v = buffer(second_moment_, entry.name, g.size());
                const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
                const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
                for (std::size_t i = 0; i < g.size(); ++i) {
                    m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
                    v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
                    const double m_hat = m[i] / bc1;
                    const double v_hat = v[i] / bc2;
                    updated[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
                }
            }
            params.set(entry.name, Tensor(entry.value.shape(), std::move(updated)));
        }
    }

private:
    std::vector<double>& buffer(std::unordered_map<std::string, std::vector<double>>& store,
                                const std::string& name, std::size_t size) {
        auto it = store.find(name);
        if (it == store.end()) {
            it = store.emplace(name, std::vector<double>(size, 0.0)).first;
        }
        return it->second;
    }

    OptimizerConfig config_;
    std::int64_t step_ = 0;
    std::unordered_map<std::string, std::vector<double>> velocity_;
    std::unordered_map<std::string, std::vector<double>> first_moment_;
    std::unordered_map<std::string, std::vector<double>> second_moment_;
};

}  // namespace tinyseg
