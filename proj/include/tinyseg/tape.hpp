#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tinyseg/tensor.hpp"

namespace tinyseg {

/// Reverse-mode tape. Operations append nodes during the forward pass, so
/// the node list is always in topological order; `backward` walks it once
/// in reverse. One tape serves one forward/backward pass and is then
/// discarded.
class Tape {
public:
    /// A backward rule receives the gradient at the node's output and
    /// accumulates into the gradients of its parents via `add_grad`.
    using BackwardFn = std::function<void(Tape&, const std::vector<double>&)>;

    Tape() : serial_(next_serial()) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::uint64_t serial() const { return serial_; }

    /// Registers `t` as a leaf whose gradient can be queried after
    /// `backward`. Returns a copy bound to the new node.
    Tensor watch(const Tensor& t) {
        if (t.node() >= 0 && t.tape_serial() == serial_) {
            return t;
        }
        Tensor bound = t;
        bound.node_ = record(t.shape(), nullptr);
        bound.tape_serial_ = serial_;
        bound.requires_grad_ = true;
        return bound;
    }

    /// Appends a node; `fn` is null for leaves.
    int record(const Shape& shape, BackwardFn fn) {
        nodes_.push_back(Node{shape, std::move(fn)});
        grads_.emplace_back();
        return static_cast<int>(nodes_.size()) - 1;
    }

    void add_grad(int node, const double* values, std::int64_t count) {
        std::vector<double>& g = grads_[static_cast<std::size_t>(node)];
        if (g.empty()) {
            g.assign(values, values + count);
            return;
        }
        for (std::int64_t i = 0; i < count; ++i) {
            g[static_cast<std::size_t>(i)] += values[i];
        }
    }

    void add_grad(int node, const std::vector<double>& values) {
        add_grad(node, values.data(), static_cast<std::int64_t>(values.size()));
    }

    /// Propagates d(loss)/d(node) to every recorded node. `loss` must be a
    /// scalar-shaped tensor produced on this tape.
    void backward(const Tensor& loss) {
        require(loss.shape() == Shape{1, 1, 1, 1},
                "backward expects a scalar-shaped (1,1,1,1) loss, got " + loss.shape().str());
        require(loss.on_tape() && loss.tape_serial() == serial_ &&
                    loss.node() < static_cast<int>(nodes_.size()),
                "backward: loss tensor is not on this tape");
        require(!ran_, "backward already ran on this tape");
        ran_ = true;
        grads_[static_cast<std::size_t>(loss.node())] = {1.0};
        for (int i = loss.node(); i >= 0; --i) {
            const Node& node = nodes_[static_cast<std::size_t>(i)];
            const std::vector<double>& g = grads_[static_cast<std::size_t>(i)];
            if (node.backward && !g.empty()) {
                node.backward(*this, g);
            }
        }
    }

    /// Gradient of the last `backward` loss w.r.t. `t`, or nullptr if no
    /// gradient reached it. The vector length equals `t.numel()`.
    const std::vector<double>* grad(const Tensor& t) const {
        require(t.on_tape() && t.tape_serial() == serial_ &&
                    t.node() < static_cast<int>(nodes_.size()),
                "grad: tensor is not on this tape");
        const std::vector<double>& g = grads_[static_cast<std::size_t>(t.node())];
        return g.empty() ? nullptr : &g;
    }

    std::size_t size() const { return nodes_.size(); }

private:
    static std::uint64_t next_serial() {
        static std::atomic<std::uint64_t> counter{0};
        return ++counter;
    }

    struct Node {
        Shape shape;
        BackwardFn backward;
    };

    std::uint64_t serial_;
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    bool ran_ = false;
};

/// Builds a tensor and, when `node >= 0`, marks it as produced by that
/// node of `tape`. Used by every recorded operation.
inline Tensor tape_output(const Shape& shape, std::vector<double> values, Tape* tape, int node) {
    Tensor t(shape, std::move(values));
    if (node >= 0) {
        t.node_ = node;
        t.tape_serial_ = tape->serial();
        t.requires_grad_ = true;
    }
    return t;
}

/// Node id of `x` as an input to a recorded op: its existing node on this
/// tape, a fresh leaf when the tensor asks for gradients but was never
/// watched, or -1 for constants. A node id from some other (discarded)
/// tape does not count; such tensors are constants here.
inline int tape_input(Tape* tape, const Tensor& x) {
    if (tape == nullptr) {
        return -1;
    }
    if (x.on_tape() && x.tape_serial() == tape->serial()) {
        return x.node();
    }
    if (x.requires_grad()) {
        return tape->record(x.shape(), nullptr);
    }
    return -1;
}

}  // namespace tinyseg
