#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tinyseg {

class Tape;

inline void require(bool condition, const std::string& message) {
    if (!condition) {
        throw std::invalid_argument(message);
    }
}

/// Dimensions of a rank-4 tensor in NCHW order.
struct Shape {
    std::int64_t n = 0;
    std::int64_t c = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    std::int64_t numel() const { return n * c * h * w; }

    bool operator==(const Shape& other) const = default;

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

/// Dense rank-4 tensor of 64-bit floats, row-major NCHW layout.
///
/// The element buffer is immutable and shared between copies, so passing
/// tensors by value is cheap and backward closures can retain their inputs
/// safely. A tensor optionally carries the id of the tape node that
/// produced it; -1 means detached from any tape.
class Tensor {
public:
    Tensor() = default;

    Tensor(const Shape& shape, std::vector<double> values)
        : shape_(shape),
          data_(std::make_shared<const std::vector<double>>(std::move(values))) {
        require(shape_.n >= 0 && shape_.c >= 0 && shape_.h >= 0 && shape_.w >= 0,
                "tensor shape must be non-negative, got " + shape_.str());
        require(static_cast<std::int64_t>(data_->size()) == shape_.numel(),
                "tensor data length " + std::to_string(data_->size()) +
                    " does not match shape " + shape_.str());
    }

    static Tensor zeros(const Shape& shape) {
        return Tensor(shape, std::vector<double>(static_cast<std::size_t>(shape.numel()), 0.0));
    }

    static Tensor full(const Shape& shape, double value) {
        return Tensor(shape, std::vector<double>(static_cast<std::size_t>(shape.numel()), value));
    }

    static Tensor scalar(double value) { return Tensor({1, 1, 1, 1}, {value}); }

    const Shape& shape() const { return shape_; }
    std::int64_t numel() const { return shape_.numel(); }
    bool empty() const { return data_ == nullptr; }

    std::span<const double> data() const {
        static const std::vector<double> kEmpty;
        return data_ ? std::span<const double>(*data_) : std::span<const double>(kEmpty);
    }

    double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return (*data_)[static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w)];
    }

    double item() const {
        require(numel() == 1, "item() requires a single-element tensor, got " + shape_.str());
        return (*data_)[0];
    }

    bool requires_grad() const { return requires_grad_; }
    int node() const { return node_; }
    bool on_tape() const { return node_ >= 0; }
    std::uint64_t tape_serial() const { return tape_serial_; }

    /// Copy sharing the same buffer, flagged as a gradient target.
    Tensor with_grad() const {
        Tensor t = *this;
        t.requires_grad_ = true;
        return t;
    }

    /// Copy sharing the same buffer, detached from any tape.
    Tensor detached() const {
        Tensor t = *this;
        t.node_ = -1;
        t.tape_serial_ = 0;
        t.requires_grad_ = false;
        return t;
    }

private:
    Shape shape_{};
    std::shared_ptr<const std::vector<double>> data_;
    bool requires_grad_ = false;
    int node_ = -1;
    // Which tape the node id belongs to; tensors from a discarded tape
    // act as constants on any other tape.
    std::uint64_t tape_serial_ = 0;

    friend class Tape;
    friend Tensor tape_output(const Shape&, std::vector<double>, Tape*, int);
};

}  // namespace tinyseg
