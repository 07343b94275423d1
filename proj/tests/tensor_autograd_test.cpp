#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "tinyseg/tinyseg.hpp"

using namespace tinyseg;
using Catch::Matchers::ContainsSubstring;

namespace {

Tensor make(const Shape& shape, std::vector<double> values) {
    return Tensor(shape, std::move(values));
}

double sum_of(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) {
        s += v;
    }
    return s;
}

}  // namespace

TEST_CASE("tensor shape and data length are validated") {
    REQUIRE_THROWS_AS(Tensor({1, 1, 2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
    REQUIRE_THROWS_AS(Tensor({-1, 1, 2, 2}, {}), std::invalid_argument);
    const Tensor t = Tensor::zeros({2, 3, 4, 5});
    REQUIRE(t.numel() == 120);
    REQUIRE(t.shape().str() == "(2,3,4,5)");
}

TEST_CASE("zero-sized tensors are allowed") {
    const Tensor t = Tensor::zeros({1, 0, 4, 4});
    REQUIRE(t.numel() == 0);
    REQUIRE(t.data().empty());
}

TEST_CASE("relu clamps negatives") {
    const Tensor x = make({1, 1, 1, 3}, {-1.0, 0.0, 2.0});
    const Tensor y = relu(x);
    REQUIRE(y.data()[0] == 0.0);
    REQUIRE(y.data()[1] == 0.0);
    REQUIRE(y.data()[2] == 2.0);
}

TEST_CASE("add with a zero tensor is the identity") {
    Rng rng(7);
    std::vector<double> values(24);
    for (double& v : values) {
        v = rng.uniform(-3.0, 3.0);
    }
    const Tensor x = make({2, 3, 2, 2}, values);
    const Tensor y = add(x, Tensor::zeros(x.shape()));
    for (std::size_t i = 0; i < values.size(); ++i) {
        REQUIRE(y.data()[i] == values[i]);
    }
}

TEST_CASE("mul is elementwise") {
    const Tensor a = make({1, 1, 1, 2}, {2.0, 3.0});
    const Tensor b = make({1, 1, 1, 2}, {4.0, 5.0});
    const Tensor y = mul(a, b);
    REQUIRE(y.data()[0] == 8.0);
    REQUIRE(y.data()[1] == 15.0);
}

TEST_CASE("binary elementwise ops name both shapes on mismatch") {
    const Tensor a = Tensor::zeros({1, 2, 2, 2});
    const Tensor b = Tensor::zeros({1, 3, 2, 2});
    REQUIRE_THROWS_WITH(add(a, b), ContainsSubstring("(1,2,2,2)") && ContainsSubstring("(1,3,2,2)"));
    REQUIRE_THROWS_WITH(mul(a, b), ContainsSubstring("shape mismatch"));
}

TEST_CASE("reduce_sum over all axes counts ones") {
    const Tensor x = Tensor::full({1, 1, 2, 2}, 1.0);
    const Tensor y = reduce_sum_all(x);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    REQUIRE(y.item() == 4.0);
}

TEST_CASE("reduce_sum over no axes returns the input unchanged") {
    const Tensor x = make({1, 1, 1, 3}, {1.0, 2.0, 3.0});
    const Tensor y = reduce_sum(x, {});
    REQUIRE(y.shape() == x.shape());
    for (int i = 0; i < 3; ++i) {
        REQUIRE(y.data()[i] == x.data()[i]);
    }
}

TEST_CASE("reduce_sum over the channel axis matches a brute-force loop") {
    std::vector<double> values(12);
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = static_cast<double>(i);
    }
    const Tensor x = make({1, 3, 2, 2}, values);
    const Tensor y = reduce_sum(x, {1});
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});

    // Brute-force oracle: direct loop over elements.
    std::vector<double> expected(4, 0.0);
    for (int c = 0; c < 3; ++c) {
        for (int h = 0; h < 2; ++h) {
            for (int w = 0; w < 2; ++w) {
                expected[static_cast<std::size_t>(h * 2 + w)] += x.at(0, c, h, w);
            }
        }
    }
    REQUIRE(expected == std::vector<double>{12.0, 15.0, 18.0, 21.0});
    for (int i = 0; i < 4; ++i) {
        REQUIRE(y.data()[i] == expected[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("reduce_sum conserves the total sum") {
    Rng rng(3);
    std::vector<double> values(36);
    for (double& v : values) {
        v = rng.uniform(-1.0, 1.0);
    }
    const Tensor x = make({3, 3, 2, 2}, values);
    const Tensor y = reduce_sum(x, {0, 2});
    REQUIRE_THAT(sum_of(y), Catch::Matchers::WithinAbs(sum_of(x), 1e-12));
}

TEST_CASE("reduce_sum rejects invalid axes") {
    REQUIRE_THROWS_AS(reduce_sum(Tensor::zeros({1, 1, 2, 2}), {4}), std::invalid_argument);
    REQUIRE_THROWS_AS(reduce_sum(Tensor::zeros({1, 1, 2, 2}), {-1}), std::invalid_argument);
}

TEST_CASE("backward of a plain sum is all ones") {
    Tape tape;
    const Tensor x = tape.watch(make({1, 2, 1, 2}, {0.5, -1.0, 2.0, 7.0}));
    const Tensor loss = reduce_sum_all(x, &tape);
    tape.backward(loss);
    const std::vector<double>* g = tape.grad(x);
    REQUIRE(g != nullptr);
    for (double v : *g) {
        REQUIRE(v == 1.0);
    }
}

TEST_CASE("backward of sum of squares is 2x") {
    Tape tape;
    const Tensor x = tape.watch(make({1, 1, 1, 1}, {3.0}));
    const Tensor loss = reduce_sum_all(mul(x, x, &tape), &tape);
    tape.backward(loss);
    REQUIRE((*tape.grad(x))[0] == 6.0);
}

TEST_CASE("backward validates the loss tensor") {
    Tape tape;
    const Tensor x = tape.watch(Tensor::zeros({1, 1, 2, 2}));
    const Tensor y = relu(x, &tape);
    REQUIRE_THROWS_WITH(tape.backward(y), ContainsSubstring("scalar"));
    const Tensor detached = Tensor::scalar(1.0);
    REQUIRE_THROWS_WITH(tape.backward(detached), ContainsSubstring("not on this tape"));
}

TEST_CASE("tensors from a discarded tape act as constants on a new tape") {
    Tensor stale;
    {
        Tape old_tape;
        const Tensor x = old_tape.watch(make({1, 1, 1, 2}, {1.0, 2.0}));
        stale = relu(x, &old_tape);
        REQUIRE(stale.on_tape());
    }
    Tape tape;
    const Tensor y = tape.watch(make({1, 1, 1, 2}, {3.0, 4.0}));
    const Tensor loss = reduce_sum_all(mul(y, stale, &tape), &tape);
    tape.backward(loss);
    const std::vector<double>* g = tape.grad(y);
    REQUIRE(g != nullptr);
    REQUIRE((*g)[0] == 1.0);
    REQUIRE((*g)[1] == 2.0);
    REQUIRE_THROWS_WITH(tape.grad(stale), ContainsSubstring("not on this tape"));
}

TEST_CASE("backward can only run once per tape") {
    Tape tape;
    const Tensor x = tape.watch(Tensor::scalar(2.0));
    const Tensor loss = reduce_sum_all(mul(x, x, &tape), &tape);
    tape.backward(loss);
    REQUIRE_THROWS_WITH(tape.backward(loss), ContainsSubstring("already ran"));
}

TEST_CASE("gradients have the same shape as their tensors") {
    Tape tape;
    const Tensor x = tape.watch(make({2, 1, 2, 1}, {1.0, 2.0, 3.0, 4.0}));
    const Tensor loss = reduce_sum_all(mul(x, x, &tape), &tape);
    tape.backward(loss);
    REQUIRE(tape.grad(x)->size() == static_cast<std::size_t>(x.numel()));
}

TEST_CASE("backward is linear in the loss") {
    Rng rng(11);
    std::vector<double> values(16);
    for (double& v : values) {
        v = rng.uniform(0.1, 2.0);
    }
    const Tensor x0 = make({1, 4, 2, 2}, values);
    const double a = 1.7;
    const double b = -0.4;

    auto grad_of = [&](auto&& build) {
        Tape tape;
        const Tensor x = tape.watch(x0);
        tape.backward(build(x, tape));
        return *tape.grad(x);
    };
    const std::vector<double> gf = grad_of(
        [](const Tensor& x, Tape& t) { return reduce_sum_all(mul(x, x, &t), &t); });
    const std::vector<double> gg =
        grad_of([](const Tensor& x, Tape& t) { return reduce_sum_all(relu(x, &t), &t); });
    const std::vector<double> gc = grad_of([&](const Tensor& x, Tape& t) {
        const Tensor f = reduce_sum_all(mul(x, x, &t), &t);
        const Tensor g = reduce_sum_all(relu(x, &t), &t);
        return add(scale(f, a, &t), scale(g, b, &t), &t);
    });
    for (std::size_t i = 0; i < gc.size(); ++i) {
        REQUIRE_THAT(gc[i], Catch::Matchers::WithinAbs(a * gf[i] + b * gg[i], 1e-12));
    }
}

TEST_CASE("grad_check on a linear function is exact to 1e-10") {
    Rng rng(5);
    std::vector<double> values(12);
    for (double& v : values) {
        v = rng.uniform(-1.0, 1.0);
    }
    const double err = grad_check(
        [](const Tensor& x, Tape* t) { return reduce_sum_all(x, t); },
        make({1, 3, 2, 2}, values), 1e-5);
    REQUIRE(err < 1e-10);
}

TEST_CASE("grad_check on sum of relu away from the kink") {
    Rng rng(6);
    std::vector<double> values(16);
    for (double& v : values) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        v = sign * rng.uniform(1e-3, 1.0);  // at least 10*eps away from zero
    }
    const double err = grad_check(
        [](const Tensor& x, Tape* t) { return reduce_sum_all(relu(x, t), t); },
        make({1, 4, 2, 2}, values), 1e-5);
    REQUIRE(err < 1e-6);
}

TEST_CASE("grad_check through conv2d and sum") {
    Rng rng(8);
    std::vector<double> values(50);
    for (double& v : values) {
        v = rng.uniform(-1.0, 1.0);
    }
    std::vector<double> wv(2 * 2 * 9);
    for (double& v : wv) {
        v = rng.uniform(-0.5, 0.5);
    }
    const Tensor w = make({2, 2, 3, 3}, wv);
    const Tensor b = make({1, 2, 1, 1}, {0.1, -0.2});
    const double err = grad_check(
        [w, b](const Tensor& x, Tape* t) {
            return reduce_sum_all(conv2d(x, w, b, 1, Padding::kSame, t), t);
        },
        make({1, 2, 5, 5}, values), 1e-5);
    REQUIRE(err < 1e-5);
}

TEST_CASE("grad_check rejects functions that produce NaN") {
    REQUIRE_THROWS_AS(grad_check(
                          [](const Tensor& x, Tape* t) {
                              return scale(reduce_sum_all(x, t),
                                           std::numeric_limits<double>::quiet_NaN(), t);
                          },
                          Tensor::full({1, 1, 1, 2}, 1.0), 1e-5),
                      std::runtime_error);
}

TEST_CASE("same seed produces bit-identical random tensors") {
    Rng a(42);
    Rng b(42);
    for (int i = 0; i < 1000; ++i) {
        REQUIRE(a.uniform() == b.uniform());
    }
    Rng c(42);
    Rng d(42);
    for (int i = 0; i < 1000; ++i) {
        REQUIRE(c.normal() == d.normal());
    }
    REQUIRE(derive_seed(1, 2) != derive_seed(1, 3));
    REQUIRE(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_CASE("uniform_int covers its range inclusively") {
    Rng rng(9);
    bool seen_lo = false;
    bool seen_hi = false;
    for (int i = 0; i < 2000; ++i) {
        const std::int64_t v = rng.uniform_int(2, 5);
        REQUIRE(v >= 2);
        REQUIRE(v <= 5);
        seen_lo = seen_lo || v == 2;
        seen_hi = seen_hi || v == 5;
    }
    REQUIRE(seen_lo);
    REQUIRE(seen_hi);
}

TEST_CASE("ops on finite inputs stay finite") {
    Rng rng(13);
    std::vector<double> values(64);
    for (double& v : values) {
        v = rng.uniform(-100.0, 100.0);
    }
    const Tensor x = make({1, 4, 4, 4}, values);
    for (const Tensor& t : {relu(x), scale(x, 1e6), softmax_channels(x), add(x, x), mul(x, x)}) {
        for (double v : t.data()) {
            REQUIRE(std::isfinite(v));
        }
    }
}
