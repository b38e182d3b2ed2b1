#include "doctest.h"
#include "support.h"

#include "polysed/adadelta.h"
#include "polysed/errors.h"

#include <cmath>
#include <numeric>

using namespace polysed;
using polysed::test::gradient_check;
using polysed::test::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

Var first(const std::vector<Var>& v) { return v[0]; }

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(t.rank() == 2);
    CHECK(t.size() == 6);
    CHECK(t.at({1, 2}) == 6.0);
    CHECK(t.reshaped({3, 2}).at({2, 0}) == 5.0);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    CHECK(Tensor().rank() == 0);
    CHECK(Tensor::scalar(3.5).item() == 3.5);
    CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("seeded rng is reproducible and forks are independent") {
    SeededRng a(42);
    SeededRng b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    SeededRng root(7);
    SeededRng f1 = root.fork("dropout");
    SeededRng f2 = root.fork("dropout");
    SeededRng f3 = root.fork("shuffle");
    CHECK(f1.next_u64() == f2.next_u64());
    CHECK(f1.seed() != f3.seed());

    SeededRng r(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        REQUIRE(r.below(7) < 7);
    }
    // The std::mt19937_64 output sequence is pinned by the standard.
    SeededRng pinned(5489);
    std::uint64_t x = 0;
    for (int i = 0; i < 10000; ++i) {
        x = pinned.next_u64();
    }
    CHECK(x == 9981545732273789042ull);
}

TEST_CASE("shuffle is a permutation") {
    SeededRng rng(11);
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    rng.shuffle(std::span<int>(v));
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) {
        CHECK(sorted[i] == i);
    }
}

TEST_CASE("elementwise primitives match finite differences") {
    SeededRng rng(1);
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor b = random_tensor({3, 4}, rng);
    const Tensor row = random_tensor({4}, rng);
    const Tensor col = random_tensor({3, 1}, rng);
    const Tensor pos = random_tensor({3, 4}, rng, 0.5, 2.0);

    CHECK(gradient_check({a, b}, [](Tape&, const auto& v) { return ops::add(v[0], v[1]); }) < kGradTol);
    CHECK(gradient_check({a, row}, [](Tape&, const auto& v) { return ops::sub(v[0], v[1]); }) < kGradTol);
    CHECK(gradient_check({a, col}, [](Tape&, const auto& v) { return ops::mul(v[0], v[1]); }) < kGradTol);
    CHECK(gradient_check({a, pos}, [](Tape&, const auto& v) { return ops::div(v[0], v[1]); }) < kGradTol);
    CHECK(gradient_check({row, pos}, [](Tape&, const auto& v) { return ops::div(v[0], v[1]); }) < kGradTol);
    CHECK(gradient_check({a}, [](Tape&, const auto& v) { return ops::scale(first(v), -2.5); }) < kGradTol);
    CHECK(gradient_check({a}, [](Tape&, const auto& v) { return ops::add_scalar(first(v), 0.3); }) < kGradTol);
    CHECK(gradient_check({a}, [](Tape&, const auto& v) { return ops::square(first(v)); }) < kGradTol);
    CHECK(gradient_check({pos}, [](Tape&, const auto& v) { return ops::log(first(v)); }) < kGradTol);
    CHECK(gradient_check({a}, [](Tape&, const auto& v) { return ops::sigmoid(first(v)); }) < kGradTol);
}

TEST_CASE("piecewise primitives away from their kinks") {
    // Keep every entry at least 0.1 from 0 (relu) and from +-0.5 (clamp).
    Tensor x({2, 5}, std::vector<double>{-0.9, -0.3, 0.2, 0.35, 0.8, -0.7, 0.15, -0.2, 0.65, 0.95});
    CHECK(gradient_check({x}, [](Tape&, const auto& v) { return ops::relu(first(v)); }) < kGradTol);
    CHECK(gradient_check({x}, [](Tape&, const auto& v) { return ops::clamp(first(v), -0.5, 0.5); }) < kGradTol);

    Tape tape;
    const Var v = tape.variable(x);
    tape.backward(ops::sum(ops::clamp(v, -0.5, 0.5)));
    const Tensor g = tape.grad(v);
    CHECK(g[0] == 0.0);  // -0.9 clamped
    CHECK(g[1] == 1.0);
    CHECK(g[4] == 0.0);
}

TEST_CASE("reductions and normalizations") {
    SeededRng rng(2);
    const Tensor a = random_tensor({2, 3, 4}, rng);
    CHECK(gradient_check({a}, [](Tape&, const auto& v) { return ops::sum(first(v)); }) < kGradTol);
    CHECK(gradient_check({a}, [](Tape&, const auto& v) { return ops::mean(first(v)); }) < kGradTol);
    for (std::size_t axis = 0; axis < 3; ++axis) {
        CAPTURE(axis);
        CHECK(gradient_check({a}, [axis](Tape&, const auto& v) { return ops::sum(first(v), axis); }) < kGradTol);
        CHECK(gradient_check({a}, [axis](Tape&, const auto& v) { return ops::sum(first(v), axis, true); }) <
              kGradTol);
        CHECK(gradient_check({a}, [axis](Tape&, const auto& v) { return ops::softmax(first(v), axis); }) <
              kGradTol);
        CHECK(gradient_check({a}, [axis](Tape&, const auto& v) { return ops::l2norm(first(v), axis); }) <
              kGradTol);
    }
}

TEST_CASE("softmax rows sum to one") {
    SeededRng rng(3);
    Tape tape;
    const Var s = ops::softmax(tape.constant(random_tensor({5, 7}, rng, -20, 20)), 1);
    for (std::size_t r = 0; r < 5; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 7; ++c) {
            total += s.value().at({r, c});
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("l2norm adjoint at the zero vector is zero") {
    Tape tape;
    const Var x = tape.variable(Tensor({2, 3}, std::vector<double>{0, 0, 0, 3, 4, 0}));
    const Var n = ops::l2norm(x, 1);
    CHECK(n.value()[0] == 0.0);
    CHECK(n.value()[1] == 5.0);
    tape.backward(ops::sum(n));
    const Tensor g = tape.grad(x);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
    CHECK(g[3] == doctest::Approx(0.6));
    CHECK(g[4] == doctest::Approx(0.8));
}

TEST_CASE("matmul, conv2d and pooling gradients") {
    SeededRng rng(4);
    CHECK(gradient_check({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
                         [](Tape&, const auto& v) { return ops::matmul(v[0], v[1]); }) < kGradTol);
    CHECK(gradient_check({random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)},
                         [](Tape&, const auto& v) { return ops::matmul(v[0], v[1]); }) < kGradTol);
    CHECK(gradient_check({random_tensor({2, 5, 6}, rng), random_tensor({3, 2, 3, 2}, rng)},
                         [](Tape&, const auto& v) { return ops::conv2d(v[0], v[1]); }) < kGradTol);
    // Distinct values keep the max unique within each pool.
    Tensor distinct({2, 3, 6});
    std::vector<double> vals(distinct.size());
    std::iota(vals.begin(), vals.end(), 0.0);
    rng.shuffle(std::span<double>(vals));
    std::copy(vals.begin(), vals.end(), distinct.data());
    CHECK(gradient_check({distinct}, [](Tape&, const auto& v) { return ops::maxpool_last(first(v), 3); }) <
          kGradTol);
}

TEST_CASE("conv2d agrees with a direct loop") {
    SeededRng rng(5);
    const Tensor in = random_tensor({2, 5, 4}, rng);
    const Tensor k = random_tensor({3, 2, 2, 3}, rng);
    Tape tape;
    const Tensor out = ops::conv2d(tape.constant(in), tape.constant(k)).value();
    REQUIRE(out.shape() == Shape{3, 4, 2});
    for (std::size_t o = 0; o < 3; ++o) {
        for (std::size_t y = 0; y < 4; ++y) {
            for (std::size_t x = 0; x < 2; ++x) {
                double acc = 0.0;
                for (std::size_t c = 0; c < 2; ++c) {
                    for (std::size_t i = 0; i < 2; ++i) {
                        for (std::size_t j = 0; j < 3; ++j) {
                            acc += in.at({c, y + i, x + j}) * k.at({o, c, i, j});
                        }
                    }
                }
                CHECK(out.at({o, y, x}) == doctest::Approx(acc).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("structural primitives") {
    SeededRng rng(6);
    const Tensor a = random_tensor({2, 3, 4}, rng);
    const Tensor b = random_tensor({2, 1, 4}, rng);
    CHECK(gradient_check({a}, [](Tape&, const auto& v) { return ops::pad(first(v), 1, 2, 1, PadMode::zero); }) <
          kGradTol);
    CHECK(gradient_check({a}, [](Tape&, const auto& v) { return ops::pad(first(v), 2, 1, 3, PadMode::edge); }) <
          kGradTol);
    CHECK(gradient_check({a}, [](Tape&, const auto& v) { return ops::reshape(first(v), {4, 6}); }) < kGradTol);
    CHECK(gradient_check({a}, [](Tape&, const auto& v) { return ops::permute(first(v), {2, 0, 1}); }) <
          kGradTol);
    CHECK(gradient_check({a, b}, [](Tape&, const auto& v) {
              return ops::concat(std::vector<Var>{v[0], v[1]}, 1);
          }) < kGradTol);

    Tape tape;
    const Var x = tape.constant(Tensor({1, 3}, std::vector<double>{1, 2, 3}));
    const Tensor edge = ops::pad(x, 1, 2, 1, PadMode::edge).value();
    CHECK(edge == Tensor({1, 6}, std::vector<double>{1, 1, 1, 2, 3, 3}));
    const Tensor zero = ops::pad(x, 1, 1, 0, PadMode::zero).value();
    CHECK(zero == Tensor({1, 4}, std::vector<double>{0, 1, 2, 3}));
}

TEST_CASE("broadcasting follows numpy alignment") {
    Tape tape;
    const Var a = tape.constant(Tensor({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}));
    const Var r = tape.constant(Tensor({3}, std::vector<double>{10, 20, 30}));
    const Var c = tape.constant(Tensor({2, 1}, std::vector<double>{100, 200}));
    CHECK(ops::add(a, r).value() == Tensor({2, 3}, std::vector<double>{11, 22, 33, 14, 25, 36}));
    CHECK(ops::add(a, c).value() == Tensor({2, 3}, std::vector<double>{101, 102, 103, 204, 205, 206}));
    CHECK_THROWS_AS(ops::add(a, tape.constant(Tensor({2}))), ShapeError);
    CHECK_THROWS_AS(ops::matmul(a, a), ShapeError);
}

TEST_CASE("a variable used twice accumulates its gradient") {
    Tape tape;
    const Var x = tape.variable(Tensor({3}, std::vector<double>{1, -2, 3}));
    tape.backward(ops::sum(ops::mul(x, x)));
    CHECK(tape.grad(x) == Tensor({3}, std::vector<double>{2, -4, 6}));
}

TEST_CASE("tape errors") {
    Tape tape;
    const Var x = tape.variable(Tensor({2}, std::vector<double>{1, -1}));
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
    CHECK_THROWS_AS(ops::log(x), NumericError);
    CHECK_THROWS_AS(ops::div(x, tape.constant(Tensor({2}))), NumericError);
}

TEST_CASE("parameters the loss ignores get zero gradients and are reported") {
    Tape tape;
    const Var used = tape.parameter("used", Tensor({2}, 1.0));
    const Var unused = tape.parameter("unused", Tensor({3}, 1.0));
    (void)unused;
    const Gradients g = tape.backward(ops::sum(ops::square(used)));
    CHECK(g.at("used") == Tensor({2}, 2.0));
    CHECK(g.at("unused") == Tensor({3}, 0.0));
    REQUIRE(g.detached.size() == 1);
    CHECK(g.detached[0] == "unused");
}

TEST_CASE("adadelta update follows the running-average recurrences") {
    ParameterMap params{{"w", Tensor({1}, 0.0)}};
    AdaDeltaState state;
    const std::map<std::string, Tensor> grads{{"w", Tensor({1}, 1.0)}};

    // Reference recurrences, written out for a scalar.
    const double rho = 0.95;
    const double eps = 1e-6;
    double eg = 0.0;
    double ed = 0.0;
    double w = 0.0;
    std::vector<double> steps;
    for (int i = 0; i < 3; ++i) {
        eg = rho * eg + (1 - rho) * 1.0;
        const double dx = -std::sqrt(ed + eps) / std::sqrt(eg + eps) * 1.0;
        ed = rho * ed + (1 - rho) * dx * dx;
        w += dx;
        steps.push_back(dx);

        const double before = params["w"][0];
        adadelta_step(params, grads, state);
        CHECK(params["w"][0] - before == doctest::Approx(dx).epsilon(1e-12));
        CHECK(params["w"][0] == doctest::Approx(w).epsilon(1e-12));
    }
    CHECK(steps[0] == doctest::Approx(-0.0044721).epsilon(1e-4));
    CHECK(std::abs(steps[1]) > std::abs(steps[0]));
}

TEST_CASE("adadelta rejects non-finite gradients without touching parameters") {
    ParameterMap params{{"a", Tensor({2}, 1.0)}, {"b", Tensor({1}, 2.0)}};
    AdaDeltaState state;
    std::map<std::string, Tensor> grads{{"a", Tensor({2}, 0.5)}, {"b", Tensor({1}, std::nan(""))}};
    CHECK_THROWS_AS(adadelta_step(params, grads, state), NumericError);
    CHECK(params["a"] == Tensor({2}, 1.0));
    CHECK(params["b"] == Tensor({1}, 2.0));
    grads = {{"a", Tensor({3}, 0.5)}};
    CHECK_THROWS_AS(adadelta_step(params, grads, state), ShapeError);
}
