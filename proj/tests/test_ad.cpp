#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ad/gradcheck.hpp"
#include "ad/ops.hpp"
#include "ad/tensor.hpp"
#include "common/rng.hpp"

using namespace dfba;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
double dot_all(const Tensor<T>& a, const Tensor<T>& b) {
    double acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        acc += static_cast<double>(a.values()[i]) * static_cast<double>(b.values()[i]);
    }
    return acc;
}

} // namespace

TEST_CASE("elementwise forward basics") {
    Tensor<float> x({1}, {0.0f});
    CHECK(exp(x).item() == doctest::Approx(1.0f));

    Tensor<float> a({2}, {1.0f, 2.0f});
    Tensor<float> b({2}, {3.0f, 4.0f});
    auto s = add(a, b);
    CHECK(s.values()[0] == 4.0f);
    CHECK(s.values()[1] == 6.0f);

    Tensor<float> c({3}, {1.0f, -2.0f, 3.0f});
    CHECK(l1_norm(c).item() == doctest::Approx(6.0f));
    CHECK(frobenius_norm(Tensor<float>::zeros({2, 2})).item() == 0.0f);
}

TEST_CASE("exp gradient matches finite differences at 0") {
    Tensor<double> x({1}, {0.0});
    auto fn = [&]() { return sum(exp(neg(x))); };
    CHECK(grad_check<double>(fn, x) < 1e-6);

    x.set_requires_grad(true);
    x.zero_grad();
    {
        Graph<double> tape;
        auto y = exp(neg(x));
        tape.backward(y);
    }
    CHECK(x.grad()[0] == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("broadcast add/mul with trailing dimensions") {
    Tensor<float> m({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<float> row({3}, {10, 20, 30});
    auto r = add(m, row);
    CHECK(r.values() == std::vector<float>{11, 22, 33, 14, 25, 36});

    // channel bias against a [b,c,h,w] map
    Tensor<float> img = Tensor<float>::full({1, 2, 2, 2}, 1.0f);
    Tensor<float> bias({2, 1, 1}, {5.0f, 7.0f});
    auto shifted = add(img, bias);
    CHECK(shifted.values() == std::vector<float>{6, 6, 6, 6, 8, 8, 8, 8});

    SUBCASE("incompatible shapes raise with both shapes named") {
        Tensor<float> bad({2}, {1, 2});
        CHECK_THROWS_WITH_AS(add(m, bad), doctest::Contains("[2x3]"), ShapeError);
    }
}

TEST_CASE("broadcast backward reduces over expanded dims") {
    Rng rng(7);
    auto a = random_tensor<double>({2, 3}, rng);
    auto b = random_tensor<double>({3}, rng, 0.5, 1.5);
    auto fn = [&]() { return sum(mul(a, b)); };
    CHECK(grad_check<double>(fn, {a, b}) < 1e-6);

    auto c = random_tensor<double>({2, 2, 2}, rng);
    auto d = random_tensor<double>({2, 1, 1}, rng, 0.5, 1.5);
    auto fn2 = [&]() { return sum(div(c, d)); };
    CHECK(grad_check<double>(fn2, {c, d}) < 1e-6);
}

TEST_CASE("division by zero is rejected") {
    Tensor<float> a({2}, {1, 2});
    Tensor<float> z({2}, {1, 0});
    CHECK_THROWS_AS(div(a, z), ValueError);
}

TEST_CASE("matmul forward and gradient") {
    Tensor<float> eye({2, 2}, {1, 0, 0, 1});
    Tensor<float> m({2, 2}, {1, 2, 3, 4});
    CHECK(matmul(eye, m).values() == m.values());

    Tensor<float> s1({1, 1}, {2});
    Tensor<float> s2({1, 1}, {3});
    CHECK(matmul(s1, s2).item() == 6.0f);

    Rng rng(3);
    auto a = random_tensor<double>({3, 4}, rng);
    auto b = random_tensor<double>({4, 2}, rng);
    auto fn = [&]() { return sum(mul(matmul(a, b), matmul(a, b))); };
    CHECK(grad_check<double>(fn, {a, b}) < 1e-6);

    auto af = random_tensor<float>({3, 4}, rng);
    auto bf = random_tensor<float>({4, 2}, rng);
    auto fnf = [&]() { return sum(matmul(af, bf)); };
    CHECK(grad_check<float>(fnf, {af, bf}) < 1e-3f);

    CHECK_THROWS_AS(matmul(a, Tensor<double>::zeros({3, 2})), ShapeError);
}

TEST_CASE("conv2d forward cases") {
    auto x = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
    auto k = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
    auto y = conv2d(x, k, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 9.0f);

    auto zk = Tensor<float>::zeros({2, 1, 2, 2});
    auto y2 = conv2d(x, zk, 1, 0);
    for (float v : y2.values()) CHECK(v == 0.0f);

    CHECK_THROWS_WITH_AS(conv2d(Tensor<float>::zeros({1, 1, 2, 2}), k, 1, 0),
                         doctest::Contains("invalid geometry"), ShapeError);
}

TEST_CASE("conv2d gradient vs finite differences") {
    Rng rng(11);
    auto x = random_tensor<double>({2, 3, 8, 8}, rng);
    auto k = random_tensor<double>({4, 3, 3, 3}, rng);
    auto fn = [&]() {
        auto y = conv2d(x, k, 2, 1);
        return sum(mul(y, y));
    };
    CHECK(grad_check<double>(fn, {x, k}) < 1e-6);
}

TEST_CASE("conv_transpose2d forward and adjointness") {
    Tensor<float> x({1, 1, 1, 1}, {2.0f});
    auto k = Tensor<float>::full({1, 1, 2, 2}, 1.0f);
    auto y = conv_transpose2d(x, k, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (float v : y.values()) CHECK(v == 2.0f);

    auto zx = Tensor<float>::zeros({1, 2, 3, 3});
    auto k2 = Tensor<float>::full({2, 1, 2, 2}, 0.5f);
    for (float v : conv_transpose2d(zx, k2, 1, 0).values()) CHECK(v == 0.0f);

    // <conv2d(x,k), y> == <x, conv_transpose2d(y,k)> over random instances
    Rng rng(23);
    struct Geometry {
        int64_t h, kh, stride, pad;
    };
    for (Geometry geo : {Geometry{6, 3, 1, 0}, Geometry{6, 2, 2, 0}, Geometry{8, 4, 2, 1},
                         Geometry{5, 3, 1, 1}, Geometry{1, 1, 1, 0}}) {
        auto x3 = random_tensor<float>({2, 3, geo.h, geo.h}, rng);
        auto k3 = random_tensor<float>({4, 3, geo.kh, geo.kh}, rng);
        auto fwd = conv2d(x3, k3, geo.stride, geo.pad);
        auto y3 = random_tensor<float>(fwd.shape(), rng);
        auto bwd = conv_transpose2d(y3, k3, geo.stride, geo.pad);
        REQUIRE(bwd.shape() == x3.shape());
        const double lhs = dot_all(fwd, y3);
        const double rhs = dot_all(x3, bwd);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
    }
}

TEST_CASE("conv_transpose2d gradient vs finite differences") {
    Rng rng(5);
    auto x = random_tensor<double>({1, 2, 3, 3}, rng);
    auto k = random_tensor<double>({2, 3, 4, 4}, rng);
    auto fn = [&]() {
        auto y = conv_transpose2d(x, k, 2, 1);
        return sum(mul(y, y));
    };
    CHECK(grad_check<double>(fn, {x, k}) < 1e-6);
}

TEST_CASE("reductions and norms") {
    Tensor<float> x({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(sum(x).item() == 21.0f);
    CHECK(mean(x).item() == doctest::Approx(3.5f));

    auto rows = sum(x, 1, false);
    CHECK(rows.shape() == Shape{2});
    CHECK(rows.values() == std::vector<float>{6, 15});

    auto cols = sum(x, 0, true);
    CHECK(cols.shape() == Shape{1, 3});
    CHECK(cols.values() == std::vector<float>{5, 7, 9});

    CHECK_THROWS_AS(sum(x, 2, false), ShapeError);

    Tensor<float> v({2}, {3, 4});
    v.set_requires_grad(true);
    v.zero_grad();
    {
        Graph<float> tape;
        tape.backward(l2_norm(v));
    }
    CHECK(v.grad()[0] == doctest::Approx(0.6f));
    CHECK(v.grad()[1] == doctest::Approx(0.8f));
}

TEST_CASE("softmax rows are a distribution") {
    Rng rng(17);
    for (int it = 0; it < 10; ++it) {
        auto x = random_tensor<float>({4, 5}, rng, -30.0, 30.0);
        auto p = softmax(x);
        for (int64_t i = 0; i < 4; ++i) {
            float row = 0;
            for (int64_t j = 0; j < 5; ++j) {
                const float pv = p.values()[i * 5 + j];
                CHECK(pv >= 0.0f);
                row += pv;
            }
            CHECK(row == doctest::Approx(1.0f).epsilon(1e-5));
        }
    }
}

TEST_CASE("softmax_cross_entropy values and gradient") {
    auto uniform = Tensor<float>::zeros({1, 4});
    CHECK(softmax_cross_entropy(uniform, {2}).item() == doctest::Approx(std::log(4.0f)));

    Tensor<float> peaked({1, 3}, {0, 1000, 0});
    CHECK(softmax_cross_entropy(peaked, {1}).item() == doctest::Approx(0.0f).epsilon(1e-6));

    Rng rng(29);
    auto logits = random_tensor<double>({5, 3}, rng, -2.0, 2.0);
    std::vector<int64_t> labels{0, 2, 1, 1, 0};
    auto fn = [&]() { return softmax_cross_entropy(logits, labels); };
    CHECK(grad_check<double>(fn, logits) < 1e-6);

    auto fn_sum = [&]() { return softmax_cross_entropy(logits, labels, Reduction::Sum); };
    CHECK(grad_check<double>(fn_sum, logits) < 1e-6);

    CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 1, 2, 3, 0}), ValueError);
}

TEST_CASE("cosine similarity") {
    Tensor<float> a({2}, {1, 0});
    Tensor<float> b({2}, {0, 1});
    CHECK(cosine_similarity(a, b).item() == doctest::Approx(0.0f));
    CHECK(cosine_similarity(a, a).item() == doctest::Approx(1.0f));

    Tensor<float> c({2}, {1, 1});
    CHECK(cosine_similarity(c, a).item() == doctest::Approx(1.0f / std::sqrt(2.0f)));

    Tensor<float> z = Tensor<float>::zeros({2});
    CHECK(std::isfinite(cosine_similarity(z, a).item()));

    Rng rng(31);
    auto u = random_tensor<double>({6}, rng);
    auto v = random_tensor<double>({6}, rng);
    auto fn = [&]() { return cosine_similarity(u, v); };
    CHECK(grad_check<double>(fn, {u, v}) < 1e-6);
}

TEST_CASE("backward fundamentals") {
    SUBCASE("sum gradient is ones") {
        Tensor<float> x({3}, {5, 6, 7});
        x.set_requires_grad(true);
        x.zero_grad();
        Graph<float> tape;
        tape.backward(sum(x));
        CHECK(x.grad() == std::vector<float>{1, 1, 1});
    }
    SUBCASE("constant loss leaves grads zero") {
        Tensor<float> x({3}, {5, 6, 7});
        x.set_requires_grad(true);
        x.zero_grad();
        Graph<float> tape;
        auto y = mul(x, x); // dead branch: never feeds the loss
        tape.backward(Tensor<float>::scalar(3.0f));
        CHECK(x.grad() == std::vector<float>{0, 0, 0});
    }
    SUBCASE("non-scalar loss rejected") {
        Tensor<float> x({2}, {1, 2});
        Graph<float> tape;
        CHECK_THROWS_AS(tape.backward(x), ShapeError);
    }
    SUBCASE("two consumers accumulate") {
        Tensor<float> x({2}, {2, 3});
        x.set_requires_grad(true);
        x.zero_grad();
        Graph<float> tape;
        auto y = add(sum(mul(x, x)), sum(scale(x, 10.0f)));
        tape.backward(y);
        CHECK(x.grad()[0] == doctest::Approx(2 * 2 + 10));
        CHECK(x.grad()[1] == doctest::Approx(2 * 3 + 10));
    }
}

TEST_CASE("grad_check harness sanity") {
    Tensor<double> x({1}, {3.0});
    auto fsq = [&]() { return mul(x, x); };
    CHECK(grad_check<double>(fsq, x) < 1e-9);

    // analytic subgradient of the L1 norm away from kinks is sign(x)
    Tensor<double> y({3}, {0.5, -1.25, 2.0});
    y.set_requires_grad(true);
    y.zero_grad();
    {
        Graph<double> tape;
        tape.backward(l1_norm(y));
    }
    CHECK(y.grad() == std::vector<double>{1, -1, 1});
    auto fl1 = [&]() { return l1_norm(y); };
    CHECK(grad_check<double>(fl1, y) < 1e-6);
}

TEST_CASE("every elementwise op passes gradient checks on random instances") {
    Rng rng(41);
    for (int it = 0; it < 10; ++it) {
        auto x = random_tensor<double>({2, 3}, rng, -2.0, 2.0);
        auto pos = random_tensor<double>({2, 3}, rng, 0.5, 3.0);
        auto b = random_tensor<double>({3}, rng, 0.5, 1.5);

        CHECK(grad_check<double>([&] { return sum(neg(x)); }, x) < 1e-6);
        CHECK(grad_check<double>([&] { return sum(exp(x)); }, x) < 1e-6);
        CHECK(grad_check<double>([&] { return sum(log(pos)); }, pos) < 1e-6);
        CHECK(grad_check<double>([&] { return sum(abs(x)); }, x) < 1e-5);
        CHECK(grad_check<double>([&] { return sum(relu(x)); }, x) < 1e-5);
        CHECK(grad_check<double>([&] { return sum(tanh(x)); }, x) < 1e-6);
        CHECK(grad_check<double>([&] { return sum(sigmoid(x)); }, x) < 1e-6);
        CHECK(grad_check<double>([&] { return sum(sqrt(pos)); }, pos) < 1e-6);
        CHECK(grad_check<double>([&] { return sum(clamp(x, -0.75, 0.75)); }, x, 1e-6) < 1e-4);
        CHECK(grad_check<double>([&] { return sum(mul(add(x, b), sub(x, b))); }, {x, b}) < 1e-6);
        CHECK(grad_check<double>([&] { return mean(div(x, pos)); }, {x, pos}) < 1e-6);
        CHECK(grad_check<double>([&] { return sum(mul(reshape(x, {3, 2}), reshape(x, {3, 2}))); },
                                 x) < 1e-6);
        CHECK(grad_check<double>([&] { return sum(gather_rows(x, {1, 1, 0})); }, x) < 1e-6);
        CHECK(grad_check<double>([&] { return sum(gather_flat(x, {0, 5, 5})); }, x) < 1e-6);
        CHECK(grad_check<double>([&] { return sum(mul(transpose(x), transpose(x))); }, x) < 1e-6);
        CHECK(grad_check<double>(
                  [&] { return sum(mul(concat_cols(x, pos), concat_cols(pos, x))); }, {x, pos}) <
              1e-6);
        CHECK(grad_check<double>([&] { return sum(mul(softmax(x), x)); }, x) < 1e-6);
        CHECK(grad_check<double>([&] { return l2_norm(x); }, x) < 1e-6);
        CHECK(grad_check<double>([&] { return sum(l1_norm(x, 1, true)); }, x) < 1e-5);
        CHECK(grad_check<double>([&] { return sum(mean(x, 0, false)); }, x) < 1e-6);
    }
}

TEST_CASE("same graph evaluated twice is bit-identical") {
    Rng rng(51);
    auto x = random_tensor<float>({4, 4}, rng);
    auto w = random_tensor<float>({4, 4}, rng);
    auto run = [&]() {
        auto h = relu(matmul(x, w));
        return softmax(add(h, x));
    };
    auto r1 = run();
    auto r2 = run();
    CHECK(r1.values() == r2.values());
}

TEST_CASE("no recording happens without an active graph") {
    Tensor<float> x({2}, {1, 2});
    x.set_requires_grad(true);
    auto y = mul(x, x);
    CHECK_FALSE(y.requires_grad());

    Graph<float> tape;
    auto z = mul(x, x);
    CHECK(z.requires_grad());
    CHECK(tape.size() == 1);
    {
        NoGradScope<float> off;
        auto q = mul(x, x);
        CHECK_FALSE(q.requires_grad());
    }
    CHECK(tape.size() == 1);
}
