#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "lcsurv/checkpoint.hpp"
#include "lcsurv/error.hpp"
#include "lcsurv/io.hpp"

using namespace lcsurv;

namespace {

Tensor vec(std::initializer_list<double> v) { return Tensor::from(v); }

void check_close(const Tensor& a, const Tensor& b, double tol = 1e-12) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(tol));
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(shape_size(t.shape()) == t.size());
    CHECK(t.reshaped({3, 2}).dim(0) == 3);
    CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
    CHECK(t.slice(1).shape() == Shape{3});
    Tensor f({2}, 0.1, Dtype::f32);
    CHECK(f[0] == static_cast<double>(0.1f));
}

TEST_CASE("dense forward examples") {
    Dense d(2, 2);
    d.bias().value = vec({1, 2});
    check_close(d.forward(vec({7, -3})), vec({1, 2}));

    d.weight().value = Tensor({2, 2}, {1, 0, 0, 1});
    d.bias().value = vec({0, 0});
    check_close(d.forward(vec({3, -1})), vec({3, -1}));

    d.weight().value = Tensor({2, 2}, {1, 2, 3, 4});
    d.bias().value = vec({0.5, -0.5});
    check_close(d.forward(vec({1, 1})), vec({3.5, 6.5}));

    CHECK_THROWS_AS(d.forward(vec({1, 2, 3})), DimensionError);
}

TEST_CASE("dense backward examples") {
    Dense fresh(2, 2);
    CHECK_THROWS_AS(fresh.backward(vec({1, 1})), StateError);

    Dense d(2, 2);
    d.weight().value = Tensor({2, 2}, {1, 0, 0, 1});
    d.forward(vec({3, -1}));
    check_close(d.backward(vec({0, 0})), vec({0, 0}));
    CHECK(d.weight().grad == Tensor({2, 2}));
    check_close(d.backward(vec({2, -5})), vec({2, -5}));

    // Gradients accumulate across calls.
    d.params().zero_grad();
    d.forward(vec({1, 2}));
    d.backward(vec({1, 0}));
    d.backward(vec({1, 0}));
    check_close(d.weight().grad, Tensor({2, 2}, {2, 4, 0, 0}));
}

TEST_CASE("conv3d examples") {
    Conv3d id(1, 1, 1);
    id.weight().value.fill(1.0);
    Rng rng(3);
    Tensor x = Tensor::randn({1, 1, 3, 4, 5}, rng);
    check_close(id.forward(x), x);
    check_close(id.backward(x), x);

    Conv3d zero(2, 3, 3);
    zero.bias().value = vec({0.5, -1, 2});
    const Tensor out = zero.forward(Tensor::randn({2, 5, 5, 5}, rng));
    CHECK(out.shape() == Shape{3, 3, 3, 3});
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == zero.bias().value[i / 27]);

    Conv3d avg(1, 1, 3);
    avg.weight().value.fill(1.0 / 27.0);
    const Tensor c = avg.forward(Tensor({1, 1, 5, 5, 5}, 4.0));
    for (double v : c.values()) CHECK(v == doctest::Approx(4.0).epsilon(1e-14));

    Conv3d g(2, 2, 3, 1, 1);
    g.init(rng);
    g.forward(Tensor::randn({2, 4, 4, 4}, rng));
    const Tensor gx = g.backward(Tensor({2, 4, 4, 4}));
    for (double v : gx.values()) CHECK(v == 0.0);
    for (double v : g.weight().grad.values()) CHECK(v == 0.0);

    CHECK_THROWS_AS(Conv3d(1, 1, 5).forward(Tensor({1, 3, 3, 3})), ConfigError);
    CHECK_THROWS_AS(Conv3d(1, 1, 2), ConfigError);
}

TEST_CASE("conv3d with odd kernel, stride 1 and half padding preserves spatial shape") {
    for (std::size_t k : {1, 3, 5, 7}) {
        Conv3d c(1, 2, k, 1, (k - 1) / 2);
        CHECK(c.output_shape({1, 1, 7, 8, 9}) == Shape{1, 2, 7, 8, 9});
    }
}

TEST_CASE("batchnorm examples") {
    BatchNorm3d bn(1, 0.1, 1e-12);
    Tensor x({2, 1, 1, 1, 2}, {-1, 1, -1, 1});
    check_close(bn.forward(x, Mode::train), x, 1e-9);

    bn.gamma().value.fill(0.0);
    bn.beta().value.fill(0.7);
    const Tensor flat = bn.forward(Tensor::from({3, 1, 4, 1}).reshaped({2, 1, 1, 1, 2}), Mode::train);
    for (double v : flat.values()) {
        CHECK(v == doctest::Approx(0.7));
    }
    CHECK_THROWS_AS(bn.forward(Tensor({1, 1, 2, 2, 2}), Mode::train), ConfigError);
    CHECK_NOTHROW(bn.forward(Tensor({1, 1, 2, 2, 2}), Mode::eval));
}

TEST_CASE("relu, dropout and pooling examples") {
    Relu r;
    r.forward(vec({-1, 2}));
    check_close(r.backward(vec({5, 5})), vec({0, 5}));

    Dropout d(0.5);
    Rng rng(1);
    const Tensor x = Tensor::randn({10}, rng);
    check_close(d.forward(x, Mode::eval, rng), x);
    CHECK_THROWS_AS(Dropout(1.0), ConfigError);
    CHECK_THROWS_AS(Dropout(-0.1), ConfigError);

    // Same seed, same mask; survivors are scaled by 1 / (1 - p).
    Rng a(9), b(9);
    const Tensor m1 = d.forward(Tensor({1000}, 1.0), Mode::train, a);
    const Tensor m2 = d.forward(Tensor({1000}, 1.0), Mode::train, b);
    CHECK(m1 == m2);
    for (double v : m1.values()) CHECK((v == 0.0 || v == 2.0));

    GlobalAvgPool3d p;
    const Tensor pooled = p.forward(Tensor({2, 3, 2, 2, 2}, 2.5));
    CHECK(pooled.shape() == Shape{2, 3});
    for (double v : pooled.values()) CHECK(v == 2.5);
}

TEST_CASE("residual block examples") {
    Rng rng(4);
    ResidualBlock block(2, 2, false);
    block.init(rng);
    block.conv1().weight().value.zero();
    block.conv2().weight().value.zero();
    block.conv1().bias().value.zero();
    block.conv2().bias().value.zero();
    const Tensor x = Tensor::randn({1, 2, 3, 3, 3}, rng);
    const Tensor out = block.forward(x, Mode::eval);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(out[i] == doctest::Approx(std::max(0.0, x[i])));

    ResidualBlock down(2, 4, true);
    down.init(rng);
    const Tensor zero_out = down.forward(Tensor({1, 2, 4, 4, 4}), Mode::eval);
    for (double v : zero_out.values()) CHECK(v == 0.0);
    CHECK_THROWS_AS(ResidualBlock(2, 3, false), ConfigError);
}

TEST_CASE("finite-difference gradients of every layer kind") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CAPTURE(seed);
        CHECK(gradcheck::dense_instance(seed) <= 1e-5);
        CHECK(gradcheck::conv3d_instance(seed) <= 1e-5);
        CHECK(gradcheck::batchnorm_instance(seed) <= 1e-5);
        CHECK(gradcheck::relu_instance(seed) <= 1e-5);
        CHECK(gradcheck::dropout_instance(seed) <= 1e-5);
        CHECK(gradcheck::pool_instance(seed) <= 1e-5);
        CHECK(gradcheck::residual_instance(seed) <= 1e-5);
    }
}

TEST_CASE("two-layer composition matches finite differences end to end") {
    Rng rng(11);
    Dense a(4, 5), b(5, 3);
    Relu relu;
    a.init(rng);
    b.init(rng);
    std::vector<Parameter*> params{&a.weight(), &a.bias(), &b.weight(), &b.bias()};
    const double err = gradcheck::check_module(
        [&](const Tensor& x) { return b.forward(relu.forward(a.forward(x))); },
        [&](const Tensor& g) { return a.backward(relu.backward(b.backward(g))); }, params, Tensor::randn({2, 4}, rng), rng);
    CHECK(err <= 1e-5);
}

TEST_CASE("forward passes are deterministic") {
    Rng r1(5), r2(5);
    Conv3d c1(1, 2, 3), c2(1, 2, 3);
    c1.init(r1);
    c2.init(r2);
    const Tensor x = Tensor::randn({1, 1, 4, 4, 4}, r1);
    CHECK(c1.forward(x) == c2.forward(x));
}

TEST_CASE("parameter buffers stay consistent") {
    Dense d(3, 2);
    CHECK_NOTHROW(d.params().check_consistent());
    d.params().weights[0].grad = Tensor({2});
    CHECK_THROWS_AS(d.params().check_consistent(), DimensionError);
}

TEST_CASE("checkpoint byte layout round trips and is order independent") {
    Checkpoint a;
    a.metadata = R"({"k":1})";
    a.tensors["z"] = Tensor::from({1.25, -2});
    a.tensors["a"] = Tensor({2, 2}, 0.5, Dtype::f32);
    const std::string bytes = encode_checkpoint(a);
    CHECK(bytes.substr(0, 7) == "LCSCKPT");
    const Checkpoint b = decode_checkpoint(bytes);
    CHECK(b.metadata == a.metadata);
    CHECK(b.at("z") == a.tensors["z"]);
    CHECK(b.at("a").dtype() == Dtype::f32);
    CHECK(encode_checkpoint(b) == bytes);
    CHECK_THROWS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)));
    CHECK_THROWS(b.at("missing"));
}

TEST_CASE("fnv1a reference values") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
}
