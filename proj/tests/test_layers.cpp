#include "doctest.h"

#include <cmath>
#include <numeric>

#include "keyperm/error.hpp"
#include "keyperm/layers.hpp"
#include "support.hpp"

using namespace keyperm;
using keyperm::testing::random_tensor;
using keyperm::testing::rel_error;

namespace {

// L = sum(r * layer(x)); with a fixed dropout seed the mask is identical
// across evaluations.
double probe_loss(const Layer& layer, const Tensor& x, const Tensor& r, Mode mode) {
    Rng rng(77);
    auto [y, trace] = layer_forward(layer, x, mode, &rng);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
    return s;
}

double worst_gradient_error(Layer layer, const Tensor& x, Mode mode = Mode::infer) {
    Rng rng(77);
    auto [y, trace] = layer_forward(layer, x, mode, &rng);
    const Tensor r = random_tensor(y.shape(), 4242);
    ParamGrad pg;
    const Tensor gx = layer_backward(layer, trace, r, &pg);
    const double h = 1e-5;
    double worst = 0.0;
    Tensor xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = xp[i];
        xp[i] = keep + h;
        const double up = probe_loss(layer, xp, r, mode);
        xp[i] = keep - h;
        const double down = probe_loss(layer, xp, r, mode);
        xp[i] = keep;
        worst = std::max(worst, rel_error(gx[i], (up - down) / (2 * h)));
    }
    if (layer.has_params()) {
        for (int which = 0; which < 2; ++which) {
            Tensor& p = which == 0 ? layer.params.weights : layer.params.bias;
            const Tensor& g = which == 0 ? pg.weights : pg.bias;
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double keep = p[i];
                p[i] = keep + h;
                const double up = probe_loss(layer, x, r, mode);
                p[i] = keep - h;
                const double down = probe_loss(layer, x, r, mode);
                p[i] = keep;
                worst = std::max(worst, rel_error(g[i], (up - down) / (2 * h)));
            }
        }
    }
    return worst;
}

Layer with_random_params(Layer l, std::uint64_t seed) {
    l.params.weights = random_tensor(l.params.weights.shape(), seed);
    l.params.bias = random_tensor(l.params.bias.shape(), seed + 1);
    return l;
}

}  // namespace

TEST_CASE("analytic gradients match central differences for every layer kind") {
    const Tensor img = random_tensor({2, 3, 7, 6}, 1);
    CHECK(worst_gradient_error(with_random_params(Layer::conv2d(3, 4, 3, 2), 10), img) <= 1e-6);
    CHECK(worst_gradient_error(with_random_params(Layer::conv2d(3, 2, 2, 2, 2, 1), 11), img) <= 1e-6);
    CHECK(worst_gradient_error(with_random_params(Layer::dense(5, 3), 12), random_tensor({4, 5}, 2)) <= 1e-6);
    CHECK(worst_gradient_error(Layer::relu(), img) <= 1e-6);
    CHECK(worst_gradient_error(Layer::maxpool(2), random_tensor({2, 3, 6, 6}, 3)) <= 1e-6);
    CHECK(worst_gradient_error(Layer::dropout(0.5), img, Mode::train) <= 1e-6);
    CHECK(worst_gradient_error(Layer::dropout(0.5), img, Mode::infer) <= 1e-6);
    CHECK(worst_gradient_error(Layer::softmax(), random_tensor({3, 5}, 4)) <= 1e-6);
    CHECK(worst_gradient_error(Layer::flatten(), img) <= 1e-6);
}

TEST_CASE("relu and maxpool route gradient only to selected entries") {
    Tensor x(Shape{1, 1, 2, 2}, std::vector<double>{-1.0, 2.0, 0.5, 3.0});
    auto [y, tr] = layer_forward(Layer::relu(), x, Mode::infer);
    Tensor g = layer_backward(Layer::relu(), tr, Tensor(x.shape(), 1.0));
    CHECK(g.to_vector() == std::vector<double>{0, 1, 1, 1});

    auto [p, tp] = layer_forward(Layer::maxpool(2), x, Mode::infer);
    CHECK(p.shape() == Shape{1, 1, 1, 1});
    CHECK(p[0] == 3.0);
    Tensor gp = layer_backward(Layer::maxpool(2), tp, Tensor(p.shape(), 5.0));
    CHECK(gp.to_vector() == std::vector<double>{0, 0, 0, 5});
}

TEST_CASE("a trace can be consumed once") {
    auto [y, tr] = layer_forward(Layer::relu(), random_tensor({1, 4}, 5), Mode::infer);
    layer_backward(Layer::relu(), tr, Tensor(y.shape(), 1.0));
    CHECK_THROWS_AS(layer_backward(Layer::relu(), tr, Tensor(y.shape(), 1.0)), InvariantError);
}

TEST_CASE("conv2d matches a direct loop and checks channels") {
    Layer l = with_random_params(Layer::conv2d(2, 3, 3, 3), 20);
    const Tensor x = random_tensor({2, 5, 5}, 21);
    const Tensor y = conv2d_forward(x, l.params, 1, 0);
    REQUIRE(y.shape() == Shape{3, 3, 3});
    for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                double acc = l.params.bias[o];
                for (std::size_t c = 0; c < 2; ++c)
                    for (std::size_t u = 0; u < 3; ++u)
                        for (std::size_t v = 0; v < 3; ++v)
                            acc += l.params.weights[((o * 2 + c) * 3 + u) * 3 + v] * x[(c * 5 + i + u) * 5 + j + v];
                CHECK(std::abs(y[(o * 3 + i) * 3 + j] - acc) <= 1e-12);
            }
    CHECK_THROWS_AS(conv2d_forward(random_tensor({3, 5, 5}, 22), l.params, 1, 0), ConfigError);
}

TEST_CASE("softmax sums to one and rejects empty input") {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const Tensor z = random_tensor({10}, s, -50.0, 50.0);
        const auto p = softmax(z.values());
        CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-12);
    }
    CHECK_THROWS_AS(softmax(std::vector<double>{}), ConfigError);
}

TEST_CASE("cross entropy against high-precision reference") {
    CHECK(cross_entropy_loss(std::vector<double>{0, 0}, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    const double sat = cross_entropy_loss(std::vector<double>{1000, 0}, 0);
    CHECK(std::isfinite(sat));
    CHECK(sat <= 1e-300);
    // mpmath at 50 digits, tests/oracles/gen_oracles.py
    const std::vector<double> z{0.3, -1.2, 2.5, 0.0, 1.1};
    const double expect[5] = {2.5813149240988954925, 4.081314924098895437, 0.38131492409889548142,
                              2.8813149240988954814, 1.7813149240988953926};
    for (std::size_t c = 0; c < 5; ++c) CHECK(cross_entropy_loss(z, c) == doctest::Approx(expect[c]).epsilon(1e-14));
    const auto g = cross_entropy_grad(z, 2);
    CHECK(std::abs(std::accumulate(g.begin(), g.end(), 0.0)) <= 1e-15);
}

TEST_CASE("dropout is deterministic for a seed and identity at inference") {
    const Tensor x = random_tensor({3, 8}, 30);
    Rng a(5), b(5);
    auto [ya, ta] = layer_forward(Layer::dropout(0.5), x, Mode::train, &a);
    auto [yb, tb] = layer_forward(Layer::dropout(0.5), x, Mode::train, &b);
    CHECK(ya == yb);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK((ya[i] == 0.0 || ya[i] == 2.0 * x[i]));
    auto [yi, ti] = layer_forward(Layer::dropout(0.5), x, Mode::infer);
    CHECK(yi == x);
}
