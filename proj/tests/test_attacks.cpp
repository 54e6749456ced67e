#include "doctest.h"

#include <cmath>

#include "keyperm/attacks.hpp"
#include "keyperm/error.hpp"
#include "support.hpp"

using namespace keyperm;
using keyperm::testing::random_tensor;
using keyperm::testing::rel_error;

namespace {

// logits = W x + b on a 1x1x2 "image"
Network linear_2d(std::array<double, 4> w, std::array<double, 2> b) {
    Layer d = Layer::dense(2, 2);
    d.params.weights = Tensor(Shape{2, 2}, std::vector<double>(w.begin(), w.end()));
    d.params.bias = Tensor(Shape{2}, std::vector<double>(b.begin(), b.end()));
    return Network(Arch::custom, {1, 1, 2}, 2, {Layer::flatten(), d});
}

Tensor point(double a, double b) { return Tensor(Shape{1, 1, 2}, std::vector<double>{a, b}); }

AttackSpec l2_spec() {
    AttackSpec s = AttackSpec::cw_default(Norm::l2);
    s.mode = TargetMode::targeted;
    return s;
}

void check_norms_consistent(const Tensor& x, const AdversarialResult& r) {
    Tensor d(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = r.adversarial_input[i] - x[i];
    CHECK(std::abs(r.distortion_norms.l0 - lp_norm(d, Norm::l0)) <= 1e-9);
    CHECK(std::abs(r.distortion_norms.l2 - lp_norm(d, Norm::l2)) <= 1e-9);
    CHECK(std::abs(r.distortion_norms.linf - lp_norm(d, Norm::linf)) <= 1e-9);
}

}  // namespace

TEST_CASE("lp norms") {
    CHECK(lp_norm(Tensor::vector({3, 4}), Norm::l2) == 5.0);
    CHECK(lp_norm(Tensor::vector({0, -2, 0, 1}), Norm::l0) == 2.0);
    CHECK(lp_norm(Tensor::vector({0.1, -0.7}), Norm::linf) == 0.7);
}

TEST_CASE("cw objective f") {
    CHECK(cw_objective_f(std::vector<double>{1, 3, 2}, 0, 0.0) == 2.0);
    CHECK(cw_objective_f(std::vector<double>{5, 1, 1}, 0, 0.5) == -0.5);
    CHECK_THROWS_AS(cw_objective_f(std::vector<double>{1, 2}, 2, 0.0), ConfigError);

    for (std::uint64_t s = 0; s < 200; ++s) {
        const Tensor z = random_tensor({6}, s, -3.0, 3.0);
        const double kappa = (s % 4) * 0.5;
        for (std::size_t t = 0; t < 6; ++t) {
            double best_other = -1e300, margin = 1e300;
            for (std::size_t j = 0; j < 6; ++j)
                if (j != t) {
                    best_other = std::max(best_other, z[j]);
                    margin = std::min(margin, z[t] - z[j]);
                }
            const double f = cw_objective_f(z.values(), t, kappa);
            CHECK(f == std::max(best_other - z[t], -kappa));
            CHECK((f <= 0.0) == (margin >= 0.0));
            CHECK((f == -kappa) == (margin >= kappa));
        }
    }
}

TEST_CASE("input gradients match finite differences") {
    const Network net = build_network(Arch::cw_small, 31);
    const Tensor x = random_tensor({1, 28, 28}, 32, 0.0, 1.0);
    Rng pick(33);
    for (const Objective& obj : {Objective{CrossEntropyObjective{3}}, Objective{CwObjective{5, 0.0}}}) {
        const GradientResult g = objective_gradient(net, x, obj);
        CHECK(g.gradient.shape() == x.shape());
        for (int k = 0; k < 20; ++k) {
            const std::size_t i = pick.below(x.size());
            const double h = 1e-5;
            Tensor xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            const double fd =
                (objective_gradient(net, xp, obj).value - objective_gradient(net, xm, obj).value) / (2 * h);
            CHECK(rel_error(g.gradient[i], fd, 1e-7) <= 1e-4);
        }
    }
}

TEST_CASE("saturated cw objective has zero gradient") {
    const Network net = linear_2d({5, 0, 0, 0}, {0, 0});
    const GradientResult g = objective_gradient(net, point(0.9, 0.5), CwObjective{0, 0.5});
    CHECK(g.value == -0.5);
    for (double v : g.gradient.values()) CHECK(v == 0.0);
}

TEST_CASE("cross-entropy gradient through an identity network is softmax minus onehot") {
    const Network id(Arch::custom, {1, 1, 4}, 4, {Layer::flatten()});
    const Tensor z(Shape{1, 1, 4}, std::vector<double>{0.2, -0.4, 1.5, 0.0});
    const Tensor g = input_gradient(id, z, CrossEntropyObjective{1});
    const auto p = softmax(z.values());
    for (std::size_t i = 0; i < 4; ++i) CHECK(g[i] == doctest::Approx(p[i] - (i == 1 ? 1.0 : 0.0)).epsilon(1e-14));
}

TEST_CASE("fgsm with zero budget is the identity") {
    const Network net = build_network(Arch::cw_small, 40);
    const Tensor x = random_tensor({1, 28, 28}, 41, 0.0, 1.0);
    AttackSpec spec = AttackSpec::fgsm_default();
    spec.epsilon = 0.0;
    const std::size_t pred = decode(net, x);
    const AdversarialResult same = fgsm(net, x, pred, spec);
    CHECK(same.adversarial_input == x);
    CHECK_FALSE(same.success);
    CHECK(fgsm(net, x, (pred + 1) % 10, spec).success);
}

TEST_CASE("fgsm direction follows the finite-difference gradient sign") {
    // 2-pixel softmax model with hand-set weights
    const Network net = linear_2d({1.5, -2.0, -0.5, 1.0}, {0.1, -0.1});
    const Tensor x = point(0.4, 0.6);
    AttackSpec spec = AttackSpec::fgsm_default();
    spec.epsilon = 0.1;
    const double h = 1e-6;
    for (std::size_t label : {0u, 1u}) {
        const AdversarialResult r = fgsm(net, x, label, spec);
        for (std::size_t i = 0; i < 2; ++i) {
            Tensor xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            const double fd = (cross_entropy_loss(encode(net, xp).logits.values(), label) -
                               cross_entropy_loss(encode(net, xm).logits.values(), label)) /
                              (2 * h);
            CHECK(r.adversarial_input[i] - x[i] == doctest::Approx(fd > 0 ? 0.1 : -0.1));
        }
    }
    spec.mode = TargetMode::targeted;
    const AdversarialResult t = fgsm(net, x, 0, spec, 1);
    AttackSpec untargeted = AttackSpec::fgsm_default();
    untargeted.epsilon = 0.1;
    const AdversarialResult u = fgsm(net, x, 1, untargeted);
    for (std::size_t i = 0; i < 2; ++i)
        CHECK(t.adversarial_input[i] - x[i] == doctest::Approx(x[i] - u.adversarial_input[i]));
    CHECK_THROWS_AS(fgsm(net, x, 0, spec), ConfigError);
}

TEST_CASE("fgsm output respects budget and box exactly") {
    const Network net = build_network(Arch::cw_small, 50);
    AttackSpec spec = AttackSpec::fgsm_default();
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Tensor x = random_tensor({1, 28, 28}, 100 + s, 0.0, 1.0);
        const AdversarialResult r = fgsm(net, x, s % 10, spec);
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(std::abs(r.adversarial_input[i] - x[i]) <= spec.epsilon);
            CHECK((r.adversarial_input[i] >= 0.0 && r.adversarial_input[i] <= 1.0));
        }
        check_norms_consistent(x, r);
    }
}

TEST_CASE("cw returns zero distortion when the target already wins") {
    const Network net = linear_2d({5, 0, 0, 0}, {0, 0});
    const Tensor x = point(0.9, 0.5);
    for (Norm n : {Norm::l2, Norm::l0, Norm::linf}) {
        AttackSpec s = AttackSpec::cw_default(n);
        s.kappa = 1.0;
        const AdversarialResult r = cw_attack(net, x, 0, s);
        CHECK(r.success);
        CHECK(r.adversarial_input == x);
        CHECK(r.distortion_norms.l2 == 0.0);
    }
}

TEST_CASE("cw l2 finds the nearest boundary point of a linear model") {
    // boundary: x0 - x1 = 0.1 ; from (0.3, 0.6) the distance is 0.4 / sqrt(2)
    const Network net = linear_2d({1, -1, 0, 0}, {-0.1, 0});
    const Tensor x = point(0.3, 0.6);
    REQUIRE(decode(net, x) == 1);
    const AdversarialResult r = cw_attack(net, x, 0, l2_spec());
    REQUIRE(r.success);
    CHECK(decode(net, r.adversarial_input) == 0);
    const double d = 0.4 / std::sqrt(2.0);
    CHECK(r.distortion_norms.l2 >= d * (1 - 1e-9));
    CHECK(r.distortion_norms.l2 <= d * 1.05);
    check_norms_consistent(x, r);
    CHECK(r.c_trace.size() == 9);
}

TEST_CASE("c search is monotone on a fixed instance") {
    const Network net = linear_2d({1, -1, 0, 0}, {-0.1, 0});
    const Tensor x = point(0.3, 0.6);
    bool seen_success = false;
    for (double c : {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0}) {
        AttackSpec s = l2_spec();
        s.c_search = {c, c, c, 1};
        s.abort_early = false;
        const bool ok = cw_attack(net, x, 0, s).success;
        if (seen_success) CHECK(ok);
        seen_success = seen_success || ok;
    }
    CHECK(seen_success);
}

TEST_CASE("cw l0 and linf succeed and are verified") {
    const Network net = linear_2d({1, -1, 0, 0}, {-0.1, 0});
    const Tensor x = point(0.3, 0.6);
    for (Norm n : {Norm::l0, Norm::linf}) {
        AttackSpec s = AttackSpec::cw_default(n);
        s.iterations = 300;
        s.max_rounds = 20;
        const AdversarialResult r = cw_attack(net, x, 0, s);
        CHECK(r.success);
        CHECK(decode(net, r.adversarial_input) == 0);
        for (double v : r.adversarial_input.values()) CHECK((v >= 0.0 && v <= 1.0));
        check_norms_consistent(x, r);
    }
    // the linf optimum moves both pixels by 0.2
    AttackSpec s = AttackSpec::cw_default(Norm::linf);
    s.iterations = 300;
    s.max_rounds = 40;
    const AdversarialResult r = cw_attack(net, x, 0, s);
    CHECK(r.distortion_norms.linf <= 0.2 * 1.15);
}

TEST_CASE("non-targeted cw keeps the smallest successful target") {
    const Network net = build_network(Arch::cw_small, 60);
    const Tensor x = random_tensor({1, 28, 28}, 61, 0.0, 1.0);
    AttackSpec s = l2_spec();
    s.iterations = 40;
    s.c_search = {1.0, 1e-6, 1e10, 2};
    const std::size_t label = decode(net, x);
    const AdversarialResult best = cw_attack_nontargeted(net, x, label, s);
    REQUIRE(best.success);
    CHECK(best.achieved_class != label);
    for (std::size_t t = 0; t < 10; ++t) {
        if (t == label) continue;
        const AdversarialResult r = cw_attack(net, x, t, s);
        if (r.success) CHECK(best.distortion_norms.l2 <= r.distortion_norms.l2);
    }
}

TEST_CASE("target selection") {
    CHECK(choose_target(TargetRule::next, 9, 10, 0, 0) == 0);
    for (std::uint64_t i = 0; i < 500; ++i) {
        const std::size_t label = i % 10;
        const std::size_t t = choose_target(TargetRule::random, label, 10, 7, i);
        CHECK(t != label);
        CHECK(t < 10);
        CHECK(t == choose_target(TargetRule::random, label, 10, 7, i));
    }
}

TEST_CASE("attack spec echo round-trips and validation rejects bad specs") {
    AttackSpec s = AttackSpec::cw_default(Norm::linf);
    s.kappa = 0.25;
    s.max_rounds = 3;
    const AttackSpec back = AttackSpec::parse_echo(s.echo());
    CHECK(back.echo() == s.echo());
    CHECK_THROWS_AS(AttackSpec::parse_echo("family=cw"), ConfigError);
    AttackSpec bad = AttackSpec::fgsm_default();
    bad.epsilon = -0.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    AttackSpec nos = AttackSpec::cw_default(Norm::l2);
    nos.c_search.steps = 0;
    CHECK_THROWS_AS(nos.validate(), ConfigError);
    CHECK_THROWS_AS(parse_norm("l3"), ConfigError);
}

TEST_CASE("adversarial batches round-trip losslessly") {
    const Network net = build_network(Arch::cw_small, 70);
    LabeledDataset ds;
    ds.images = random_tensor({6, 1, 28, 28}, 71, 0.0, 1.0);
    ds.labels = {0, 1, 2, 3, 4, 5};
    AttackSpec s = AttackSpec::fgsm_default();
    s.mode = TargetMode::targeted;
    s.target_rule = TargetRule::random;
    const AdversarialBatch b = run_attack_batch(net, ds, s, 5, 9);
    REQUIRE(b.records.size() == 5);
    const Bytes bytes = save_adversarial_batch(b);
    const AdversarialBatch back = load_adversarial_batch(bytes);
    CHECK(save_adversarial_batch(back) == bytes);
    CHECK(back.stacked() == b.stacked());
    CHECK(back.spec.echo() == s.echo());
    for (const auto& r : back.records) CHECK(r.target >= 0);

    Bytes cut(bytes.begin(), bytes.end() - 8);
    CHECK_THROWS_AS(load_adversarial_batch(cut), FormatError);
    Bytes magic = bytes;
    magic[1] = 'X';
    CHECK_THROWS_AS(load_adversarial_batch(magic), FormatError);
    CHECK_THROWS_AS(run_attack_batch(net, ds, s, 7, 9), ConfigError);
}
