#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "keyperm/data.hpp"
#include "keyperm/defence.hpp"
#include "keyperm/error.hpp"
#include "keyperm/hash.hpp"
#include "support.hpp"

using namespace keyperm;
using keyperm::testing::fixture;
using keyperm::testing::random_tensor;
using keyperm::testing::scratch_dir;

TEST_CASE("keygen(42, 784) matches the reference permutation") {
    const SecretKey k = keygen(42, 784);
    const std::vector<std::size_t> head{56, 546, 274, 294, 783, 772, 368, 284, 253, 464, 678, 313};
    CHECK(std::equal(head.begin(), head.end(), k.permutation().begin()));
    std::string joined;
    for (std::size_t i = 0; i < k.dim(); ++i) joined += (i ? "," : "") + std::to_string(k.permutation()[i]);
    CHECK(sha256_hex(joined) == "f198ccbeb393aaf4adcd31604e65e8849652453734a7641ad32dac5d10f575a7");
}

TEST_CASE("stable argsort keeps tied indices in order") {
    CHECK(stable_argsort(std::vector<double>{0.3, -1.0, 2.0}) == std::vector<std::size_t>{1, 0, 2});
    CHECK(stable_argsort(std::vector<double>{1.0, 0.0, 1.0, 0.0}) == std::vector<std::size_t>{1, 3, 0, 2});
    const SecretKey k = SecretKey::from_vector({0.5, 0.5, 0.5});
    CHECK(std::vector<std::size_t>(k.permutation().begin(), k.permutation().end()) ==
          std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("keygen validates dimension and is seed sensitive") {
    CHECK_THROWS_AS(keygen(1, 0), ConfigError);
    CHECK(keygen(7, 64) == keygen(7, 64));
    CHECK(keygen(7, 64).permutation()[0] == keygen(7, 64).permutation()[0]);
    const auto a = keygen(1, 64), b = keygen(2, 64);
    CHECK(!std::equal(a.permutation().begin(), a.permutation().end(), b.permutation().begin()));
}

TEST_CASE("transform round-trips, preserves values, and needs the right key") {
    const SecretKey k = keygen(3, 784), wrong = keygen(4, 784);
    const Tensor x = random_tensor({1, 28, 28}, 5, 0.0, 1.0);
    const Tensor y = apply_transform(k, x);
    CHECK(y.shape() == x.shape());
    CHECK(invert_transform(k, y) == x);
    CHECK(apply_transform(k, invert_transform(k, x)) == x);
    CHECK(invert_transform(wrong, y) != x);
    for (std::size_t i = 0; i < 784; ++i) CHECK(y[i] == x[k.permutation()[i]]);

    const Tensor c(Shape{1, 28, 28}, 0.25);
    CHECK(invert_transform(k, c) == c);

    const Tensor batch = random_tensor({3, 1, 28, 28}, 6);
    const Tensor yb = apply_transform(k, batch);
    for (std::size_t n = 0; n < 3; ++n)
        CHECK(yb.rows(n, 1).reshaped({1, 28, 28}) == apply_transform(k, batch.rows(n, 1).reshaped({1, 28, 28})));

    CHECK_THROWS_AS(apply_transform(keygen(1, 100), x), ConfigError);
}

TEST_CASE("key bytes are the documented big-endian layout") {
    const Bytes b = save_key(keygen(42, 784));
    const Bytes expect{'P', 'K', 'E', 'Y', 0, 0, 0, 1, 0, 0, 3, 0x10, 0, 0, 0, 0, 0, 0, 0, 0x2a};
    CHECK(b == expect);
    CHECK(load_key(b) == keygen(42, 784));
    Bytes bad = b;
    bad[7] = 2;
    CHECK_THROWS_AS(load_key(bad), FormatError);
    Bytes zero = b;
    zero[10] = zero[11] = 0;
    CHECK_THROWS_AS(load_key(zero), FormatError);
    CHECK_THROWS_AS(load_key(Bytes(b.begin(), b.begin() + 12)), FormatError);
}

TEST_CASE("key files refuse overwrite and are owner-only") {
    const auto dir = scratch_dir("keys");
    const auto p = dir / "k.pkey";
    save_key_file(keygen(1, 784), p);
    CHECK_THROWS_AS(save_key_file(keygen(2, 784), p), ConfigError);
    CHECK(load_key_file(p) == keygen(1, 784));
    save_key_file(keygen(2, 784), p, true);
    CHECK(load_key_file(p) == keygen(2, 784));
    const auto perms = std::filesystem::status(p).permissions();
    CHECK((perms & (std::filesystem::perms::group_all | std::filesystem::perms::others_all)) ==
          std::filesystem::perms::none);
}

TEST_CASE("attacker scope blocks key access") {
    const auto dir = scratch_dir("scope");
    save_key_file(keygen(1, 784), dir / "k.pkey");
    const DefendedClassifier dc(keygen(1, 784), build_network(Arch::cw_small, 1));
    CHECK_FALSE(AttackerScope::active());
    {
        AttackerScope scope("test attacker");
        CHECK(AttackerScope::active());
        CHECK_THROWS_AS(load_key_file(dir / "k.pkey"), ProtocolViolation);
        CHECK_THROWS_AS(dc.key(), ProtocolViolation);
        {
            AttackerScope inner("nested");
            CHECK(AttackerScope::current_label() == "nested");
        }
        CHECK(AttackerScope::current_label() == "test attacker");
    }
    CHECK_FALSE(AttackerScope::active());
    CHECK_NOTHROW(dc.key());
}

TEST_CASE("defended classification is the literal composition") {
    const SecretKey k = keygen(8, 784);
    const Network net = build_network(Arch::cw_small, 2);
    const DefendedClassifier dc(k, net);
    const Tensor xs = random_tensor({4, 1, 28, 28}, 9, 0.0, 1.0);
    const auto batch = dc.classify_batch(xs);
    for (std::size_t i = 0; i < 4; ++i) {
        const Tensor x = xs.rows(i, 1).reshaped({1, 28, 28});
        CHECK(defended_classify(dc, x) == decode(net, apply_transform(k, x)));
        CHECK(batch[i] == dc.classify(x));
        CHECK(dc.classify(x) == dc.classify(x));
    }
    CHECK_THROWS_AS(DefendedClassifier(keygen(1, 100), net), ConfigError);
}

TEST_CASE("entropy report") {
    const SecretKey k = keygen(1, 784);
    // 784 * ln(2 pi e) / 2 at 50 digits
    const EntropyReport constant = key_entropy_report(k, Tensor(Shape{10, 1, 28, 28}, 0.5));
    CHECK(constant.key_entropy_nats == doctest::Approx(1112.4478100324634296).epsilon(1e-14));
    CHECK(constant.data_entropy_nats == 0.0);
    CHECK_FALSE(constant.violation);

    // three samples with distinct bytes at every pixel: ln 3 per pixel
    const auto tiny = load_idx(fixture("tiny-images-idx3-ubyte"), fixture("tiny-labels-idx1-ubyte"));
    const EntropyReport r = key_entropy_report(k, tiny.images);
    CHECK(r.data_entropy_nats == doctest::Approx(784.0 * std::log(3.0)).epsilon(1e-12));
    CHECK_FALSE(r.violation);
    CHECK(r.to_text().find("violation                no") != std::string::npos);

    // white noise carries more than ln(2 pi e) / 2 nats per pixel
    const EntropyReport noisy = key_entropy_report(k, random_tensor({2000, 1, 28, 28}, 3, 0.0, 1.0));
    CHECK(noisy.data_entropy_nats > noisy.key_entropy_nats);
    CHECK(noisy.violation);
    CHECK_THROWS_AS(key_entropy_report(k, tiny.images, 1), ConfigError);
}
