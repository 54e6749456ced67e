#include "doctest.h"

#include "keyperm/data.hpp"
#include "keyperm/error.hpp"
#include "keyperm/model_io.hpp"
#include "keyperm/network.hpp"
#include "keyperm/train.hpp"
#include "support.hpp"

using namespace keyperm;
using keyperm::testing::random_tensor;

namespace {

Network tiny_dense(std::size_t classes, std::uint64_t seed) {
    Network net(Arch::custom, {1, 28, 28}, classes,
                {Layer::flatten(), Layer::dense(784, 16), Layer::relu(), Layer::dense(16, classes)});
    he_init(net, seed);
    return net;
}

}  // namespace

TEST_CASE("reference architectures have the expected parameter counts") {
    // conv 64@8x8, 128@6x6, 128@5x5, dense 12*12*128 -> 10
    CHECK(build_network(Arch::fgsm, 1).parameter_count() == 4160 + 295040 + 409728 + 184330);
    // 32-32-pool-64-64-pool-200-200-10
    CHECK(build_network(Arch::cw_small, 1).parameter_count() == 320 + 9248 + 18496 + 36928 + 205000 + 40200 + 2010);
    const Network big = build_network(Arch::cw_large, 1);
    CHECK(big.classes() == 10);
    CHECK(big.input_shape() == Shape{1, 28, 28});
}

TEST_CASE("layer chain is validated at construction") {
    CHECK_THROWS_AS(Network(Arch::custom, {1, 28, 28}, 10, {Layer::flatten(), Layer::dense(100, 10)}), ConfigError);
    CHECK_THROWS_AS(Network(Arch::custom, {1, 28, 28}, 10, {Layer::flatten(), Layer::dense(784, 9)}), ConfigError);
}

TEST_CASE("decode breaks ties low and ignores monotone logit transforms") {
    CHECK(argmax_low(std::vector<double>(10, 0.1)) == 0);
    std::vector<double> p(10, 0.05);
    p[7] = 0.55;
    CHECK(argmax_low(p) == 7);
    const Network net = build_network(Arch::cw_small, 3);
    const Tensor x = random_tensor({1, 28, 28}, 4, 0.0, 1.0);
    const Encoding e = encode(net, x);
    std::vector<double> shifted(e.logits.values().begin(), e.logits.values().end());
    for (auto& v : shifted) v = 3.0 * v + 7.0;
    CHECK(argmax_low(shifted) == decode(net, x));
    CHECK(argmax_low(e.probabilities.values()) == decode(net, x));
}

TEST_CASE("encode is bitwise repeatable and batch-consistent") {
    const Network net = build_network(Arch::cw_small, 5);
    const Tensor xs = random_tensor({3, 1, 28, 28}, 6, 0.0, 1.0);
    CHECK(encode(net, xs).logits == encode(net, xs).logits);
    const auto labels = decode_batch(net, xs, 2);
    for (std::size_t i = 0; i < 3; ++i) CHECK(labels[i] == decode(net, xs.rows(i, 1).reshaped({1, 28, 28})));
}

TEST_CASE("backward on a consumed pass is rejected") {
    const Network net = build_network(Arch::cw_small, 7);
    ForwardPass pass = forward_traced(net, random_tensor({1, 28, 28}, 8, 0.0, 1.0));
    const Tensor g(pass.logits.shape(), 1.0);
    backward(net, pass, g);
    CHECK_THROWS_AS(backward(net, pass, g), InvariantError);
}

TEST_CASE("separable two-class set is learned by a small dense net") {
    const LabeledDataset ds = synthetic_dataset(11, 200, SyntheticKind::two_gaussians);
    Network net = tiny_dense(2, 12);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 20;
    cfg.seed = 13;
    const TrainResult res = train(net, ds, nullptr, cfg);
    CHECK(evaluate(net, ds).error <= 2.0);

    // training loss trends down: at most one transient rise per 10 epochs
    std::size_t rises = 0;
    for (std::size_t i = 1; i < res.history.size(); ++i)
        rises += res.history[i].train_loss > res.history[i - 1].train_loss ? 1 : 0;
    CHECK(rises <= res.history.size() / 10);
}

TEST_CASE("training is deterministic for a seed") {
    const LabeledDataset ds = synthetic_dataset(21, 120, SyntheticKind::striped_digits);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.seed = 5;
    Network a = build_network(Arch::cw_small, 9), b = build_network(Arch::cw_small, 9);
    const auto ha = train(a, ds, nullptr, cfg);
    const auto hb = train(b, ds, nullptr, cfg);
    CHECK(a == b);
    CHECK(save_model(a) == save_model(b));
    CHECK(format_metrics(ha.history) == format_metrics(hb.history));
}

TEST_CASE("training rejects empty data and bad configs") {
    Network net = tiny_dense(2, 1);
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    LabeledDataset empty;
    CHECK_THROWS(train(net, empty, nullptr, TrainConfig{}));
}

TEST_CASE("model files round-trip bitwise and reject corruption") {
    const Network net = build_network(Arch::cw_small, 17);
    const Bytes bytes = save_model(net);
    const Network back = load_model(bytes);
    CHECK(back == net);
    CHECK(save_model(back) == bytes);

    Bytes bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(load_model(bad), FormatError);

    Bytes version = bytes;
    version[4] = 99;
    CHECK_THROWS_AS(load_model(version), FormatError);

    Bytes truncated(bytes.begin(), bytes.begin() + 1000);
    try {
        load_model(truncated);
        FAIL("truncated model loaded");
    } catch (const FormatError& e) {
        CHECK(e.offset() <= 1000);
        CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }

    Bytes trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(load_model(trailing), FormatError);
}
