#include "keyperm/network.hpp"

#include <cmath>

#include "keyperm/error.hpp"
#include "keyperm/rng.hpp"

namespace keyperm {

std::string to_string(Arch arch) {
    switch (arch) {
        case Arch::fgsm: return "fgsm-arch";
        case Arch::cw_small: return "cw-arch-small";
        case Arch::cw_large: return "cw-arch-large";
        case Arch::custom: return "custom";
    }
    return "unknown";
}

Arch parse_arch(std::string_view tag) {
    if (tag == "fgsm-arch") return Arch::fgsm;
    if (tag == "cw-arch-small" || tag == "cw-arch") return Arch::cw_small;
    if (tag == "cw-arch-large") return Arch::cw_large;
    if (tag == "custom") return Arch::custom;
    throw ConfigError("unknown architecture tag '" + std::string(tag) +
                      "' (expected fgsm-arch, cw-arch-small or cw-arch-large)");
}

Network::Network(Arch arch, Shape input_shape, std::size_t classes, std::vector<Layer> layers)
    : arch_(arch), input_shape_(std::move(input_shape)), classes_(classes), layers_(std::move(layers)) {
    if (input_shape_.size() != 3) throw ConfigError("network input shape must be [C, H, W], got " + shape_str(input_shape_));
    if (classes_ < 2) throw ConfigError("network needs at least two classes");
    if (layers_.empty()) throw ConfigError("network has no layers");
    Shape s{1};
    s.insert(s.end(), input_shape_.begin(), input_shape_.end());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        try {
            s = layers_[i].output_shape(s);
        } catch (const ConfigError& e) {
            throw ConfigError("layer " + std::to_string(i) + " (" + to_string(layers_[i].kind) + "): " + e.what());
        }
    }
    if (s != Shape{1, classes_})
        throw ConfigError("network emits " + shape_str(s) + ", expected [1x" + std::to_string(classes_) + "]");
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.params.weights.size() + l.params.bias.size();
    return n;
}

Tensor Network::as_batch(const Tensor& x) const {
    if (x.shape() == input_shape_) {
        Shape s{1};
        s.insert(s.end(), input_shape_.begin(), input_shape_.end());
        return x.reshaped(std::move(s));
    }
    if (x.rank() == 4 && x.item_shape() == input_shape_) return x;
    throw ConfigError("input shape " + shape_str(x.shape()) + " does not match network input " + shape_str(input_shape_));
}

bool operator==(const Network& a, const Network& b) {
    if (a.arch_ != b.arch_ || a.input_shape_ != b.input_shape_ || a.classes_ != b.classes_ ||
        a.layers_.size() != b.layers_.size())
        return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
        const Layer& x = a.layers_[i];
        const Layer& y = b.layers_[i];
        if (x.kind != y.kind || x.stride != y.stride || x.padding != y.padding || x.pool != y.pool || x.rate != y.rate ||
            !(x.params.weights == y.params.weights) || !(x.params.bias == y.params.bias))
            return false;
    }
    return true;
}

namespace {

std::vector<Layer> vgg_stack(std::size_t c1, std::size_t c2, std::size_t hidden) {
    return {
        Layer::conv2d(1, c1, 3, 3), Layer::relu(),
        Layer::conv2d(c1, c1, 3, 3), Layer::relu(),
        Layer::maxpool(2),
        Layer::conv2d(c1, c2, 3, 3), Layer::relu(),
        Layer::conv2d(c2, c2, 3, 3), Layer::relu(),
        Layer::maxpool(2),
        Layer::flatten(),
        Layer::dense(c2 * 4 * 4, hidden), Layer::relu(),
        Layer::dropout(0.5),
        Layer::dense(hidden, hidden), Layer::relu(),
        Layer::dense(hidden, 10),
    };
}

}  // namespace

Network build_network(Arch arch, std::uint64_t init_seed) {
    std::vector<Layer> layers;
    switch (arch) {
        case Arch::fgsm:
            layers = {
                Layer::conv2d(1, 64, 8, 8), Layer::relu(),
                Layer::conv2d(64, 128, 6, 6), Layer::relu(),
                Layer::conv2d(128, 128, 5, 5), Layer::relu(),
                Layer::flatten(),
                Layer::dense(128 * 12 * 12, 10),
            };
            break;
        case Arch::cw_small:
            layers = vgg_stack(32, 64, 200);
            break;
        case Arch::cw_large:
            layers = vgg_stack(64, 128, 256);
            break;
        case Arch::custom:
            throw ConfigError("custom networks are assembled by hand, not built from a tag");
    }
    Network net(arch, {1, 28, 28}, 10, std::move(layers));
    he_init(net, init_seed);
    return net;
}

void he_init(Network& net, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& layer : net.layers()) {
        if (!layer.has_params()) continue;
        const Shape& ws = layer.params.weights.shape();
        const std::size_t fan_in = shape_size(ws) / ws[0];
        const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (auto& w : layer.params.weights.values()) w = sd * rng.normal();
        layer.params.bias.fill(0.0);
        layer.params.zero_grad();
    }
}

ForwardPass forward_traced(const Network& net, const Tensor& x, Mode mode, Rng* dropout_rng) {
    ForwardPass pass;
    pass.traces.reserve(net.layers().size());
    Tensor h = net.as_batch(x);
    for (const auto& layer : net.layers()) {
        auto [out, trace] = layer_forward(layer, h, mode, dropout_rng);
        pass.traces.push_back(std::move(trace));
        h = std::move(out);
    }
    pass.logits = std::move(h);
    return pass;
}

Tensor forward_logits(const Network& net, const Tensor& x, Mode mode, Rng* dropout_rng) {
    Tensor h = net.as_batch(x);
    for (const auto& layer : net.layers()) h = layer_forward(layer, h, mode, dropout_rng).first;
    return h;
}

BackwardResult backward(const Network& net, ForwardPass& pass, const Tensor& grad_logits, bool want_param_grads) {
    if (pass.consumed) throw InvariantError("stale forward pass: backward already ran on it");
    if (pass.traces.size() != net.layers().size())
        throw ConfigError("forward pass has " + std::to_string(pass.traces.size()) + " traces for a " +
                          std::to_string(net.layers().size()) + "-layer network");
    if (grad_logits.shape() != pass.logits.shape())
        throw ConfigError("loss gradient " + shape_str(grad_logits.shape()) + " does not match logits " +
                          shape_str(pass.logits.shape()));
    pass.consumed = true;
    BackwardResult result;
    result.param_grads.resize(net.layers().size());
    Tensor g = grad_logits;
    for (std::size_t i = net.layers().size(); i-- > 0;) {
        const Layer& layer = net.layers()[i];
        ParamGrad* pg = (want_param_grads && layer.has_params()) ? &result.param_grads[i] : nullptr;
        g = layer_backward(layer, pass.traces[i], g, pg);
    }
    result.input_grad = std::move(g);
    return result;
}

Encoding encode(const Network& net, const Tensor& x) {
    const bool single = x.shape() == net.input_shape();
    Tensor logits = forward_logits(net, x, Mode::infer);
    Tensor probs(logits.shape());
    const std::size_t m = net.classes();
    for (std::size_t r = 0; r < logits.dim(0); ++r) {
        auto p = softmax(std::span<const double>(logits.data() + r * m, m));
        std::copy(p.begin(), p.end(), probs.data() + r * m);
    }
    if (single) return {probs.reshaped({m}), logits.reshaped({m})};
    return {std::move(probs), std::move(logits)};
}

std::size_t decode(const Network& net, const Tensor& x) {
    if (x.shape() != net.input_shape())
        throw ConfigError("decode expects one sample of shape " + shape_str(net.input_shape()) + ", got " +
                          shape_str(x.shape()));
    Encoding e = encode(net, x);
    return argmax_low(e.probabilities.values());
}

std::vector<std::size_t> decode_batch(const Network& net, const Tensor& xs, std::size_t chunk) {
    Tensor batch = net.as_batch(xs);
    const std::size_t n = batch.dim(0);
    const std::size_t m = net.classes();
    std::vector<std::size_t> labels;
    labels.reserve(n);
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t count = std::min(chunk, n - begin);
        Tensor logits = forward_logits(net, batch.rows(begin, count), Mode::infer);
        for (std::size_t r = 0; r < count; ++r) {
            auto p = softmax(std::span<const double>(logits.data() + r * m, m));
            labels.push_back(argmax_low(p));
        }
    }
    return labels;
}

std::size_t argmax_low(std::span<const double> values) {
    if (values.empty()) throw ConfigError("argmax of an empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

}  // namespace keyperm
