#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "keyperm/layers.hpp"
#include "keyperm/tensor.hpp"

namespace keyperm {

// fgsm: Conv 64@8x8, Conv 128@6x6, Conv 128@5x5, Dense 10 (ReLU between).
// cw_small / cw_large: the two width variants of the VGG-style stack
// (32-32-pool-64-64-pool-200-200-10 and 64-64-pool-128-128-pool-256-256-10).
// custom: any hand-assembled stack (tests, synthetic probes).
enum class Arch : std::uint8_t { fgsm = 1, cw_small, cw_large, custom };

std::string to_string(Arch arch);
Arch parse_arch(std::string_view tag);

// Sequential layer stack mapping [N, C, H, W] inputs to [N, M] logits.
// Consecutive layer shapes are validated at construction.
class Network {
public:
    Network(Arch arch, Shape input_shape, std::size_t classes, std::vector<Layer> layers);

    Arch arch() const noexcept { return arch_; }
    const Shape& input_shape() const noexcept { return input_shape_; }
    std::size_t input_size() const { return shape_size(input_shape_); }
    std::size_t classes() const noexcept { return classes_; }

    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::vector<Layer>& layers() noexcept { return layers_; }

    std::size_t parameter_count() const;

    // Accepts [C, H, W] (one sample) or [N, C, H, W]; returns the batched form.
    Tensor as_batch(const Tensor& x) const;

    friend bool operator==(const Network& a, const Network& b);

private:
    Arch arch_;
    Shape input_shape_;
    std::size_t classes_;
    std::vector<Layer> layers_;
};

Network build_network(Arch arch, std::uint64_t init_seed = 0);

// He-normal weights (std sqrt(2 / fan_in)), zero biases.
void he_init(Network& net, std::uint64_t seed);

struct ForwardPass {
    std::vector<LayerTrace> traces;
    Tensor logits;
    bool consumed = false;
};

struct BackwardResult {
    std::vector<ParamGrad> param_grads;  // one per layer, empty for parameter-free layers
    Tensor input_grad;                   // shaped like the forward input
};

Tensor forward_logits(const Network& net, const Tensor& x, Mode mode = Mode::infer, Rng* dropout_rng = nullptr);
ForwardPass forward_traced(const Network& net, const Tensor& x, Mode mode = Mode::infer, Rng* dropout_rng = nullptr);

// Back-propagates d loss / d logits through a completed forward pass.
// A pass can be consumed once.
BackwardResult backward(const Network& net, ForwardPass& pass, const Tensor& grad_logits, bool want_param_grads = true);

struct Encoding {
    Tensor probabilities;
    Tensor logits;
};

// Class probabilities and the raw logits they were computed from.
// Single-sample input gives [M] tensors, batched input [N, M].
Encoding encode(const Network& net, const Tensor& x);

std::size_t decode(const Network& net, const Tensor& x);
std::vector<std::size_t> decode_batch(const Network& net, const Tensor& xs, std::size_t chunk = 128);

// Index of the maximum; ties resolve to the lowest index.
std::size_t argmax_low(std::span<const double> values);

}  // namespace keyperm
