#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "keyperm/rng.hpp"
#include "keyperm/tensor.hpp"

namespace keyperm {

enum class LayerKind : std::uint8_t { conv2d = 1, dense, relu, maxpool, dropout, softmax, flatten };
enum class Mode { train, infer };

std::string to_string(LayerKind kind);

struct LayerParams {
    Tensor weights;
    Tensor bias;
    Tensor grad_weights;
    Tensor grad_bias;

    LayerParams() = default;
    LayerParams(Tensor w, Tensor b);

    bool empty() const noexcept { return weights.empty(); }
    void zero_grad();
};

// Parameter gradients produced by one backward pass through one layer.
struct ParamGrad {
    Tensor weights;
    Tensor bias;
};

// Static configuration plus parameters of one layer of a sequential stack.
//   conv2d : weights [out, in, kh, kw], bias [out]
//   dense  : weights [out, in], bias [out]
//   maxpool: non-overlapping pool x pool windows
//   dropout: inverted dropout with drop probability `rate`
struct Layer {
    LayerKind kind = LayerKind::relu;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t pool = 2;
    double rate = 0.5;
    LayerParams params;

    static Layer conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h, std::size_t kernel_w,
                        std::size_t stride = 1, std::size_t padding = 0);
    static Layer dense(std::size_t in_features, std::size_t out_features);
    static Layer relu() { Layer l; l.kind = LayerKind::relu; return l; }
    static Layer maxpool(std::size_t pool = 2);
    static Layer dropout(double rate = 0.5);
    static Layer softmax() { Layer l; l.kind = LayerKind::softmax; return l; }
    static Layer flatten() { Layer l; l.kind = LayerKind::flatten; return l; }

    bool has_params() const noexcept { return kind == LayerKind::conv2d || kind == LayerKind::dense; }

    // Output shape for a batched input shape; throws ConfigError when the
    // layer cannot accept it.
    Shape output_shape(const Shape& input) const;
};

// What backward needs from forward. A trace is single use.
struct LayerTrace {
    LayerKind kind = LayerKind::relu;
    Tensor input;
    Tensor output;                     // softmax only
    Tensor mask;                       // dropout only (empty when inactive)
    std::vector<std::uint32_t> argmax; // maxpool only
    bool consumed = false;
};

// Direct 2-D cross-correlation. `input` is [C, H, W] or [N, C, H, W];
// the result keeps the batch axis iff the input had one.
Tensor conv2d_forward(const Tensor& input, const LayerParams& params, std::size_t stride, std::size_t padding);

std::pair<Tensor, LayerTrace> layer_forward(const Layer& layer, const Tensor& input, Mode mode, Rng* dropout_rng = nullptr);

// Gradient w.r.t. the layer input. When `param_grad` is non-null and the
// layer has parameters, it receives the parameter gradients.
Tensor layer_backward(const Layer& layer, LayerTrace& trace, const Tensor& grad_output, ParamGrad* param_grad = nullptr);

std::vector<double> softmax(std::span<const double> logits);

// -log softmax(logits)[true_class], computed with max subtraction.
double cross_entropy_loss(std::span<const double> logits, std::size_t true_class);

// d loss / d logits = softmax(logits) - onehot(true_class).
std::vector<double> cross_entropy_grad(std::span<const double> logits, std::size_t true_class);

}  // namespace keyperm
