#include "keyperm/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "keyperm/error.hpp"

namespace keyperm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;
using MapVec = Eigen::Map<Eigen::VectorXd>;

struct ConvGeometry {
    std::size_t batch, in_c, in_h, in_w;
    std::size_t out_c, k_h, k_w;
    std::size_t out_h, out_w;
    std::size_t stride, padding;

    std::size_t patch() const { return in_c * k_h * k_w; }
    std::size_t pixels() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Shape& input, const Shape& weights, std::size_t stride, std::size_t padding) {
    if (weights.size() != 4) throw ConfigError("conv2d kernel must be [out, in, kh, kw], got " + shape_str(weights));
    if (stride == 0) throw ConfigError("conv2d stride must be >= 1");
    if (input.size() != 4) throw ConfigError("conv2d input must be [N, C, H, W], got " + shape_str(input));
    ConvGeometry g{};
    g.batch = input[0];
    g.in_c = input[1];
    g.in_h = input[2];
    g.in_w = input[3];
    g.out_c = weights[0];
    g.k_h = weights[2];
    g.k_w = weights[3];
    g.stride = stride;
    g.padding = padding;
    if (weights[1] != g.in_c)
        throw ConfigError("conv2d channel mismatch: input " + shape_str(input) + " vs kernel " + shape_str(weights));
    if (g.in_h + 2 * padding < g.k_h || g.in_w + 2 * padding < g.k_w)
        throw ConfigError("conv2d kernel " + shape_str(weights) + " does not fit input " + shape_str(input) +
                          " with padding " + std::to_string(padding));
    g.out_h = (g.in_h + 2 * padding - g.k_h) / stride + 1;
    g.out_w = (g.in_w + 2 * padding - g.k_w) / stride + 1;
    return g;
}

// cols is [patch, pixels] row-major.
void im2col(const double* in, const ConvGeometry& g, double* cols) {
    const auto pad = static_cast<std::ptrdiff_t>(g.padding);
    const auto H = static_cast<std::ptrdiff_t>(g.in_h);
    const auto W = static_cast<std::ptrdiff_t>(g.in_w);
    const std::size_t P = g.pixels();
    for (std::size_t c = 0; c < g.in_c; ++c) {
        const double* plane = in + c * g.in_h * g.in_w;
        for (std::size_t i = 0; i < g.k_h; ++i) {
            for (std::size_t j = 0; j < g.k_w; ++j) {
                double* dst = cols + ((c * g.k_h + i) * g.k_w + j) * P;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - pad;
                    double* row = dst + oy * g.out_w;
                    if (iy < 0 || iy >= H) {
                        std::fill(row, row + g.out_w, 0.0);
                        continue;
                    }
                    const double* src = plane + iy * W;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) - pad;
                        row[ox] = (ix < 0 || ix >= W) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, const ConvGeometry& g, double* out) {
    const auto pad = static_cast<std::ptrdiff_t>(g.padding);
    const auto H = static_cast<std::ptrdiff_t>(g.in_h);
    const auto W = static_cast<std::ptrdiff_t>(g.in_w);
    const std::size_t P = g.pixels();
    for (std::size_t c = 0; c < g.in_c; ++c) {
        double* plane = out + c * g.in_h * g.in_w;
        for (std::size_t i = 0; i < g.k_h; ++i) {
            for (std::size_t j = 0; j < g.k_w; ++j) {
                const double* src = cols + ((c * g.k_h + i) * g.k_w + j) * P;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - pad;
                    if (iy < 0 || iy >= H) continue;
                    double* dst = plane + iy * W;
                    const double* row = src + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) - pad;
                        if (ix >= 0 && ix < W) dst[ix] += row[ox];
                    }
                }
            }
        }
    }
}

Tensor conv_batched(const Tensor& input, const LayerParams& params, std::size_t stride, std::size_t padding) {
    const ConvGeometry g = conv_geometry(input.shape(), params.weights.shape(), stride, padding);
    if (params.bias.size() != g.out_c)
        throw ConfigError("conv2d bias " + shape_str(params.bias.shape()) + " does not match " +
                          std::to_string(g.out_c) + " output channels");
    Tensor out({g.batch, g.out_c, g.out_h, g.out_w});
    AlignedDoubles cols(g.patch() * g.pixels());
    ConstMapMat w(params.weights.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(g.patch()));
    ConstMapVec b(params.bias.data(), static_cast<Eigen::Index>(g.out_c));
    const std::size_t in_stride = g.in_c * g.in_h * g.in_w;
    const std::size_t out_stride = g.out_c * g.pixels();
    for (std::size_t n = 0; n < g.batch; ++n) {
        im2col(input.data() + n * in_stride, g, cols.data());
        ConstMapMat c(cols.data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.pixels()));
        MapMat y(out.data() + n * out_stride, static_cast<Eigen::Index>(g.out_c),
                 static_cast<Eigen::Index>(g.pixels()));
        y.noalias() = w * c;
        y.colwise() += b;
    }
    return out;
}

Tensor conv_backward(const Layer& layer, const Tensor& input, const Tensor& grad_out, ParamGrad* pg) {
    const auto& params = layer.params;
    const ConvGeometry g = conv_geometry(input.shape(), params.weights.shape(), layer.stride, layer.padding);
    if (grad_out.shape() != Shape{g.batch, g.out_c, g.out_h, g.out_w})
        throw ConfigError("conv2d upstream gradient " + shape_str(grad_out.shape()) + " has wrong shape");
    Tensor grad_in(input.shape());
    AlignedDoubles cols(g.patch() * g.pixels());
    AlignedDoubles dcols(g.patch() * g.pixels());
    const auto K = static_cast<Eigen::Index>(g.patch());
    const auto P = static_cast<Eigen::Index>(g.pixels());
    const auto O = static_cast<Eigen::Index>(g.out_c);
    ConstMapMat w(params.weights.data(), O, K);
    RowMat gw;
    Eigen::VectorXd gb;
    if (pg) {
        gw = RowMat::Zero(O, K);
        gb = Eigen::VectorXd::Zero(O);
    }
    const std::size_t in_stride = g.in_c * g.in_h * g.in_w;
    const std::size_t out_stride = g.out_c * g.pixels();
    for (std::size_t n = 0; n < g.batch; ++n) {
        ConstMapMat dy(grad_out.data() + n * out_stride, O, P);
        if (pg) {
            im2col(input.data() + n * in_stride, g, cols.data());
            ConstMapMat c(cols.data(), K, P);
            gw.noalias() += dy * c.transpose();
            gb += dy.rowwise().sum();
        }
        MapMat dc(dcols.data(), K, P);
        dc.noalias() = w.transpose() * dy;
        col2im(dcols.data(), g, grad_in.data() + n * in_stride);
    }
    if (pg) {
        pg->weights = Tensor(params.weights.shape(), std::vector<double>(gw.data(), gw.data() + gw.size()));
        pg->bias = Tensor(params.bias.shape(), std::vector<double>(gb.data(), gb.data() + gb.size()));
    }
    return grad_in;
}

void check_dense(const Layer& layer, const Shape& input) {
    const Shape& ws = layer.params.weights.shape();
    if (input.size() != 2) throw ConfigError("dense input must be [N, features], got " + shape_str(input));
    if (input[1] != ws[1])
        throw ConfigError("dense dimension mismatch: input " + shape_str(input) + " vs weights " + shape_str(ws));
}

Tensor dense_forward(const Layer& layer, const Tensor& input) {
    check_dense(layer, input.shape());
    const auto& ws = layer.params.weights.shape();
    const auto N = static_cast<Eigen::Index>(input.dim(0));
    const auto I = static_cast<Eigen::Index>(ws[1]);
    const auto O = static_cast<Eigen::Index>(ws[0]);
    Tensor out({input.dim(0), ws[0]});
    ConstMapMat x(input.data(), N, I);
    ConstMapMat w(layer.params.weights.data(), O, I);
    ConstMapVec b(layer.params.bias.data(), O);
    MapMat y(out.data(), N, O);
    y.noalias() = x * w.transpose();
    y.rowwise() += b.transpose();
    return out;
}

Tensor dense_backward(const Layer& layer, const Tensor& input, const Tensor& grad_out, ParamGrad* pg) {
    const auto& ws = layer.params.weights.shape();
    const auto N = static_cast<Eigen::Index>(input.dim(0));
    const auto I = static_cast<Eigen::Index>(ws[1]);
    const auto O = static_cast<Eigen::Index>(ws[0]);
    if (grad_out.shape() != Shape{input.dim(0), ws[0]})
        throw ConfigError("dense upstream gradient " + shape_str(grad_out.shape()) + " has wrong shape");
    ConstMapMat x(input.data(), N, I);
    ConstMapMat w(layer.params.weights.data(), O, I);
    ConstMapMat dy(grad_out.data(), N, O);
    Tensor grad_in(input.shape());
    MapMat dx(grad_in.data(), N, I);
    dx.noalias() = dy * w;
    if (pg) {
        pg->weights = Tensor(ws);
        MapMat gw(pg->weights.data(), O, I);
        gw.noalias() = dy.transpose() * x;
        pg->bias = Tensor(layer.params.bias.shape());
        MapVec gb(pg->bias.data(), O);
        gb = dy.colwise().sum().transpose();
    }
    return grad_in;
}

Tensor softmax_rows(const Tensor& input) {
    const std::size_t m = input.shape().back();
    Tensor out(input.shape());
    for (std::size_t r = 0; r < input.size() / m; ++r) {
        auto p = softmax(std::span<const double>(input.data() + r * m, m));
        std::copy(p.begin(), p.end(), out.data() + r * m);
    }
    return out;
}

}  // namespace

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::dense: return "dense";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::dropout: return "dropout";
        case LayerKind::softmax: return "softmax";
        case LayerKind::flatten: return "flatten";
    }
    return "unknown";
}

LayerParams::LayerParams(Tensor w, Tensor b)
    : weights(std::move(w)), bias(std::move(b)), grad_weights(weights.shape()), grad_bias(bias.shape()) {}

void LayerParams::zero_grad() {
    grad_weights.fill(0.0);
    grad_bias.fill(0.0);
}

Layer Layer::conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h, std::size_t kernel_w,
                    std::size_t stride, std::size_t padding) {
    if (stride == 0) throw ConfigError("conv2d stride must be >= 1");
    Layer l;
    l.kind = LayerKind::conv2d;
    l.stride = stride;
    l.padding = padding;
    l.params = LayerParams(Tensor({out_channels, in_channels, kernel_h, kernel_w}), Tensor({out_channels}));
    return l;
}

Layer Layer::dense(std::size_t in_features, std::size_t out_features) {
    Layer l;
    l.kind = LayerKind::dense;
    l.params = LayerParams(Tensor({out_features, in_features}), Tensor({out_features}));
    return l;
}

Layer Layer::maxpool(std::size_t pool) {
    if (pool == 0) throw ConfigError("maxpool size must be >= 1");
    Layer l;
    l.kind = LayerKind::maxpool;
    l.pool = pool;
    return l;
}

Layer Layer::dropout(double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
    Layer l;
    l.kind = LayerKind::dropout;
    l.rate = rate;
    return l;
}

Shape Layer::output_shape(const Shape& input) const {
    switch (kind) {
        case LayerKind::conv2d: {
            auto g = conv_geometry(input, params.weights.shape(), stride, padding);
            return {g.batch, g.out_c, g.out_h, g.out_w};
        }
        case LayerKind::dense:
            check_dense(*this, input);
            return {input[0], params.weights.dim(0)};
        case LayerKind::maxpool:
            if (input.size() != 4) throw ConfigError("maxpool input must be [N, C, H, W], got " + shape_str(input));
            if (input[2] < pool || input[3] < pool)
                throw ConfigError("maxpool window " + std::to_string(pool) + " larger than input " + shape_str(input));
            return {input[0], input[1], input[2] / pool, input[3] / pool};
        case LayerKind::flatten:
            if (input.size() < 2) throw ConfigError("flatten input must be batched, got " + shape_str(input));
            return {input[0], shape_size(input) / input[0]};
        case LayerKind::relu:
        case LayerKind::dropout:
        case LayerKind::softmax:
            return input;
    }
    throw ConfigError("unknown layer kind");
}

Tensor conv2d_forward(const Tensor& input, const LayerParams& params, std::size_t stride, std::size_t padding) {
    if (input.rank() == 3) {
        Shape batched{1, input.dim(0), input.dim(1), input.dim(2)};
        Tensor out = conv_batched(input.reshaped(batched), params, stride, padding);
        return out.reshaped(out.item_shape());
    }
    return conv_batched(input, params, stride, padding);
}

std::pair<Tensor, LayerTrace> layer_forward(const Layer& layer, const Tensor& input, Mode mode, Rng* dropout_rng) {
    LayerTrace trace;
    trace.kind = layer.kind;
    Tensor out;
    switch (layer.kind) {
        case LayerKind::conv2d:
            out = conv_batched(input, layer.params, layer.stride, layer.padding);
            trace.input = input;
            break;
        case LayerKind::dense:
            out = dense_forward(layer, input);
            trace.input = input;
            break;
        case LayerKind::relu: {
            out = Tensor(input.shape());
            for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
            trace.input = input;
            break;
        }
        case LayerKind::maxpool: {
            const Shape os = layer.output_shape(input.shape());
            out = Tensor(os);
            trace.argmax.resize(out.size());
            const std::size_t H = input.dim(2), W = input.dim(3), p = layer.pool;
            const std::size_t oh = os[2], ow = os[3];
            std::size_t o = 0;
            for (std::size_t plane = 0; plane < os[0] * os[1]; ++plane) {
                const std::size_t base = plane * H * W;
                for (std::size_t y = 0; y < oh; ++y) {
                    for (std::size_t x = 0; x < ow; ++x, ++o) {
                        std::size_t best = base + (y * p) * W + x * p;
                        for (std::size_t dy = 0; dy < p; ++dy)
                            for (std::size_t dx = 0; dx < p; ++dx) {
                                std::size_t idx = base + (y * p + dy) * W + (x * p + dx);
                                if (input[idx] > input[best]) best = idx;
                            }
                        out[o] = input[best];
                        trace.argmax[o] = static_cast<std::uint32_t>(best);
                    }
                }
            }
            trace.input = Tensor(input.shape());  // shape only is needed
            break;
        }
        case LayerKind::dropout: {
            if (mode == Mode::infer || layer.rate == 0.0) {
                out = input;
                break;
            }
            if (!dropout_rng) throw ConfigError("dropout in train mode requires a random stream");
            const double keep = 1.0 - layer.rate;
            trace.mask = Tensor(input.shape());
            out = Tensor(input.shape());
            for (std::size_t i = 0; i < input.size(); ++i) {
                trace.mask[i] = dropout_rng->uniform() < layer.rate ? 0.0 : 1.0 / keep;
                out[i] = input[i] * trace.mask[i];
            }
            break;
        }
        case LayerKind::softmax:
            out = softmax_rows(input);
            trace.output = out;
            break;
        case LayerKind::flatten:
            out = input.reshaped(layer.output_shape(input.shape()));
            trace.input = Tensor(input.shape());
            break;
    }
    if (trace.input.empty()) trace.input = Tensor(input.shape());
    return {std::move(out), std::move(trace)};
}

Tensor layer_backward(const Layer& layer, LayerTrace& trace, const Tensor& grad_output, ParamGrad* param_grad) {
    if (trace.consumed) throw InvariantError("stale trace: backward already ran for this " + to_string(trace.kind) + " layer");
    if (trace.kind != layer.kind)
        throw ConfigError("trace of kind " + to_string(trace.kind) + " passed to " + to_string(layer.kind) + " layer");
    trace.consumed = true;
    switch (layer.kind) {
        case LayerKind::conv2d:
            return conv_backward(layer, trace.input, grad_output, param_grad);
        case LayerKind::dense:
            return dense_backward(layer, trace.input, grad_output, param_grad);
        case LayerKind::relu: {
            Tensor g(trace.input.shape());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = trace.input[i] > 0.0 ? grad_output[i] : 0.0;
            return g;
        }
        case LayerKind::maxpool: {
            Tensor g(trace.input.shape());
            for (std::size_t o = 0; o < trace.argmax.size(); ++o) g[trace.argmax[o]] += grad_output[o];
            return g;
        }
        case LayerKind::dropout: {
            if (trace.mask.empty()) return grad_output;
            Tensor g(grad_output.shape());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_output[i] * trace.mask[i];
            return g;
        }
        case LayerKind::softmax: {
            const Tensor& y = trace.output;
            const std::size_t m = y.shape().back();
            Tensor g(y.shape());
            for (std::size_t r = 0; r < y.size() / m; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < m; ++j) dot += grad_output[r * m + j] * y[r * m + j];
                for (std::size_t j = 0; j < m; ++j) g[r * m + j] = y[r * m + j] * (grad_output[r * m + j] - dot);
            }
            return g;
        }
        case LayerKind::flatten:
            return grad_output.reshaped(trace.input.shape());
    }
    throw ConfigError("unknown layer kind");
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw ConfigError("softmax of an empty vector");
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

double cross_entropy_loss(std::span<const double> logits, std::size_t true_class) {
    if (true_class >= logits.size())
        throw ConfigError("class " + std::to_string(true_class) + " out of range for " + std::to_string(logits.size()) +
                          " logits");
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - m);
    return (m + std::log(sum)) - logits[true_class];
}

std::vector<double> cross_entropy_grad(std::span<const double> logits, std::size_t true_class) {
    if (true_class >= logits.size())
        throw ConfigError("class " + std::to_string(true_class) + " out of range for " + std::to_string(logits.size()) +
                          " logits");
    auto g = softmax(logits);
    g[true_class] -= 1.0;
    return g;
}

}  // namespace keyperm
