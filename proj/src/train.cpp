#include "keyperm/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "keyperm/error.hpp"
#include "keyperm/rng.hpp"

namespace keyperm {

std::string to_string(Optimizer opt) {
    return opt == Optimizer::adam ? "adam" : "sgd-momentum";
}

Optimizer parse_optimizer(const std::string& name) {
    if (name == "adam") return Optimizer::adam;
    if (name == "sgd-momentum" || name == "sgd") return Optimizer::sgd_momentum;
    throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd-momentum)");
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

namespace {

// Per-parameter optimizer state, laid out like the network parameters.
struct SlotState {
    std::vector<double> m_w, v_w, m_b, v_b;
};

class Stepper {
public:
    Stepper(const Network& net, const TrainConfig& cfg) : cfg_(cfg), slots_(net.layers().size()) {
        for (std::size_t i = 0; i < net.layers().size(); ++i) {
            const auto& p = net.layers()[i].params;
            if (p.empty()) continue;
            slots_[i].m_w.assign(p.weights.size(), 0.0);
            slots_[i].m_b.assign(p.bias.size(), 0.0);
            if (cfg.optimizer == Optimizer::adam) {
                slots_[i].v_w.assign(p.weights.size(), 0.0);
                slots_[i].v_b.assign(p.bias.size(), 0.0);
            }
        }
    }

    void step(Network& net) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < net.layers().size(); ++i) {
            auto& p = net.layers()[i].params;
            if (p.empty()) continue;
            update(p.weights, p.grad_weights, slots_[i].m_w, slots_[i].v_w, c1, c2);
            update(p.bias, p.grad_bias, slots_[i].m_b, slots_[i].v_b, c1, c2);
        }
    }

private:
    void update(Tensor& w, const Tensor& g, std::vector<double>& m, std::vector<double>& v, double c1, double c2) {
        const double lr = cfg_.learning_rate;
        if (cfg_.optimizer == Optimizer::adam) {
            const double b1 = cfg_.beta1, b2 = cfg_.beta2, eps = cfg_.adam_epsilon;
            for (std::size_t k = 0; k < w.size(); ++k) {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
            }
        } else {
            for (std::size_t k = 0; k < w.size(); ++k) {
                m[k] = cfg_.momentum * m[k] + g[k];
                w[k] -= lr * m[k];
            }
        }
    }

    const TrainConfig& cfg_;
    std::vector<SlotState> slots_;
    std::uint64_t t_ = 0;
};

Tensor gather(const LabeledDataset& ds, std::span<const std::size_t> idx, std::vector<std::size_t>& labels) {
    const Shape item = ds.images.item_shape();
    const std::size_t stride = shape_size(item);
    Shape s{idx.size()};
    s.insert(s.end(), item.begin(), item.end());
    std::vector<double> d(idx.size() * stride);
    labels.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(ds.images.data() + idx[r] * stride, stride, d.data() + r * stride);
        labels[r] = ds.labels[idx[r]];
    }
    return Tensor(std::move(s), std::move(d));
}

}  // namespace

Evaluation evaluate(const Network& net, const LabeledDataset& ds, std::size_t chunk) {
    if (ds.size() == 0) throw ConfigError("cannot evaluate on an empty dataset");
    const std::size_t m = net.classes();
    double loss = 0.0;
    std::size_t wrong = 0;
    for (std::size_t begin = 0; begin < ds.size(); begin += chunk) {
        const std::size_t count = std::min(chunk, ds.size() - begin);
        Tensor logits = forward_logits(net, ds.images.rows(begin, count), Mode::infer);
        for (std::size_t r = 0; r < count; ++r) {
            std::span<const double> z(logits.data() + r * m, m);
            const std::size_t y = ds.labels[begin + r];
            loss += cross_entropy_loss(z, y);
            if (argmax_low(softmax(z)) != y) ++wrong;
        }
    }
    const auto n = static_cast<double>(ds.size());
    return {loss / n, 100.0 * static_cast<double>(wrong) / n};
}

TrainResult train(Network& net, const LabeledDataset& train_set, const LabeledDataset* val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.size() == 0) throw ConfigError("cannot train on an empty dataset");
    for (auto y : train_set.labels)
        if (y >= net.classes())
            throw ConfigError("label " + std::to_string(y) + " outside [0, " + std::to_string(net.classes()) + ")");

    Rng shuffle_rng(derive_seed(cfg.seed, 1));
    Rng dropout_rng(derive_seed(cfg.seed, 2));
    Stepper stepper(net, cfg);
    const std::size_t m = net.classes();

    std::vector<std::size_t> order(train_set.size());
    std::vector<std::size_t> labels;
    TrainResult result;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(order, shuffle_rng);
        double loss_sum = 0.0;
        std::size_t wrong = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - begin);
            Tensor x = gather(train_set, std::span(order).subspan(begin, count), labels);
            ForwardPass pass = forward_traced(net, x, Mode::train, &dropout_rng);
            Tensor grad(pass.logits.shape());
            double batch_loss = 0.0;
            for (std::size_t r = 0; r < count; ++r) {
                std::span<const double> z(pass.logits.data() + r * m, m);
                batch_loss += cross_entropy_loss(z, labels[r]);
                auto g = cross_entropy_grad(z, labels[r]);
                for (std::size_t j = 0; j < m; ++j) grad[r * m + j] = g[j] / static_cast<double>(count);
                if (argmax_low(z) != labels[r]) ++wrong;
            }
            if (!std::isfinite(batch_loss))
                throw InvariantError("training diverged at epoch " + std::to_string(epoch) + ", sample offset " +
                                     std::to_string(begin) + ": loss is not finite");
            loss_sum += batch_loss;
            BackwardResult br = backward(net, pass, grad, true);
            for (std::size_t i = 0; i < net.layers().size(); ++i) {
                auto& p = net.layers()[i].params;
                if (p.empty()) continue;
                p.grad_weights = std::move(br.param_grads[i].weights);
                p.grad_bias = std::move(br.param_grads[i].bias);
            }
            stepper.step(net);
        }
        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_sum / static_cast<double>(order.size());
        em.train_error = 100.0 * static_cast<double>(wrong) / static_cast<double>(order.size());
        if (val_set && val_set->size() > 0) {
            Evaluation ev = evaluate(net, *val_set);
            em.val_loss = ev.loss;
            em.val_error = ev.error;
        }
        em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(em);
        if (cfg.on_epoch) cfg.on_epoch(em);
    }
    return result;
}

TrainResult train(Network& net, const LabeledDataset& data, const TrainConfig& cfg) {
    if (data.size() == 0) throw ConfigError("cannot train on an empty dataset");
    const std::size_t val = cfg.val_size;
    const std::size_t tr = cfg.train_size == 0 ? data.size() - std::min(val, data.size()) : cfg.train_size;
    if (tr == 0 || tr + val != data.size())
        throw ConfigError("split sizes " + std::to_string(tr) + " + " + std::to_string(val) +
                          " do not sum to the training-set size " + std::to_string(data.size()));
    LabeledDataset train_part = data.slice(0, tr, "train part");
    if (val == 0) return train(net, train_part, nullptr, cfg);
    LabeledDataset val_part = data.slice(tr, val, "validation part");
    return train(net, train_part, &val_part, cfg);
}

std::string format_metrics(const std::vector<EpochMetrics>& history, bool with_timing) {
    std::string out = with_timing ? "epoch  train_loss  train_err%  val_loss  val_err%  seconds\n"
                                  : "epoch  train_loss  train_err%  val_loss  val_err%\n";
    char line[128];
    for (const auto& e : history) {
        int n = std::snprintf(line, sizeof(line), "%5zu  %10.6f  %10.3f  %8.5f  %8.3f", e.epoch, e.train_loss,
                              e.train_error, e.val_loss, e.val_error);
        if (with_timing) std::snprintf(line + n, sizeof(line) - static_cast<std::size_t>(n), "  %7.1f", e.seconds);
        out += line;
        out += '\n';
    }
    return out;
}

}  // namespace keyperm
