#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "keyperm/data.hpp"
#include "keyperm/network.hpp"

namespace keyperm {

enum class Optimizer { adam, sgd_momentum };

std::string to_string(Optimizer opt);
Optimizer parse_optimizer(const std::string& name);

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_error = 0.0;  // percent, over the minibatches of the epoch (dropout active)
    double val_loss = 0.0;
    double val_error = 0.0;    // percent; zero when no validation split
    double seconds = 0.0;
};

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 128;
    Optimizer optimizer = Optimizer::adam;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 1;
    // When training from one combined set: first train_size samples train,
    // last val_size samples validate. train_size == 0 means "the rest".
    std::size_t train_size = 0;
    std::size_t val_size = 0;
    std::function<void(const EpochMetrics&)> on_epoch;

    void validate() const;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
};

TrainResult train(Network& net, const LabeledDataset& train_set, const LabeledDataset* val_set, const TrainConfig& cfg);

// Splits `data` per cfg.train_size / cfg.val_size, then trains.
TrainResult train(Network& net, const LabeledDataset& data, const TrainConfig& cfg);

struct Evaluation {
    double loss = 0.0;
    double error = 0.0;  // percent
};

Evaluation evaluate(const Network& net, const LabeledDataset& ds, std::size_t chunk = 128);

// Plain-text table, one epoch per line. Wall-clock seconds are left out
// unless asked for, so the table is byte-stable across reruns.
std::string format_metrics(const std::vector<EpochMetrics>& history, bool with_timing = false);

}  // namespace keyperm
