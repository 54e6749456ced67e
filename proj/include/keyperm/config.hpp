#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "keyperm/attacks.hpp"
#include "keyperm/data.hpp"
#include "keyperm/eval.hpp"
#include "keyperm/network.hpp"
#include "keyperm/train.hpp"

namespace keyperm {

// Run configuration, read from an INI-style file:
//
//   [run]       seed, dataset, data_dir, output_dir, train_size, val_size, test_size
//   [victim]    arch, mode (classical | defended), key, model, epochs, batch_size,
//               optimizer, learning_rate, momentum
//   [attacker]  knowledge, surrogate_arch, surrogate_model
//   [attack]    family, norm, mode, target_rule, epsilon, kappa, c_initial, c_min,
//               c_max, c_steps, iterations, learning_rate, abort_early,
//               tau_decrease, max_rounds, samples, seed, batch
//   [evaluate]  preset, cache_dir, report
//
// Unknown sections or keys are errors. The attacker section may not name a
// key file or key seed.
struct RunSection {
    std::uint64_t seed = 1;
    std::string dataset = "mnist";
    std::optional<std::string> data_dir;
    std::filesystem::path output_dir = "out";
    SplitSizes sizes;
};

struct VictimSection {
    Arch arch = Arch::cw_small;
    bool defended = false;
    std::optional<std::filesystem::path> key;
    std::optional<std::filesystem::path> model;
    TrainConfig train;
};

struct AttackerSection {
    Knowledge knowledge = Knowledge::gray_box;
    std::optional<Arch> surrogate_arch;
    std::optional<std::filesystem::path> surrogate_model;
};

struct AttackSection {
    AttackSpec spec;
    std::size_t samples = 0;
    std::uint64_t seed = 1;
    std::optional<std::filesystem::path> batch;
};

struct EvaluateSection {
    std::optional<std::string> preset;
    std::optional<std::filesystem::path> cache_dir;
    std::optional<std::filesystem::path> report;
};

struct RunConfig {
    RunSection run;
    VictimSection victim;
    AttackerSection attacker;
    AttackSection attack;
    EvaluateSection evaluate;

    // Canonical rendering, used for content hashes.
    std::string echo() const;
};

RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace keyperm
