#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "keyperm/attacks.hpp"
#include "keyperm/data.hpp"
#include "keyperm/defence.hpp"
#include "keyperm/network.hpp"
#include "keyperm/train.hpp"

namespace keyperm {

enum class Knowledge { black_box, gray_box };
enum class VictimKind { classical, defended };

std::string to_string(Knowledge k);
std::string to_string(VictimKind v);
Knowledge parse_knowledge(const std::string& s);

// Maps a batch [N, C, H, W] to N predicted labels.
using BatchClassifier = std::function<std::vector<std::size_t>(const Tensor&)>;

BatchClassifier classical_classifier(const Network& net);
BatchClassifier defended_classifier(const DefendedClassifier& dc);

// 100 * fraction of samples whose prediction differs from the label.
double classification_error(const BatchClassifier& model, const LabeledDataset& ds);
double classification_error(const std::vector<std::size_t>& predicted, const std::vector<std::uint8_t>& labels);

// Everything needed to train one network deterministically. A defended
// recipe carries the key seed; attacker-side code only ever sees
// classical recipes.
struct ModelRecipe {
    Arch arch = Arch::cw_small;
    TrainConfig train;
    std::string data_fingerprint;
    std::optional<std::uint64_t> key_seed;

    std::string echo() const;
    std::string fingerprint() const;
};

// Trains (or loads from `cache_dir` when set) the network a recipe
// describes. Defended recipes permute the training data first.
Network obtain_model(const ModelRecipe& recipe, const LabeledDataset& train_set, const LabeledDataset& val_set,
                     const std::optional<std::filesystem::path>& cache_dir,
                     const std::function<void(const std::string&)>& log = {});

struct ThreatScenario {
    Knowledge knowledge = Knowledge::gray_box;
    Arch surrogate_arch = Arch::cw_small;
    AttackSpec spec;
    VictimKind victim = VictimKind::classical;
    Arch victim_arch = Arch::cw_small;
    std::string dataset;
    std::size_t samples = 0;
    std::uint64_t attack_seed = 0;

    // gray-box surrogate must share the victim architecture
    void validate() const;
};

struct TransferOutcome {
    AdversarialBatch batch;
    double attacked_error = 0.0;
    std::size_t n = 0;
};

// Test-only hook run inside the attacker scope, used to inject leaks.
using AttackerHook = std::function<void()>;

// Crafts adversarial examples against `surrogate` inside an AttackerScope,
// then scores `victim` on them outside it.
TransferOutcome run_transfer_attack(const ThreatScenario& scenario, const Network& surrogate,
                                    const LabeledDataset& samples, const BatchClassifier& victim,
                                    const AttackerHook& hook = {});

// Attacked error of a victim on a stored adversarial batch; labels are the
// batch's own true labels.
double attacked_error(const BatchClassifier& victim, const AdversarialBatch& batch);

struct EvalCell {
    std::string dataset;
    std::string attack;   // "CW l2", "CW l0", "CW linf", "FGSM"
    std::string victim;   // classical / defended
    std::string knowledge;
    std::string surrogate;
    std::string victim_arch;
    double clean = 0.0;
    std::size_t clean_n = 0;
    double attacked = 0.0;
    std::size_t attacked_n = 0;
    double attack_success = 0.0;  // on the surrogate, percent
    std::uint64_t train_seed = 0;
    std::optional<std::uint64_t> key_seed;
    std::uint64_t attack_seed = 0;
    std::string spec_echo;
    std::string model_fingerprint;
    std::string key_fingerprint;
    double seconds = 0.0;
};

struct InvariantCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct EvalReport {
    std::string preset;
    std::string scale;  // human-readable sizes / epochs
    std::string config_hash;
    std::vector<EvalCell> cells;
    std::vector<InvariantCheck> invariants;
    double seconds = 0.0;

    bool invariants_hold() const;
    const EvalCell* find(const std::string& dataset, const std::string& attack, const std::string& victim) const;

    // Aligned table with the Table-3 layout; the json form keeps every field.
    std::string to_text() const;
    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
};

struct Table3Row {
    std::string label;
    Arch arch = Arch::cw_small;
    AttackSpec spec;
    std::size_t samples = 0;  // attacked samples, 0 = the whole test head
};

struct Table3Config {
    std::string preset = "custom";
    std::vector<std::string> datasets{"mnist"};
    // "synthetic" datasets are generated from the seeds instead of read
    std::optional<std::filesystem::path> data_dir;
    SplitSizes sizes;
    TrainConfig train;
    std::uint64_t key_seed = 1;
    std::uint64_t attack_seed = 1;
    Knowledge knowledge = Knowledge::gray_box;
    std::vector<Table3Row> rows;
    std::optional<std::filesystem::path> cache_dir;
    // at full scale the defended/classical attacked gap must exceed this
    std::optional<double> min_gap;
    double max_clean_cost = 5.0;
    std::function<void(const std::string&)> log;

    std::string echo() const;
};

// 8000 / 1000 / 500 samples, 3 epochs, reduced CW budgets.
Table3Config desk_preset();
// 55000 / 5000 / 1000 samples, 10 epochs, full CW budgets.
Table3Config full_preset();
// Tiny synthetic grid for smoke tests.
Table3Config smoke_preset();
Table3Config preset_by_name(const std::string& name);

struct DatasetSplits {
    LabeledDataset train;
    LabeledDataset val;
    LabeledDataset test;
    std::string fingerprint;
};

DatasetSplits load_splits(const std::string& dataset, const std::optional<std::filesystem::path>& data_dir,
                          const SplitSizes& sizes, std::uint64_t seed);

std::string dataset_fingerprint(const LabeledDataset& ds);

EvalReport reproduce_table3(const Table3Config& cfg);

// Applies the ordering, clean-cost and (optionally) gap invariants.
std::vector<InvariantCheck> check_invariants(const std::vector<EvalCell>& cells, double max_clean_cost,
                                             std::optional<double> min_gap);

}  // namespace keyperm
