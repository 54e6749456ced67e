#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "keyperm/binary_io.hpp"
#include "keyperm/data.hpp"
#include "keyperm/network.hpp"

namespace keyperm {

enum class AttackFamily : std::uint8_t { fgsm = 1, cw };
enum class Norm : std::uint8_t { l0 = 1, l2, linf };
enum class TargetMode : std::uint8_t { nontargeted = 1, targeted };
// How batch drivers pick the target class of a targeted attack.
enum class TargetRule : std::uint8_t { next = 1, random };

std::string to_string(AttackFamily f);
std::string to_string(Norm n);
std::string to_string(TargetMode m);
std::string to_string(TargetRule r);
AttackFamily parse_attack_family(const std::string& s);
Norm parse_norm(const std::string& s);
TargetMode parse_target_mode(const std::string& s);
TargetRule parse_target_rule(const std::string& s);

struct CSearch {
    double initial = 1e-3;
    double min = 1e-6;
    double max = 1e10;
    std::size_t steps = 9;
};

struct AttackSpec {
    AttackFamily family = AttackFamily::fgsm;
    Norm norm = Norm::l2;  // cw only
    TargetMode mode = TargetMode::nontargeted;
    TargetRule target_rule = TargetRule::next;
    double epsilon = 0.3;  // fgsm step
    double kappa = 0.0;
    CSearch c_search;
    std::size_t iterations = 1000;  // optimizer steps per c value
    double learning_rate = 1e-2;
    bool abort_early = true;
    double tau_decrease = 0.9;  // linf threshold shrink factor
    std::size_t max_rounds = 0; // l0 / linf outer rounds, 0 = until the attack stops on its own

    static AttackSpec fgsm_default();
    // l2: c from 1e-3, 9 bisection steps. linf: c from 1e-5 doubling to 20.
    // l0: c from 1e-3 doubling to 2e6.
    static AttackSpec cw_default(Norm norm);

    void validate() const;

    // One-line key=value rendering; parse_echo() inverts it.
    std::string echo() const;
    static AttackSpec parse_echo(const std::string& text);
};

struct DistortionNorms {
    double l0 = 0.0;
    double l2 = 0.0;
    double linf = 0.0;
};

struct CTrial {
    double c = 0.0;
    bool success = false;
};

struct AdversarialResult {
    Tensor adversarial_input;
    bool success = false;
    std::size_t achieved_class = 0;
    std::optional<std::size_t> target;
    DistortionNorms distortion_norms;
    std::size_t iterations = 0;  // forward/backward evaluations spent
    std::vector<CTrial> c_trace;
};

// l2 per the usual formula; p = 0 counts nonzero entries, p = inf is the max magnitude.
double lp_norm(const Tensor& delta, Norm p);
DistortionNorms distortion(const Tensor& original, const Tensor& adversarial);

// max(max_{j != t} Z_j - Z_t, -kappa)
double cw_objective_f(std::span<const double> logits, std::size_t target, double kappa);

struct CrossEntropyObjective {
    std::size_t label;
};
struct CwObjective {
    std::size_t target;
    double kappa;
};
using Objective = std::variant<CrossEntropyObjective, CwObjective>;

struct GradientResult {
    double value = 0.0;
    Tensor logits;    // [M]
    Tensor gradient;  // shaped like x
};

// Gradient of a scalar objective of the logits w.r.t. the input x.
// ReLU kinks take the zero subgradient.
GradientResult objective_gradient(const Network& net, const Tensor& x, const Objective& objective);
Tensor input_gradient(const Network& net, const Tensor& x, const Objective& objective);

// Non-targeted: x' = clip(x + eps sign(grad J(x, label))); targeted:
// x' = clip(x - eps sign(grad J(x, target))). `label` is the true class.
AdversarialResult fgsm(const Network& net, const Tensor& x, std::size_t label, const AttackSpec& spec,
                       std::optional<std::size_t> target = std::nullopt);

// Targeted CW attack in spec.norm. Success is re-checked on the returned
// tensor: decode == target, a margin of at least kappa (f == -kappa, so
// f <= 0 when kappa = 0), every entry in [0, 1].
AdversarialResult cw_attack(const Network& net, const Tensor& x, std::size_t target, const AttackSpec& spec);

// Runs the targeted attack against every class other than `label` and keeps
// the smallest-norm success.
AdversarialResult cw_attack_nontargeted(const Network& net, const Tensor& x, std::size_t label, const AttackSpec& spec);

// Target for sample `index` of a batch under the given rule.
std::size_t choose_target(TargetRule rule, std::size_t label, std::size_t classes, std::uint64_t seed,
                          std::uint64_t index);

struct AdversarialRecord {
    std::uint64_t index = 0;  // position in the source split
    std::uint8_t true_label = 0;
    std::int32_t target = -1; // -1 for non-targeted
    bool success = false;
    DistortionNorms norms;
    std::uint64_t iterations = 0;
    Tensor adversarial;
};

struct AdversarialBatch {
    AttackSpec spec;
    Shape item_shape;
    std::vector<AdversarialRecord> records;

    double success_rate() const;
    DistortionNorms mean_norms() const;
    Tensor stacked() const;  // [count, item_shape...]
};

using AttackProgress = std::function<void(std::size_t done, std::size_t total)>;

// Attacks the first `count` samples of `ds` (all when count == 0).
AdversarialBatch run_attack_batch(const Network& net, const LabeledDataset& ds, const AttackSpec& spec,
                                  std::size_t count = 0, std::uint64_t seed = 0, const AttackProgress& progress = {});

// Batch file (integers little-endian):
//   "PADV" | u32 version | u64 count | u32 rank | u32 dims... | string spec echo
//   per record: u64 index | u8 label | i32 target | u8 success | f64 l0, l2, linf | u64 iterations | f64 values
inline constexpr std::uint32_t kAdvFormatVersion = 1;

Bytes save_adversarial_batch(const AdversarialBatch& batch);
AdversarialBatch load_adversarial_batch(std::span<const std::uint8_t> bytes);

}  // namespace keyperm
