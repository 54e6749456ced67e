#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "keyperm/binary_io.hpp"
#include "keyperm/data.hpp"
#include "keyperm/network.hpp"

namespace keyperm {

// Secret material of the defended classifier.
//
// The key vector is `dim` i.i.d. N(0, 1) draws taken in order from
// Rng(seed).normal(). The pixel permutation is the stable ascending argsort
// of that vector (equal values keep their original index order), and
// inverse_permutation[permutation[i]] == i.
class SecretKey {
public:
    static SecretKey generate(std::uint64_t seed, std::size_t dim);

    // Builds a key around an explicit vector. Used for hand-made keys in
    // tests; the seed is informational only.
    static SecretKey from_vector(std::vector<double> key_vector, std::uint64_t seed = 0);

    std::uint64_t seed() const noexcept { return seed_; }
    std::size_t dim() const noexcept { return key_vector_.size(); }
    std::span<const double> key_vector() const noexcept { return key_vector_; }
    std::span<const std::size_t> permutation() const noexcept { return permutation_; }
    std::span<const std::size_t> inverse_permutation() const noexcept { return inverse_; }

    friend bool operator==(const SecretKey&, const SecretKey&) = default;

private:
    SecretKey() = default;

    std::uint64_t seed_ = 0;
    std::vector<double> key_vector_;
    std::vector<std::size_t> permutation_;
    std::vector<std::size_t> inverse_;
};

SecretKey keygen(std::uint64_t seed, std::size_t dim);

// Indices that sort `values` ascending; ties keep index order.
std::vector<std::size_t> stable_argsort(std::span<const double> values);

// out[i] = flat(x)[permutation[i]], reshaped like x. A batch [N, ...] whose
// item size equals the key dimension is permuted item by item.
Tensor apply_transform(const SecretKey& key, const Tensor& x);
Tensor invert_transform(const SecretKey& key, const Tensor& x);
LabeledDataset apply_transform(const SecretKey& key, const LabeledDataset& ds);

// Key file: "PKEY" | u32 version | u32 dim | u64 seed, all big-endian.
// Only the seed is stored; vector and permutation are re-derived on load.
inline constexpr std::uint32_t kKeyFormatVersion = 1;

Bytes save_key(const SecretKey& key);
SecretKey load_key(std::span<const std::uint8_t> bytes);

// Writes the key file with owner-only permissions. Refuses to replace an
// existing file unless `overwrite` is set.
void save_key_file(const SecretKey& key, const std::filesystem::path& path, bool overwrite = false);

// Defender-side only: raises ProtocolViolation inside an AttackerScope.
SecretKey load_key_file(const std::filesystem::path& path);

// Marks the current thread as running attacker-side code for the lifetime
// of the object. Any defender-only access (key file reads, key extraction
// from a DefendedClassifier) in that window raises ProtocolViolation.
class AttackerScope {
public:
    explicit AttackerScope(std::string label);
    ~AttackerScope();
    AttackerScope(const AttackerScope&) = delete;
    AttackerScope& operator=(const AttackerScope&) = delete;

    static bool active() noexcept;
    static std::string current_label();

private:
    std::string previous_;
};

void require_defender_side(std::string_view what);

// D(x) = argmax E(P(x, k)): the network only ever sees permuted inputs.
class DefendedClassifier {
public:
    DefendedClassifier(SecretKey key, Network net);

    const Network& network() const noexcept { return net_; }
    const SecretKey& key() const;  // defender side only

    std::size_t classify(const Tensor& x) const;
    std::vector<std::size_t> classify_batch(const Tensor& xs) const;

private:
    SecretKey key_;
    Network net_;
};

std::size_t defended_classify(const DefendedClassifier& dc, const Tensor& x);

struct EntropyReport {
    std::size_t dim = 0;
    double key_entropy_nats = 0.0;   // dim * 0.5 * ln(2 pi e), differential entropy of the key vector
    std::size_t samples = 0;
    std::size_t bins = 0;
    double data_entropy_nats = 0.0;  // sum of per-pixel plug-in histogram entropies
    bool violation = false;          // key entropy below the data estimate

    std::string to_text() const;
};

// The two numbers live on different scales (differential vs discrete
// entropy); the report surfaces both and flags key < data.
EntropyReport key_entropy_report(const SecretKey& key, const Tensor& data_sample, std::size_t bins = 256);

}  // namespace keyperm
