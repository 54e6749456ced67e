#include "keyperm/defence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "keyperm/error.hpp"
#include "keyperm/rng.hpp"

namespace keyperm {

namespace {

thread_local std::string t_attacker_label;

enum class Direction { forward, inverse };

Tensor permute(const SecretKey& key, const Tensor& x, Direction dir) {
    const std::size_t d = key.dim();
    std::size_t items = 0;
    if (x.size() == d) {
        items = 1;
    } else if (x.rank() >= 2 && x.size() / x.dim(0) == d) {
        items = x.dim(0);
    } else {
        throw ConfigError("input " + shape_str(x.shape()) + " has " + std::to_string(x.size()) +
                          " values per item, key dimension is " + std::to_string(d));
    }
    auto idx = dir == Direction::forward ? key.permutation() : key.inverse_permutation();
    Tensor out(x.shape());
    for (std::size_t n = 0; n < items; ++n) {
        const double* src = x.data() + n * d;
        double* dst = out.data() + n * d;
        for (std::size_t i = 0; i < d; ++i) dst[i] = src[idx[i]];
    }
    return out;
}

}  // namespace

std::vector<std::size_t> stable_argsort(std::span<const double> values) {
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    return idx;
}

SecretKey SecretKey::from_vector(std::vector<double> key_vector, std::uint64_t seed) {
    if (key_vector.empty()) throw ConfigError("key dimension must be >= 1");
    for (double v : key_vector)
        if (!std::isfinite(v)) throw ConfigError("key vector holds a non-finite value");
    SecretKey k;
    k.seed_ = seed;
    k.key_vector_ = std::move(key_vector);
    k.permutation_ = stable_argsort(k.key_vector_);
    k.inverse_.assign(k.permutation_.size(), 0);
    for (std::size_t i = 0; i < k.permutation_.size(); ++i) k.inverse_[k.permutation_[i]] = i;
    return k;
}

SecretKey SecretKey::generate(std::uint64_t seed, std::size_t dim) {
    if (dim == 0) throw ConfigError("key dimension must be >= 1");
    Rng rng(seed);
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    return from_vector(std::move(v), seed);
}

SecretKey keygen(std::uint64_t seed, std::size_t dim) {
    return SecretKey::generate(seed, dim);
}

Tensor apply_transform(const SecretKey& key, const Tensor& x) {
    return permute(key, x, Direction::forward);
}

Tensor invert_transform(const SecretKey& key, const Tensor& x) {
    return permute(key, x, Direction::inverse);
}

LabeledDataset apply_transform(const SecretKey& key, const LabeledDataset& ds) {
    LabeledDataset out;
    out.images = apply_transform(key, ds.images);
    out.labels = ds.labels;
    out.provenance = ds.provenance + "; key-permuted";
    return out;
}

Bytes save_key(const SecretKey& key) {
    if (key.dim() > 0xFFFFFFFFu) throw ConfigError("key dimension does not fit the key file format");
    ByteWriter w;
    w.text("PKEY");
    w.u32_be(kKeyFormatVersion);
    w.u32_be(static_cast<std::uint32_t>(key.dim()));
    w.u64_be(key.seed());
    return w.take();
}

SecretKey load_key(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic("PKEY", "key file");
    const auto ver_at = r.offset();
    const std::uint32_t version = r.u32_be();
    if (version != kKeyFormatVersion) throw FormatError("unsupported key format version " + std::to_string(version), ver_at);
    const auto dim_at = r.offset();
    const std::uint32_t dim = r.u32_be();
    if (dim == 0) throw FormatError("key dimension is zero", dim_at);
    const std::uint64_t seed = r.u64_be();
    r.expect_end("key file");
    return SecretKey::generate(seed, dim);
}

void save_key_file(const SecretKey& key, const std::filesystem::path& path, bool overwrite) {
    if (!overwrite && std::filesystem::exists(path))
        throw ConfigError("refusing to overwrite existing key file '" + path.string() + "' (use --force)");
    write_file(path, save_key(key));
    std::filesystem::permissions(path, std::filesystem::perms::owner_read | std::filesystem::perms::owner_write,
                                 std::filesystem::perm_options::replace);
}

SecretKey load_key_file(const std::filesystem::path& path) {
    require_defender_side("read key file '" + path.string() + "'");
    Bytes b = read_file(path);
    try {
        return load_key(b);
    } catch (const FormatError& e) {
        throw FormatError("'" + path.string() + "': " + e.what(), e.offset());
    }
}

AttackerScope::AttackerScope(std::string label) : previous_(t_attacker_label) {
    t_attacker_label = label.empty() ? std::string("attacker") : std::move(label);
}

AttackerScope::~AttackerScope() {
    t_attacker_label = previous_;
}

bool AttackerScope::active() noexcept {
    return !t_attacker_label.empty();
}

std::string AttackerScope::current_label() {
    return t_attacker_label;
}

void require_defender_side(std::string_view what) {
    if (AttackerScope::active())
        throw ProtocolViolation("protocol violation: attacker-side code (" + t_attacker_label + ") attempted to " +
                                std::string(what));
}

DefendedClassifier::DefendedClassifier(SecretKey key, Network net) : key_(std::move(key)), net_(std::move(net)) {
    if (key_.dim() != net_.input_size())
        throw ConfigError("key dimension " + std::to_string(key_.dim()) + " does not match network input " +
                          shape_str(net_.input_shape()));
}

const SecretKey& DefendedClassifier::key() const {
    require_defender_side("extract the secret key from a defended classifier");
    return key_;
}

std::size_t DefendedClassifier::classify(const Tensor& x) const {
    return decode(net_, apply_transform(key_, x));
}

std::vector<std::size_t> DefendedClassifier::classify_batch(const Tensor& xs) const {
    return decode_batch(net_, apply_transform(key_, net_.as_batch(xs)));
}

std::size_t defended_classify(const DefendedClassifier& dc, const Tensor& x) {
    return dc.classify(x);
}

std::string EntropyReport::to_text() const {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "key dimension            %zu\n"
                  "key entropy (nats)       %.4f  (differential, i.i.d. N(0,1))\n"
                  "data samples             %zu\n"
                  "data entropy (nats)      %.4f  (sum of per-pixel plug-in estimates, %zu bins)\n"
                  "violation                %s\n",
                  dim, key_entropy_nats, samples, data_entropy_nats, bins, violation ? "yes" : "no");
    return buf;
}

EntropyReport key_entropy_report(const SecretKey& key, const Tensor& data_sample, std::size_t bins) {
    if (bins < 2) throw ConfigError("entropy histogram needs at least 2 bins");
    EntropyReport rep;
    rep.dim = key.dim();
    rep.bins = bins;
    rep.key_entropy_nats = static_cast<double>(key.dim()) * 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);

    const std::size_t n = data_sample.rank() >= 2 ? data_sample.dim(0) : 1;
    const std::size_t per_item = data_sample.size() / n;
    rep.samples = n;
    std::vector<std::size_t> counts(bins);
    double total = 0.0;
    for (std::size_t p = 0; p < per_item; ++p) {
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t s = 0; s < n; ++s) {
            const double v = std::clamp(data_sample[s * per_item + p], 0.0, 1.0);
            auto b = static_cast<std::size_t>(v * static_cast<double>(bins));
            counts[std::min(b, bins - 1)] += 1;
        }
        for (auto c : counts) {
            if (c == 0) continue;
            const double q = static_cast<double>(c) / static_cast<double>(n);
            total -= q * std::log(q);
        }
    }
    rep.data_entropy_nats = total;
    rep.violation = rep.key_entropy_nats < rep.data_entropy_nats;
    return rep;
}

}  // namespace keyperm
