#include "keyperm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>

#include <zlib.h>

#include "keyperm/binary_io.hpp"
#include "keyperm/error.hpp"
#include "keyperm/rng.hpp"

namespace keyperm {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr std::size_t kSide = 28;

Bytes gunzip(const Bytes& compressed, const std::string& name) {
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw IoError("zlib init failed for '" + name + "'");
    zs.next_in = const_cast<Bytef*>(compressed.data());
    zs.avail_in = static_cast<uInt>(compressed.size());
    Bytes out;
    std::uint8_t chunk[1 << 16];
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = chunk;
        zs.avail_out = sizeof(chunk);
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            const auto at = zs.total_in;
            inflateEnd(&zs);
            throw FormatError("corrupt gzip stream in '" + name + "'", at);
        }
        out.insert(out.end(), chunk, chunk + (sizeof(chunk) - zs.avail_out));
        if (rc != Z_STREAM_END && zs.avail_in == 0 && zs.avail_out != 0) {
            const auto at = zs.total_in;
            inflateEnd(&zs);
            throw FormatError("truncated gzip stream in '" + name + "'", at);
        }
    }
    inflateEnd(&zs);
    return out;
}

Bytes read_maybe_gzip(const std::filesystem::path& path) {
    Bytes raw = read_file(path);
    if (raw.size() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b) return gunzip(raw, path.string());
    return raw;
}

}  // namespace

Tensor LabeledDataset::image(std::size_t i) const {
    return images.rows(i, 1).reshaped(images.item_shape());
}

LabeledDataset LabeledDataset::slice(std::size_t begin, std::size_t count, const std::string& note) const {
    if (begin + count > size())
        throw ConfigError("dataset slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                          ") out of range for " + std::to_string(size()) + " samples");
    LabeledDataset out;
    out.provenance = provenance + "; " + note;
    if (count == 0) return out;
    out.images = images.rows(begin, count);
    out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                      labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
    return out;
}

void LabeledDataset::validate() const {
    if (images.rank() != 4 || images.dim(0) != labels.size())
        throw InvariantError("dataset holds " + shape_str(images.shape()) + " images for " +
                             std::to_string(labels.size()) + " labels");
    for (double v : images.values())
        if (!(v >= 0.0 && v <= 1.0)) throw InvariantError("dataset pixel outside [0, 1]");
    for (auto l : labels)
        if (l >= 10) throw InvariantError("dataset label " + std::to_string(l) + " outside [0, 10)");
}

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const Bytes img = read_maybe_gzip(images_path);
    const Bytes lab = read_maybe_gzip(labels_path);

    ByteReader ir(img);
    const auto magic_at = ir.offset();
    if (ir.u32_be() != kImageMagic)
        throw FormatError("'" + images_path.string() + "' is not an IDX image file (magic != 0x00000803)", magic_at);
    const std::uint32_t n = ir.u32_be();
    const auto rows_at = ir.offset();
    const std::uint32_t rows = ir.u32_be();
    const std::uint32_t cols = ir.u32_be();
    if (rows != kSide || cols != kSide)
        throw FormatError("'" + images_path.string() + "' holds " + std::to_string(rows) + "x" + std::to_string(cols) +
                              " images, expected 28x28",
                          rows_at);
    if (n == 0) throw FormatError("'" + images_path.string() + "' declares zero images", 4);
    const std::size_t payload = static_cast<std::size_t>(n) * kSide * kSide;
    if (ir.remaining() != payload)
        throw FormatError("'" + images_path.string() + "' payload is " + std::to_string(ir.remaining()) +
                              " bytes, header implies " + std::to_string(payload),
                          ir.offset() + std::min<std::size_t>(ir.remaining(), payload));

    ByteReader lr(lab);
    if (lr.u32_be() != kLabelMagic)
        throw FormatError("'" + labels_path.string() + "' is not an IDX label file (magic != 0x00000801)", 0);
    const auto count_at = lr.offset();
    const std::uint32_t nl = lr.u32_be();
    if (nl != n)
        throw FormatError("label count " + std::to_string(nl) + " in '" + labels_path.string() +
                              "' does not match image count " + std::to_string(n),
                          count_at);
    if (lr.remaining() != n)
        throw FormatError("'" + labels_path.string() + "' payload is " + std::to_string(lr.remaining()) +
                              " bytes, header implies " + std::to_string(n),
                          lr.offset() + std::min<std::size_t>(lr.remaining(), n));

    LabeledDataset ds;
    std::vector<double> pixels(payload);
    auto raw = ir.bytes(payload);
    for (std::size_t i = 0; i < payload; ++i) pixels[i] = static_cast<double>(raw[i]) / 255.0;
    ds.images = Tensor({n, 1, kSide, kSide}, std::move(pixels));
    auto rawl = lr.bytes(n);
    ds.labels.assign(rawl.begin(), rawl.end());
    for (std::size_t i = 0; i < ds.labels.size(); ++i)
        if (ds.labels[i] >= 10) throw FormatError("label " + std::to_string(ds.labels[i]) + " outside [0, 10)", 8 + i);
    ds.provenance = images_path.filename().string() + " (bytes / 255)";
    return ds;
}

LabeledDataset canonical_split(const LabeledDataset& ds, SplitKind kind, const SplitSizes& sizes) {
    switch (kind) {
        case SplitKind::train:
        case SplitKind::val:
            if (sizes.train + sizes.val > ds.size())
                throw ConfigError("training file has " + std::to_string(ds.size()) + " samples, split needs " +
                                  std::to_string(sizes.train) + " + " + std::to_string(sizes.val));
            if (kind == SplitKind::train) return ds.slice(0, sizes.train, "train split [0, " + std::to_string(sizes.train) + ")");
            return ds.slice(ds.size() - sizes.val, sizes.val,
                            "val split [" + std::to_string(ds.size() - sizes.val) + ", " + std::to_string(ds.size()) + ")");
        case SplitKind::test_head:
            if (sizes.test_head > ds.size())
                throw ConfigError("test file has " + std::to_string(ds.size()) + " samples, test head needs " +
                                  std::to_string(sizes.test_head));
            return ds.slice(0, sizes.test_head, "test head [0, " + std::to_string(sizes.test_head) + ")");
    }
    throw ConfigError("unknown split kind");
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
    if (name == "two-gaussians") return SyntheticKind::two_gaussians;
    if (name == "striped-digits") return SyntheticKind::striped_digits;
    throw ConfigError("unknown synthetic dataset '" + name + "' (expected two-gaussians or striped-digits)");
}

LabeledDataset synthetic_dataset(std::uint64_t seed, std::size_t n, SyntheticKind kind) {
    if (n < 2) throw ConfigError("synthetic dataset needs at least 2 samples");
    Rng rng(seed);
    const std::size_t classes = kind == SyntheticKind::two_gaussians ? 2 : 10;
    std::vector<double> pixels(n * kSide * kSide);
    std::vector<std::uint8_t> labels(n);
    for (std::size_t s = 0; s < n; ++s) {
        const auto label = static_cast<std::uint8_t>(s % classes);
        labels[s] = label;
        double* img = pixels.data() + s * kSide * kSide;
        if (kind == SyntheticKind::two_gaussians) {
            const double cx = label == 0 ? 8.0 : 20.0;
            const double cy = 14.0;
            for (std::size_t y = 0; y < kSide; ++y)
                for (std::size_t x = 0; x < kSide; ++x) {
                    const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                    const double mean = 0.8 * std::exp(-(dx * dx + dy * dy) / (2.0 * 16.0));
                    img[y * kSide + x] = std::clamp(mean + 0.1 * rng.normal(), 0.0, 1.0);
                }
        } else {
            const double theta = static_cast<double>(label % 5) * std::numbers::pi / 5.0;
            const double cycles = label < 5 ? 2.0 : 4.0;
            const double phase = 2.0 * std::numbers::pi * rng.uniform();
            const double c = std::cos(theta), sn = std::sin(theta);
            for (std::size_t y = 0; y < kSide; ++y)
                for (std::size_t x = 0; x < kSide; ++x) {
                    const double u = static_cast<double>(x) * c + static_cast<double>(y) * sn;
                    const double v = 0.5 + 0.4 * std::sin(2.0 * std::numbers::pi * cycles * u / kSide + phase);
                    img[y * kSide + x] = std::clamp(v + 0.05 * rng.normal(), 0.0, 1.0);
                }
        }
    }
    LabeledDataset ds;
    ds.images = Tensor({n, 1, kSide, kSide}, std::move(pixels));
    ds.labels = std::move(labels);
    ds.provenance = std::string("synthetic ") + (kind == SyntheticKind::two_gaussians ? "two-gaussians" : "striped-digits") +
                    " seed=" + std::to_string(seed) + " n=" + std::to_string(n);
    return ds;
}

std::filesystem::path resolve_data_dir(const std::optional<std::string>& flag) {
    if (flag && !flag->empty()) return *flag;
    if (const char* env = std::getenv(kDataDirEnv); env && *env) return env;
    throw ConfigError(std::string("no dataset directory: pass --data-dir or set ") + kDataDirEnv);
}

IdxFiles find_idx_files(const std::filesystem::path& dir, const std::string& dataset, bool train) {
    const std::string prefix = train ? "train" : "t10k";
    const std::string stems[2] = {prefix + "-images-idx3-ubyte", prefix + "-labels-idx1-ubyte"};
    std::filesystem::path found[2];
    std::string tried;
    for (int k = 0; k < 2; ++k) {
        for (const auto& base : {dir / dataset, dir}) {
            for (const std::string ext : {"", ".gz"}) {
                auto p = base / (stems[k] + ext);
                if (found[k].empty() && std::filesystem::is_regular_file(p)) found[k] = p;
                if (found[k].empty()) tried += "\n  " + p.string();
            }
        }
        if (found[k].empty())
            throw IoError("dataset '" + dataset + "' file " + stems[k] + " not found; looked for:" + tried +
                          "\nplace the official IDX files there or point " + kDataDirEnv + " / --data-dir at them");
    }
    return {found[0], found[1]};
}

}  // namespace keyperm
