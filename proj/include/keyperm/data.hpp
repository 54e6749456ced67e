#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "keyperm/tensor.hpp"

namespace keyperm {

// Images [n, 1, 28, 28] with values in [0, 1]; labels in [0, 10).
struct LabeledDataset {
    Tensor images;
    std::vector<std::uint8_t> labels;
    std::string provenance;

    std::size_t size() const noexcept { return labels.size(); }
    Tensor image(std::size_t i) const;
    LabeledDataset slice(std::size_t begin, std::size_t count, const std::string& note) const;
    void validate() const;
};

// Reads an IDX image/label pair (raw or gzip). Pixel bytes are divided by 255.
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

enum class SplitKind { train, val, test_head };

struct SplitSizes {
    std::size_t train = 55000;
    std::size_t val = 5000;
    std::size_t test_head = 1000;
};

// train: first `train` samples of the training file; val: last `val`
// samples of the training file; test_head: first `test_head` samples of
// the test file. Order is preserved.
LabeledDataset canonical_split(const LabeledDataset& ds, SplitKind kind, const SplitSizes& sizes = {});

enum class SyntheticKind { two_gaussians, striped_digits };

SyntheticKind parse_synthetic_kind(const std::string& name);

// two_gaussians: two classes of noisy blobs on opposite halves of the frame.
// striped_digits: ten classes of sinusoidal gratings (5 orientations x 2
// frequencies) with random phase and pixel noise.
// Labels cycle 0, 1, ..., so class counts differ by at most one.
LabeledDataset synthetic_dataset(std::uint64_t seed, std::size_t n, SyntheticKind kind);

inline constexpr const char* kDataDirEnv = "KEYPERM_DATA_DIR";

// CLI flag first, then $KEYPERM_DATA_DIR.
std::filesystem::path resolve_data_dir(const std::optional<std::string>& flag);

struct IdxFiles {
    std::filesystem::path images;
    std::filesystem::path labels;
};

// Looks for <dir>/<dataset>/<stem>[.gz] and then <dir>/<stem>[.gz], where
// stem is train-images-idx3-ubyte etc. Missing files raise IoError with
// the candidate paths listed.
IdxFiles find_idx_files(const std::filesystem::path& dir, const std::string& dataset, bool train);

}  // namespace keyperm
