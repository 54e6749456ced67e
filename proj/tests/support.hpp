#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include "keyperm/rng.hpp"
#include "keyperm/tensor.hpp"

namespace keyperm::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    Tensor t(shape);
    for (auto& v : t.values()) v = lo + (hi - lo) * rng.uniform();
    return t;
}

// |a - b| / max(|a|, |b|, floor)
inline double rel_error(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline std::filesystem::path fixture(const std::string& name) {
    return std::filesystem::path(KEYPERM_FIXTURE_DIR) / name;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("keyperm-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace keyperm::testing
