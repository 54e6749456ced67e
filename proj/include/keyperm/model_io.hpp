#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "keyperm/binary_io.hpp"
#include "keyperm/network.hpp"

namespace keyperm {

// Model file layout (all integers little-endian):
//   "PCLK" | u32 version | u8 arch | u32 C, H, W | u32 classes | u32 layer count
//   per layer: u8 kind | u32 stride | u32 padding | u32 pool | f64 dropout rate | u8 has_params
//     when has_params: weights, then bias, each as u32 rank | u32 dims... | f64 values
inline constexpr std::uint32_t kModelFormatVersion = 1;

Bytes save_model(const Network& net);
Network load_model(std::span<const std::uint8_t> bytes);

void save_model_file(const Network& net, const std::filesystem::path& path);
Network load_model_file(const std::filesystem::path& path);

}  // namespace keyperm
