#include "keyperm/binary_io.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

#include "keyperm/error.hpp"

namespace keyperm {

void ByteWriter::u32_be(std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
}

void ByteWriter::u64_be(std::uint64_t v) {
    for (int s = 56; s >= 0; s -= 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
}

void ByteWriter::u32_le(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
}

void ByteWriter::u64_le(std::uint64_t v) {
    for (int s = 0; s < 64; s += 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
}

void ByteWriter::f64_le(double v) {
    u64_le(std::bit_cast<std::uint64_t>(v));
}

void ByteWriter::string_le(std::string_view s) {
    u32_le(static_cast<std::uint32_t>(s.size()));
    text(s);
}

void ByteReader::need(std::size_t n) const {
    if (remaining() < n)
        throw FormatError("truncated data: need " + std::to_string(n) + " bytes, " + std::to_string(remaining()) +
                              " left",
                          pos_);
}

void ByteReader::expect_magic(std::string_view magic, std::string_view what) {
    const auto start = pos_;
    auto b = bytes(magic.size());
    if (!std::equal(b.begin(), b.end(), magic.begin(), [](std::uint8_t x, char c) { return x == static_cast<std::uint8_t>(c); }))
        throw FormatError("bad magic for " + std::string(what) + " (expected '" + std::string(magic) + "')", start);
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
}

std::uint8_t ByteReader::u8() {
    need(1);
    return data_[pos_++];
}

std::uint32_t ByteReader::u32_be() {
    auto b = bytes(4);
    std::uint32_t v = 0;
    for (auto x : b) v = (v << 8) | x;
    return v;
}

std::uint64_t ByteReader::u64_be() {
    auto b = bytes(8);
    std::uint64_t v = 0;
    for (auto x : b) v = (v << 8) | x;
    return v;
}

std::uint32_t ByteReader::u32_le() {
    auto b = bytes(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
}

std::uint64_t ByteReader::u64_le() {
    auto b = bytes(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
}

double ByteReader::f64_le() {
    return std::bit_cast<double>(u64_le());
}

std::string ByteReader::string_le(std::size_t max_len) {
    const auto start = pos_;
    const std::uint32_t n = u32_le();
    if (n > max_len) throw FormatError("string length " + std::to_string(n) + " exceeds limit", start);
    auto b = bytes(n);
    return std::string(b.begin(), b.end());
}

void ByteReader::expect_end(std::string_view what) const {
    if (remaining() != 0)
        throw FormatError(std::to_string(remaining()) + " trailing bytes after " + std::string(what), pos_);
}

Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error while reading '" + path.string() + "'");
    return data;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

}  // namespace keyperm
