#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace keyperm {

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
public:
    void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void text(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32_be(std::uint32_t v);
    void u64_be(std::uint64_t v);
    void u32_le(std::uint32_t v);
    void u64_le(std::uint64_t v);
    void f64_le(double v);
    void string_le(std::string_view s);  // u32 length + bytes

    const Bytes& buffer() const noexcept { return buf_; }
    Bytes take() { return std::move(buf_); }

private:
    Bytes buf_;
};

// Bounds-checked cursor. Every read past the end raises FormatError
// carrying the offset of the failed read.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint64_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

    void expect_magic(std::string_view magic, std::string_view what);
    std::span<const std::uint8_t> bytes(std::size_t n);
    std::uint8_t u8();
    std::uint32_t u32_be();
    std::uint64_t u64_be();
    std::uint32_t u32_le();
    std::uint64_t u64_le();
    double f64_le();
    std::string string_le(std::size_t max_len = 1u << 20);
    void expect_end(std::string_view what) const;

private:
    void need(std::size_t n) const;

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);

}  // namespace keyperm
