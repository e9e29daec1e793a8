#pragma once

// Little-endian readers/writers shared by the token, position and checkpoint
// formats. Parse failures carry the byte offset where decoding stopped.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fragmix::io {

class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class ByteWriter {
public:
    void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void f64s(std::span<const double> v) { raw(v.data(), v.size_bytes()); }
    void string32(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }

    const std::vector<char>& buffer() const noexcept { return out_; }
    void write_file(const std::filesystem::path& path) const;

private:
    void raw(const void* p, std::size_t n) {
        const char* c = static_cast<const char*>(p);
        out_.insert(out_.end(), c, c + n);
    }
    std::vector<char> out_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<char> data) : data_(std::move(data)) {}
    static ByteReader from_file(const std::filesystem::path& path);

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

    void expect_magic(std::string_view magic, std::string_view what);
    std::uint8_t u8(std::string_view field) { return read<std::uint8_t>(field); }
    std::uint32_t u32(std::string_view field) { return read<std::uint32_t>(field); }
    std::uint64_t u64(std::string_view field) { return read<std::uint64_t>(field); }
    double f64(std::string_view field) { return read<double>(field); }
    void f64s(std::span<double> out, std::string_view field);
    std::string string32(std::string_view field);
    void expect_end(std::string_view what);

private:
    template <class T>
    T read(std::string_view field) {
        need(sizeof(T), field);
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void need(std::size_t n, std::string_view field);

    std::vector<char> data_;
    std::size_t pos_ = 0;
};

}  // namespace fragmix::io
