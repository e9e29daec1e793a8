#include "fragmix/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace fragmix::io {

void ByteWriter::write_file(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f.write(out_.data(), static_cast<std::streamsize>(out_.size()));
    if (!f) throw IoError("short write to '" + path.string() + "'");
}

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<char> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(data));
}

void ByteReader::need(std::size_t n, std::string_view field) {
    if (remaining() < n) {
        throw FormatError("truncated input while reading " + std::string(field) + " (need " + std::to_string(n) +
                              " bytes, " + std::to_string(remaining()) + " left)",
                          pos_);
    }
}

void ByteReader::expect_magic(std::string_view magic, std::string_view what) {
    need(magic.size(), std::string(what) + " magic");
    if (std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0) {
        throw FormatError("bad magic for " + std::string(what), pos_);
    }
    pos_ += magic.size();
}

void ByteReader::f64s(std::span<double> out, std::string_view field) {
    need(out.size_bytes(), field);
    std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
}

std::string ByteReader::string32(std::string_view field) {
    const std::uint32_t n = u32(field);
    need(n, field);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
}

void ByteReader::expect_end(std::string_view what) {
    if (remaining() != 0) {
        throw FormatError(std::to_string(remaining()) + " trailing bytes after " + std::string(what), pos_);
    }
}

}  // namespace fragmix::io
