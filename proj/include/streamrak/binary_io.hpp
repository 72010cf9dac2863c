#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "streamrak/common.hpp"

namespace streamrak::io {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts need byte swapping");

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}

    void magic(const char (&tag)[5]) { bytes(tag, 4); }

    template <typename T>
    void put(T value) {
        static_assert(std::is_arithmetic_v<T>);
        bytes(&value, sizeof value);
    }

    void doubles(const double* data, std::size_t count) { bytes(data, count * sizeof(double)); }

    void bytes(const void* data, std::size_t n) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
        if (!out_) throw FormatError("write failed");
    }

private:
    std::ostream& out_;
};

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    void expect_magic(const char (&tag)[5]) {
        std::array<char, 4> got{};
        bytes(got.data(), 4);
        if (std::memcmp(got.data(), tag, 4) != 0) {
            fail("bad magic, expected `" + std::string(tag, 4) + "`", offset_ - 4);
        }
    }

    template <typename T>
    T get() {
        static_assert(std::is_arithmetic_v<T>);
        T value{};
        bytes(&value, sizeof value);
        return value;
    }

    void doubles(double* data, std::size_t count) { bytes(data, count * sizeof(double)); }

    void bytes(void* data, std::size_t n) {
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated input", offset_);
        offset_ += n;
    }

    /// True when the stream is exhausted (does not consume).
    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

    std::uint64_t offset() const { return offset_; }

    [[noreturn]] void fail(const std::string& what, std::uint64_t at) const {
        throw FormatError(what + " at byte offset " + std::to_string(at));
    }

private:
    std::istream& in_;
    std::uint64_t offset_ = 0;
};

}  // namespace streamrak::io
