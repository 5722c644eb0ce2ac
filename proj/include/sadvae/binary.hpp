#pragma once

// Little-endian byte packing shared by every on-disk format.

#include "sadvae/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

namespace sadvae::binary {

class Writer {
public:
    void bytes(std::string_view s) { buf_.append(s); }

    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
        }
    }

    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
        }
    }

    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

    const std::string& data() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

    /// The next n bytes without consuming them.
    std::string_view peek(std::size_t n) const
    {
        need(n);
        return data_.substr(pos_, n);
    }

    std::string_view bytes(std::size_t n)
    {
        need(n);
        const auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    std::uint32_t u32()
    {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    std::uint64_t u64()
    {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += 8;
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    std::size_t remaining() const { return data_.size() - pos_; }

    void need(std::size_t n) const
    {
        if (data_.size() - pos_ < n) {
            throw LengthError(what_ + ": truncated (need " + std::to_string(n) + " bytes at offset " +
                              std::to_string(pos_) + ", have " + std::to_string(data_.size() - pos_) + ")");
        }
    }

private:
    std::string_view data_;
    std::string what_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Reads and checks a 4-byte magic plus a u32 version of 1.
void expect_header(Reader& in, std::string_view magic, const std::string& what);

} // namespace sadvae::binary
