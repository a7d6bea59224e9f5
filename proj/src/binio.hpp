#pragma once

// Little-endian byte buffers for the on-disk formats.

#include <hsicae/errors.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hsicae::detail {

class ByteWriter {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    template <typename T>
    void scalar(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        std::uint8_t raw[sizeof(T)];
        std::memcpy(raw, &v, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
        bytes(raw, sizeof(T));
    }
    void u32(std::uint32_t v) { scalar(v); }
    void i32(std::int32_t v) { scalar(v); }
    void u64(std::uint64_t v) { scalar(v); }
    void f32(float v) { scalar(v); }
    void f64(double v) { scalar(v); }
    void magic(std::string_view m) { bytes(m.data(), m.size()); }
    void zeros(std::size_t n) { buf_.insert(buf_.end(), n, std::uint8_t{0}); }
    template <typename T>
    void array(std::span<const T> values) {
        if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
            bytes(values.data(), values.size_bytes());
        } else {
            for (const T& v : values) scalar(v);
        }
    }
    // u32 length followed by the bytes.
    void text(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::size_t size() const { return buf_.size(); }
    const std::vector<std::uint8_t>& buffer() const { return buf_; }

    void write_file(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
        out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw IoError("write failed for '" + path.string() + "'");
    }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(std::vector<std::uint8_t> data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

    static ByteReader from_file(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open '" + path.string() + "'");
        std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return ByteReader(std::move(data), path.string());
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t size() const { return data_.size(); }
    void seek(std::size_t p) {
        if (p > data_.size()) fail("seek past end");
        pos_ = p;
    }

    void need(std::size_t n) const {
        if (remaining() < n) fail("truncated (need " + std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left)");
    }
    template <typename T>
    T scalar() {
        need(sizeof(T));
        std::uint8_t raw[sizeof(T)];
        std::memcpy(raw, data_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, raw, sizeof(T));
        return v;
    }
    std::uint32_t u32() { return scalar<std::uint32_t>(); }
    std::int32_t i32() { return scalar<std::int32_t>(); }
    std::uint64_t u64() { return scalar<std::uint64_t>(); }
    float f32() { return scalar<float>(); }
    double f64() { return scalar<double>(); }

    void expect_magic(std::string_view m) {
        need(m.size());
        if (std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0)
            fail("bad magic, expected \"" + std::string(m) + "\"");
        pos_ += m.size();
    }
    std::string raw_string(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::string text(std::size_t max_len = 1u << 24) {
        const std::uint32_t n = u32();
        if (n > max_len) fail("string length " + std::to_string(n) + " exceeds limit");
        return raw_string(n);
    }
    template <typename T>
    void array(std::span<T> out) {
        need(out.size_bytes());
        if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
            std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
            pos_ += out.size_bytes();
        } else {
            for (T& v : out) v = scalar<T>();
        }
    }

    [[noreturn]] void fail(const std::string& msg) const { throw FormatError(origin_ + ": " + msg); }

private:
    std::vector<std::uint8_t> data_;
    std::string origin_;
    std::size_t pos_ = 0;
};

} // namespace hsicae::detail
