#pragma once
// Little-endian binary file helpers shared by the dataset / checkpoint / probe
// formats.  Reads fail with the byte offset of the problem.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ortho::io {

struct FileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Writer {
public:
    explicit Writer(const std::string &path)
        : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw FileError("cannot open for writing: " + path);
    }
    void bytes(const void *p, std::size_t n) {
        out_.write(static_cast<const char *>(p), std::streamsize(n));
        if (!out_) throw FileError("write failed: " + path_);
    }
    template <typename T> void pod(const T &v) { bytes(&v, sizeof(T)); }
    void u8(std::uint8_t v) { pod(v); }
    void u16(std::uint16_t v) { pod(v); }
    void u32(std::uint32_t v) { pod(v); }
    void u64(std::uint64_t v) { pod(v); }
    void i32(std::int32_t v) { pod(v); }
    void f64(double v) { pod(v); }
    void f64s(const std::vector<double> &v) { bytes(v.data(), v.size() * 8); }
    void str(const std::string &s) {
        u32(std::uint32_t(s.size()));
        bytes(s.data(), s.size());
    }

private:
    std::string path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::string &path)
        : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw FileError("cannot open for reading: " + path);
    }
    void bytes(void *p, std::size_t n) {
        in_.read(static_cast<char *>(p), std::streamsize(n));
        if (std::size_t(in_.gcount()) != n)
            throw FileError(path_ + ": truncated read at offset " +
                            std::to_string(offset_) + " (wanted " +
                            std::to_string(n) + " bytes)");
        offset_ += n;
    }
    template <typename T> T pod() {
        T v;
        bytes(&v, sizeof(T));
        return v;
    }
    std::uint8_t u8() { return pod<std::uint8_t>(); }
    std::uint16_t u16() { return pod<std::uint16_t>(); }
    std::uint32_t u32() { return pod<std::uint32_t>(); }
    std::uint64_t u64() { return pod<std::uint64_t>(); }
    std::int32_t i32() { return pod<std::int32_t>(); }
    double f64() { return pod<double>(); }
    std::vector<double> f64s(std::size_t n) {
        std::vector<double> v(n);
        bytes(v.data(), n * 8);
        return v;
    }
    std::string str(std::size_t max_len = 1u << 20) {
        const std::uint32_t n = u32();
        if (n > max_len)
            throw FileError(path_ + ": implausible string length at offset " +
                            std::to_string(offset_ - 4));
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    void expect_magic(std::uint32_t magic, const char *what) {
        const std::uint32_t got = u32();
        if (got != magic)
            throw FileError(path_ + ": bad magic for " + what + " at offset 0");
    }
    bool at_eof() {
        in_.peek();
        return in_.eof();
    }
    std::uint64_t offset() const { return offset_; }

private:
    std::string path_;
    std::ifstream in_;
    std::uint64_t offset_ = 0;
};

// FNV-1a over raw bytes; used for determinism checks on parameters/files.
inline std::uint64_t fnv1a(const void *data, std::size_t n,
                           std::uint64_t h = 1469598103934665603ULL) {
    const auto *p = static_cast<const unsigned char *>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::vector<double> &v,
                           std::uint64_t h = 1469598103934665603ULL) {
    return fnv1a(v.data(), v.size() * sizeof(double), h);
}

} // namespace ortho::io
