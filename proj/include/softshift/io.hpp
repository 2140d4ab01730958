#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace softshift {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

// Append-only byte buffer for the binary file formats.
class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }
    void magic(const char (&m)[9]) { raw(m, 8); }

    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

// Cursor over a byte span; short reads throw the error type E with the
// current byte offset where E accepts one, else plain E(message).
template <typename E>
class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint64_t offset() const { return pos_; }
    bool exhausted() const { return pos_ == bytes_.size(); }

    void raw(void* p, std::size_t n) {
        if (pos_ + n > bytes_.size()) fail("unexpected end of data");
        std::memcpy(p, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::uint8_t u8() { std::uint8_t v; raw(&v, 1); return v; }
    std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
    std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
    double f64() { double v; raw(&v, 8); return v; }

    void expect_magic(const char (&m)[9]) {
        char got[8];
        raw(got, 8);
        if (std::memcmp(got, m, 8) != 0) fail("bad magic header");
    }

    [[noreturn]] void fail(const std::string& what) {
        if constexpr (requires { E(what, std::uint64_t{}); })
            throw E(what, pos_);
        else
            throw E(what);
    }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::uint64_t pos_ = 0;
};

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    const auto size = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw std::runtime_error("read failed: " + path);
    return bytes;
}

// 256-bit non-cryptographic fingerprint: four FNV-1a lanes with distinct
// offset bases. Used to tie soft-label tables to their source checkpoint.
inline std::array<std::uint8_t, 32> fingerprint256(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t lanes[4] = {0xcbf29ce484222325ULL, 0x84222325cbf29ce4ULL,
                              0x9ae16a3b2f90404fULL, 0xc949d7c7509e6557ULL};
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const std::uint64_t b = bytes[i];
        lanes[i & 3] = (lanes[i & 3] ^ b) * 0x100000001b3ULL;
        lanes[(i + 1) & 3] ^= lanes[i & 3] >> 29;
    }
    std::array<std::uint8_t, 32> out{};
    for (int l = 0; l < 4; ++l) std::memcpy(out.data() + 8 * l, &lanes[l], 8);
    return out;
}

inline std::string hex(const std::array<std::uint8_t, 32>& fp) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (auto b : fp) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 15]);
    }
    return s;
}

}  // namespace softshift
