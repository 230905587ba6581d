#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace tom {

// Little-endian encoders shared by the binary file formats.
class ByteWriter {
  public:
    template <class T>
    void put(T v) {
        static_assert(std::is_integral_v<T>);
        auto u = static_cast<std::make_unsigned_t<T>>(v);
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            out_.push_back(static_cast<char>(u & 0xff));
            u = static_cast<std::make_unsigned_t<T>>(u >> 8);
        }
    }
    void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void put_bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    void put_string16(const std::string& s) {
        if (s.size() > 0xffff) throw std::length_error("string too long for u16 length prefix");
        put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
        put_bytes(s.data(), s.size());
    }
    std::string& buffer() { return out_; }

  private:
    std::string out_;
};

// Raised when a read runs past `limit`; callers translate it into their own error type.
struct ShortRead : std::runtime_error {
    ShortRead() : std::runtime_error("input is truncated") {}
};

class ByteReader {
  public:
    ByteReader(const std::string& in, std::size_t limit) : in_(in), limit_(limit) {}

    template <class T>
    T get() {
        need(sizeof(T));
        std::make_unsigned_t<T> u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }
    double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    void get_bytes(void* p, std::size_t n) {
        need(n);
        std::memcpy(p, in_.data() + pos_, n);
        pos_ += n;
    }
    std::string get_string16() {
        std::string s(get<std::uint16_t>(), '\0');
        get_bytes(s.data(), s.size());
        return s;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return limit_ - pos_; }

  private:
    void need(std::size_t n) const {
        if (n > limit_ - pos_) throw ShortRead();
    }
    const std::string& in_;
    std::size_t limit_;
    std::size_t pos_ = 0;
};

inline std::uint64_t read_u64_le(const std::string& bytes, std::size_t at) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
    return v;
}

}  // namespace tom
