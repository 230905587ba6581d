#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tom {

struct Vec2i {
    int x = 0;
    int y = 0;

    friend bool operator==(const Vec2i&, const Vec2i&) = default;
};

inline int manhattan(Vec2i a, Vec2i b) {
    const int dx = a.x > b.x ? a.x - b.x : b.x - a.x;
    const int dy = a.y > b.y ? a.y - b.y : b.y - a.y;
    return dx + dy;
}

// Row-major 2-D grid; (x, y) with x the column and y the row, y growing south.
template <class T>
class Grid {
  public:
    Grid() = default;
    Grid(int width, int height, T fill = T{})
        : width_(width), height_(height), cells_(static_cast<std::size_t>(width) * height, fill) {}

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return cells_.size(); }

    bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }
    bool in_bounds(Vec2i p) const { return in_bounds(p.x, p.y); }

    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }
    Vec2i coord(std::size_t i) const {
        return {static_cast<int>(i % width_), static_cast<int>(i / width_)};
    }

    T& at(int x, int y) { return cells_[index(x, y)]; }
    const T& at(int x, int y) const { return cells_[index(x, y)]; }
    T& at(Vec2i p) { return at(p.x, p.y); }
    const T& at(Vec2i p) const { return at(p.x, p.y); }

    T& operator[](std::size_t i) { return cells_[i]; }
    const T& operator[](std::size_t i) const { return cells_[i]; }

    std::vector<T>& cells() { return cells_; }
    const std::vector<T>& cells() const { return cells_; }

    friend bool operator==(const Grid&, const Grid&) = default;

  private:
    int width_ = 0;
    int height_ = 0;
    std::vector<T> cells_;
};

// Bad user-supplied configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// NaN/Inf or divergence during numeric work (CLI exit code 3).
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// 64-bit FNV-1a, used for content hashes and file checksums.
class Fnv1a {
  public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
    }
    template <class T>
    void update_value(const T& v) {
        update(&v, sizeof(T));
    }
    void update(std::string_view s) { update(s.data(), s.size()); }
    std::uint64_t digest() const { return state_; }

  private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::span<const unsigned char> bytes) {
    Fnv1a h;
    h.update(bytes.data(), bytes.size());
    return h.digest();
}

std::string hex64(std::uint64_t v);

// Mixes a base seed with a stream index so independent components get decorrelated RNG streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace tom
