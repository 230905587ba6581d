#pragma once

#include <string>

#include "tom/gridworld.hpp"

namespace tom {

// Binary trajectory container:
//   "MGT1" | version u8 | header | per-tick records | FNV-1a-64 of all preceding bytes
// Header: map id (u16 length + bytes), profile id u32, strategy u8, noise f64, seed u64,
//         X u16, Y u16, K u8, ticks u32, flags u8 (bit 0 = stalled), final score i32.
// Record: action u8, beep u8, x u16, y u16, facing u8, tick u32, X*Y visibility bytes.
// All integers little-endian.
inline constexpr std::uint8_t kTrajectoryVersion = 1;

class TrajectoryFormatError : public std::runtime_error {
  public:
    enum class Kind { io, bad_magic, version, truncated, checksum, invalid };

    TrajectoryFormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

std::string encode_trajectory(const Trajectory& trajectory);
Trajectory decode_trajectory(const std::string& bytes);

void save_trajectory(const Trajectory& trajectory, const std::string& path);
Trajectory load_trajectory(const std::string& path);

// JSON mirror for debugging; visibility rows use block codes with '?' for unseen.
std::string trajectory_to_json(const Trajectory& trajectory);
Trajectory trajectory_from_json(const std::string& text);

}  // namespace tom
