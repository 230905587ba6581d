#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "tom/nn/tensor.hpp"

namespace tom::nn {

// Versioned container of named tensors plus a free-form JSON metadata string.
//   "TNNC" | version u8 | metadata (u32 length + bytes) | count u32 |
//   per tensor: name (u16 length + bytes), rank u8, dims u32 x rank, f64 x numel |
//   FNV-1a-64 of all preceding bytes. Little-endian.
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string metadata;
    std::map<std::string, Tensor> tensors;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

class CheckpointError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tom::nn
