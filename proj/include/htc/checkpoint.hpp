#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "htc/tensor.hpp"

namespace htc {

// Container format: magic "HVC1", little-endian throughout.
//   u32 line_count, then per line  u32 byte_len + UTF-8 "key=value"
//   u32 tensor_count, then per tensor
//     u32 name_len + name, u32 rank, u32 extents[rank], f32 data (row-major)
//   u32 CRC32 of every preceding byte (magic included)
struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
};

uint32_t crc32(const uint8_t* data, size_t n, uint32_t seed = 0);

std::vector<uint8_t> checkpoint_to_bytes(const Checkpoint& ckpt);
Checkpoint checkpoint_from_bytes(const std::vector<uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

} // namespace htc
