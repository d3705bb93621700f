#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace declab {

// A named float32 array as stored in checkpoint files.
struct NamedArray {
  std::vector<int> shape;
  std::vector<float> data;
};

// Ordered by name so writes are deterministic.
using ArrayMap = std::map<std::string, NamedArray>;

// Binary checkpoint: magic "LITD", u32 LE version, u32 LE array count, then
// per array: u32 LE name length + UTF-8 name, u32 LE rank, u32 LE extents,
// IEEE-754 32-bit LE row-major payload.
void save_checkpoint(const ArrayMap& arrays, const std::string& path);
ArrayMap load_checkpoint(const std::string& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace declab
