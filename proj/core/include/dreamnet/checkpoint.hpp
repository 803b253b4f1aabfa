#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dreamnet/tensor.hpp"

namespace dreamnet {

// Binary checkpoint layout (all integers and floats little-endian):
//
//   "DNETv1"                       6 bytes magic
//   u32 header_len, header bytes   free-form key=value text (model config echo)
//   u32 tensor_count
//   per tensor:
//     u32 name_len, name bytes
//     u32 rank, u64 dims[rank]
//     f64 values[product(dims)]
struct Checkpoint {
  std::string header;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

inline constexpr char kCheckpointMagic[] = "DNETv1";

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws ParseError naming the file on bad magic or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "<memory>");

}  // namespace dreamnet
