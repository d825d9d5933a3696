#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "istt/tensor.hpp"

namespace istt {

// Binary checkpoint container, little-endian:
//   magic "ISTTCKPT", u32 version, u32 param count,
//   per parameter: u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
//                  f64 payload (row-major),
//   u32 metadata length, metadata bytes (key=value text; may be empty).
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> params;  // insertion-ordered
  std::string metadata;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& params,
                     const std::string& metadata = "");

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace istt
