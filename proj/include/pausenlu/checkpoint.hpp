#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pausenlu/numcore.hpp"

namespace pausenlu {

// Flat binary checkpoint: versioned header, a JSON metadata blob (model
// config, vocabulary, label alphabet, ...), then named tensors with shapes
// and raw little-endian values. Width 8 stores f64, width 4 stores f32.
struct NamedTensor {
  std::string name;
  Mat value;
};

struct Checkpoint {
  std::string metadata_json;
  std::vector<NamedTensor> tensors;

  const Mat& tensor(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt,
                     int width = 8);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pausenlu
