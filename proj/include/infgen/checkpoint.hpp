#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "infgen/tensor.hpp"

namespace infgen {

// Versioned container of named float32 tensors plus the run metadata needed
// to refuse checkpoints from a different configuration. Round trips are
// bitwise; a trailing checksum catches truncation and corruption.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  uint32_t version = kVersion;
  uint64_t config_digest = 0;
  uint64_t step = 0;

  struct Entry {
    std::string name;
    Tensor data;
    bool frozen = false;
  };
  std::vector<Entry> tensors;

  const Entry* find(const std::string& name) const;
  Entry* find(const std::string& name);

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

// Single-tensor sidecar files (latent maps and the like).
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace infgen
