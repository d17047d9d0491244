#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "infgen/arr_decoder.hpp"
#include "infgen/checkpoint.hpp"
#include "infgen/config.hpp"
#include "infgen/latent_codec.hpp"
#include "infgen/training.hpp"

namespace infgen {

// Everything a run owns: codec, generator, discriminator, frozen feature
// pyramid, and the step counter. Parameter initialization and the frozen
// Fourier matrix derive deterministically from the config seed.
struct InfGenModel {
  RunConfig cfg;
  Vae vae;
  ArrDecoder gen;
  PatchGanT<float> disc;
  PerceptualNetT<float> percep;
  uint64_t step = 0;

  explicit InfGenModel(const RunConfig& config);

  // latent spatial dims for the configured encoder input
  int latent_hw() const { return cfg.input_size / 8; }

  struct TensorRef {
    std::string name;
    Tensor* data;
    bool* frozen_slot;  // null for plain buffers (always frozen)
  };
  std::vector<TensorRef> named_tensors();

  Checkpoint to_checkpoint() const;
  void load_checkpoint(const Checkpoint& ck, bool force_digest = false);

  // optimizer-state round trip (moment buffers keyed by parameter name)
  void save_optimizer(Checkpoint& ck, const std::string& prefix, const AdamW& opt) const;
  static void load_optimizer(const Checkpoint& ck, const std::string& prefix, AdamW& opt);
};

}  // namespace infgen
