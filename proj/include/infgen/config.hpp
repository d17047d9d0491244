#pragma once

#include <cstdint>
#include <string>

namespace infgen {

// Flat key=value run configuration. Unknown keys are rejected, every value
// is range-checked, and a digest of the canonical form is embedded in
// checkpoints so stale parameter files cannot be loaded silently.
struct RunConfig {
  uint64_t seed = 1234;

  // generator
  int d_model = 128;
  int blocks = 4;
  int heads = 4;
  int fourier_m = 64;
  double fourier_sigma = 10.0;
  bool half_pixel_coords = false;

  // latent codec
  int latent_channels = 4;
  int vae_width = 16;
  int input_size = 64;
  int max_res = 256;

  // VAE pretraining
  int vae_steps = 2000;
  int vae_batch = 4;
  double vae_lr = 1e-3;
  double kl_beta = 1e-4;

  // adversarial training
  int stage1_min = 64, stage1_max = 128, stage1_steps = 5000, stage1_batch = 4;
  int stage2_min = 64, stage2_max = 256, stage2_steps = 1000, stage2_batch = 1;
  double lambda_p = 0.1;
  double lambda_g = 0.1;
  int gan_warmup_steps = 200;
  double lr_start = 2e-4;
  double lr_end = 1e-5;
  double weight_decay = 1e-4;
  bool sample_latent = true;
  int disc_width = 32;

  // inference / evaluation
  double extrap_cap = 2.0;
  int patch_size = 32;

  void validate() const;                 // throws on any out-of-range field
  std::string canonical() const;         // fixed key order, normalized values
  uint64_t digest() const;               // FNV-1a over canonical()

  static RunConfig from_file(const std::string& path);
  static RunConfig from_text(const std::string& text);
  void apply_override(const std::string& key, const std::string& value);
};

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace infgen
