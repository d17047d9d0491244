#include "infgen/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace infgen {

InfGenModel::InfGenModel(const RunConfig& config) : cfg(config) {
  cfg.validate();
  Rng init = Rng::subsystem(cfg.seed, "init");
  Rng fourier = Rng::subsystem(cfg.seed, "fourier");
  vae = Vae(cfg.latent_channels, cfg.vae_width, init);
  gen = ArrDecoder(cfg.d_model, cfg.blocks, cfg.heads, cfg.latent_channels, cfg.fourier_m,
                   static_cast<float>(cfg.fourier_sigma), cfg.max_res, init, fourier);
  gen.inpe.half_pixel = cfg.half_pixel_coords;
  disc = PatchGanT<float>(cfg.disc_width, init);
  percep = PerceptualNetT<float>(init);
}

std::vector<InfGenModel::TensorRef> InfGenModel::named_tensors() {
  std::vector<TensorRef> refs;
  auto add_params = [&refs](const ParamRefs<float>& ps) {
    for (auto* p : ps) refs.push_back({p->name, &p->value, &p->frozen});
  };
  ParamRefs<float> ps;
  vae.encoder.collect(ps);
  vae.decoder.collect(ps);
  add_params(ps);
  add_params(gen.params());
  add_params(disc.params());
  ParamRefs<float> percep_ps;
  percep.collect(percep_ps);
  add_params(percep_ps);
  refs.push_back({"inpe.fourier.b", &gen.inpe.fourier.b_matrix, nullptr});
  return refs;
}

Checkpoint InfGenModel::to_checkpoint() const {
  auto* self = const_cast<InfGenModel*>(this);
  Checkpoint ck;
  ck.config_digest = cfg.digest();
  ck.step = step;
  for (const auto& ref : self->named_tensors())
    ck.tensors.push_back({ref.name, *ref.data, ref.frozen_slot ? *ref.frozen_slot : true});
  return ck;
}

void InfGenModel::load_checkpoint(const Checkpoint& ck, bool force_digest) {
  if (ck.config_digest != cfg.digest() && !force_digest)
    throw std::runtime_error(
        "checkpoint was produced under a different config (digest mismatch); pass --force to "
        "load anyway");
  for (auto& ref : named_tensors()) {
    const auto* e = ck.find(ref.name);
    if (!e) throw std::runtime_error("checkpoint: missing tensor '" + ref.name + "'");
    if (e->data.shape != ref.data->shape)
      throw std::runtime_error("checkpoint: shape mismatch for '" + ref.name + "': file " +
                               e->data.shape_str() + " vs model " + ref.data->shape_str());
    *ref.data = e->data;
    if (ref.frozen_slot) *ref.frozen_slot = e->frozen;
  }
  step = ck.step;
}

void InfGenModel::save_optimizer(Checkpoint& ck, const std::string& prefix,
                                 const AdamW& opt) const {
  std::vector<std::string> names;
  for (const auto& [name, slot] : opt.state()) names.push_back(name);
  std::sort(names.begin(), names.end());
  for (const auto& name : names) {
    const auto& slot = opt.state().at(name);
    ck.tensors.push_back({prefix + ".m." + name, slot.m, true});
    ck.tensors.push_back({prefix + ".v." + name, slot.v, true});
  }
  Tensor t({1});
  t.v[0] = static_cast<float>(opt.steps_taken());
  ck.tensors.push_back({prefix + ".t", t, true});
}

void InfGenModel::load_optimizer(const Checkpoint& ck, const std::string& prefix, AdamW& opt) {
  const auto* tc = ck.find(prefix + ".t");
  if (!tc) return;  // checkpoint predates this optimizer; start fresh
  opt.set_steps_taken(static_cast<int64_t>(tc->data.v[0]));
  for (const auto& e : ck.tensors) {
    const std::string m_prefix = prefix + ".m.";
    if (e.name.rfind(m_prefix, 0) == 0) {
      std::string pname = e.name.substr(m_prefix.size());
      auto& slot = opt.state()[pname];
      slot.m = e.data;
      const auto* vv = ck.find(prefix + ".v." + pname);
      if (!vv) throw std::runtime_error("checkpoint: missing second moment for " + pname);
      slot.v = vv->data;
    }
  }
}

}  // namespace infgen
