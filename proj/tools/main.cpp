#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "infgen/checkpoint.hpp"
#include "infgen/config.hpp"
#include "infgen/extrapolation.hpp"
#include "infgen/image.hpp"
#include "infgen/metrics.hpp"
#include "infgen/model.hpp"
#include "infgen/training.hpp"

namespace fs = std::filesystem;
using namespace infgen;

namespace {

// INFGEN_OUT_DIR relocates relative output paths; absolute paths win.
std::string out_path(const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  const char* dir = std::getenv("INFGEN_OUT_DIR");
  if (!dir || !*dir) return p;
  fs::create_directories(dir);
  return (fs::path(dir) / p).string();
}

RunConfig load_config(const std::string& config_path, std::optional<uint64_t> seed_override) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
  if (seed_override) cfg.seed = *seed_override;
  cfg.validate();
  return cfg;
}

std::vector<std::string> list_pngs(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .png files in " + dir);
  return files;
}

// independent deterministic stream per (seed, subsystem, step)
Rng step_rng(uint64_t seed, std::string_view name, uint64_t index) {
  return Rng::subsystem(seed + 0x9e3779b97f4a7c15ull * (index + 1), name);
}

Tensor latent_from_args(InfGenModel& model, const std::string& latent_file,
                        const std::string& image_file, std::optional<uint64_t> latent_seed) {
  int sources = (!latent_file.empty()) + (!image_file.empty()) + latent_seed.has_value();
  if (sources != 1)
    throw std::runtime_error("exactly one of --latent, --image, --latent-seed is required");
  if (!latent_file.empty()) {
    Tensor z = load_tensor(latent_file);
    if (z.rank() != 3 || z.dim(0) != model.cfg.latent_channels)
      throw std::runtime_error("latent file has wrong channel count: " + z.shape_str());
    return z;
  }
  if (!image_file.empty()) {
    Image img = read_png(image_file);
    return model.vae.encode(img.pixels).mu;
  }
  int hw = model.latent_hw();
  Tensor z({model.cfg.latent_channels, hw, hw});
  Rng rng = Rng::subsystem(*latent_seed, "latent-seed");
  for (auto& v : z.v) v = static_cast<float>(rng.normal());
  return z;
}

InfGenModel load_model(const RunConfig& cfg, const std::string& ckpt, bool force) {
  InfGenModel model(cfg);
  model.load_checkpoint(Checkpoint::load(ckpt), force);
  return model;
}

std::pair<int, int> parse_hw(const std::string& s) {
  auto x = s.find('x');
  if (x == std::string::npos) throw std::runtime_error("expected HxW, got: " + s);
  return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
}

void append_loss_line(std::ofstream& log, uint64_t step, double lr, const LossBreakdown& lb) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "step=%llu lr=%.17g l1=%.17g perceptual=%.17g adversarial_g=%.17g "
                "discriminator=%.17g total=%.17g\n",
                static_cast<unsigned long long>(step), lr, lb.l1, lb.perceptual,
                lb.adversarial_g, lb.discriminator, lb.total);
  log << buf;
  log.flush();
}

// ---- commands ----

int cmd_pretrain_vae(const RunConfig& cfg, const std::string& data_dir, const std::string& out,
                     int steps_override) {
  InfGenModel model(cfg);
  auto files = list_pngs(data_dir);
  std::vector<Image> sources;
  for (const auto& f : files) sources.push_back(read_png(f));
  for (const auto& s : sources)
    if (s.height() < cfg.input_size || s.width() < cfg.input_size)
      throw std::runtime_error("pretrain-vae: image smaller than input_size");

  AdamW opt;
  opt.weight_decay = cfg.weight_decay;
  int total = steps_override > 0 ? steps_override : cfg.vae_steps;
  for (int step = 0; step < total; ++step) {
    Rng data = step_rng(cfg.seed, "vae-data", static_cast<uint64_t>(step));
    Rng noise = step_rng(cfg.seed, "vae-noise", static_cast<uint64_t>(step));
    std::vector<Tensor> batch;
    for (int b = 0; b < cfg.vae_batch; ++b) {
      const Image& src = sources[static_cast<size_t>(data.uniform_int(0, static_cast<int64_t>(sources.size()) - 1))];
      int y0 = static_cast<int>(data.uniform_int(0, src.height() - cfg.input_size));
      int x0 = static_cast<int>(data.uniform_int(0, src.width() - cfg.input_size));
      batch.push_back(crop(src, y0, x0, cfg.input_size, cfg.input_size).pixels);
    }
    auto lb = model.vae.pretrain_step(batch, opt, cfg.vae_lr, cfg.kl_beta, noise);
    if (step % 50 == 0 || step + 1 == total)
      std::cout << "vae step " << step << " l1=" << lb.l1 << " kl=" << lb.kl
                << " total=" << lb.total << "\n";
  }
  model.vae.encoder.set_frozen(true);
  Checkpoint ck = model.to_checkpoint();
  ck.save(out_path(out));
  std::cout << "wrote " << out_path(out) << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& in_ckpt,
              const std::string& out, const std::string& loss_log_path, int steps_this_run,
              bool force) {
  InfGenModel model = load_model(cfg, in_ckpt, force);
  if (!model.vae.encoder.frozen())
    throw std::runtime_error("train: encoder not frozen; run pretrain-vae first");
  auto files = list_pngs(data_dir);
  std::vector<Image> sources;
  for (const auto& f : files) sources.push_back(read_png(f));

  TrainSchedule sched;
  sched.lr_start = cfg.lr_start;
  sched.lr_end = cfg.lr_end;
  sched.total_steps = cfg.stage1_steps + cfg.stage2_steps;
  sched.gan_warmup_steps = cfg.gan_warmup_steps;
  sched.sample_latent = cfg.sample_latent;
  LossWeights weights{cfg.lambda_p, cfg.lambda_g};
  Trainer trainer(model.vae, model.gen, model.disc, model.percep, weights, sched);
  {
    Checkpoint prev = Checkpoint::load(in_ckpt);
    InfGenModel::load_optimizer(prev, "optg", trainer.opt_g());
    InfGenModel::load_optimizer(prev, "optd", trainer.opt_d());
  }

  std::ofstream log;
  if (!loss_log_path.empty()) {
    log.open(out_path(loss_log_path), std::ios::app);
    if (!log) throw std::runtime_error("cannot open loss log " + out_path(loss_log_path));
  }

  int64_t end_step = sched.total_steps;
  if (steps_this_run > 0)
    end_step = std::min<int64_t>(end_step, static_cast<int64_t>(model.step) + steps_this_run);
  StageConfig s1{cfg.stage1_min, cfg.stage1_max, cfg.stage1_steps, cfg.stage1_batch};
  StageConfig s2{cfg.stage2_min, cfg.stage2_max, cfg.stage2_steps, cfg.stage2_batch};
  for (int64_t step = static_cast<int64_t>(model.step); step < end_step; ++step) {
    const StageConfig& stage = step < cfg.stage1_steps ? s1 : s2;
    if (step == 0 || step == cfg.stage1_steps)
      std::cout << "stage " << (step < cfg.stage1_steps ? 1 : 2) << ": targets ["
                << stage.min_res << ", " << stage.max_res << "], batch " << stage.batch << "\n";
    Rng data = step_rng(cfg.seed, "data", static_cast<uint64_t>(step));
    Rng latent = step_rng(cfg.seed, "reparam", static_cast<uint64_t>(step));
    std::vector<TrainingPair> batch;
    for (int b = 0; b < stage.batch; ++b) {
      const Image& src = sources[static_cast<size_t>(data.uniform_int(0, static_cast<int64_t>(sources.size()) - 1))];
      batch.push_back(sample_training_pair(src, stage, cfg.input_size, data));
    }
    LossBreakdown lb = trainer.train_step(batch, step, latent);
    model.step = static_cast<uint64_t>(step + 1);
    if (log.is_open()) append_loss_line(log, model.step, trainer.lr_at(step), lb);
    if (step % 25 == 0 || step + 1 == end_step)
      std::cout << "step " << step << " l1=" << lb.l1 << " perc=" << lb.perceptual
                << " adv=" << lb.adversarial_g << " d=" << lb.discriminator << "\n";
  }

  Checkpoint ck = model.to_checkpoint();
  model.save_optimizer(ck, "optg", trainer.opt_g());
  model.save_optimizer(ck, "optd", trainer.opt_d());
  ck.save(out_path(out));
  std::cout << "wrote " << out_path(out) << " at step " << model.step << "\n";
  return 0;
}

int cmd_decode(const RunConfig& cfg, const std::string& ckpt, int h, int w,
               const std::string& latent_file, const std::string& image_file,
               std::optional<uint64_t> latent_seed, const std::string& out, bool force) {
  InfGenModel model = load_model(cfg, ckpt, force);
  Tensor z = latent_from_args(model, latent_file, image_file, latent_seed);
  Tensor px = model.gen.decode(z, {h, w});
  write_png(out_path(out), Image(std::move(px)));
  std::cout << "wrote " << out_path(out) << " (" << h << "x" << w << ")\n";
  return 0;
}

int cmd_extrapolate(const RunConfig& cfg, const std::string& ckpt, const std::string& target_str,
                    double cap, const std::string& latent_file, const std::string& image_file,
                    std::optional<uint64_t> latent_seed, const std::string& out,
                    bool save_intermediates, bool force) {
  InfGenModel model = load_model(cfg, ckpt, force);
  Tensor z = latent_from_args(model, latent_file, image_file, latent_seed);
  auto [th, tw] = parse_hw(target_str);
  int base_h = 8 * z.dim(1), base_w = 8 * z.dim(2);
  if (cap <= 0) cap = cfg.extrap_cap;

  ExtrapolationPlan plan = plan_schedule({base_h, base_w}, {th, tw}, cap);
  std::cout << plan.describe();
  ScaleLimits limits;
  limits.latent_h = z.dim(1);
  limits.latent_w = z.dim(2);
  limits.training_min = cfg.stage2_min;
  limits.training_max = cfg.stage2_max;
  limits.reliable_min = cfg.stage2_min;
  limits.reliable_max = 2 * cfg.stage2_max;
  for (const auto& wmsg : validate_against_limits(plan, limits))
    std::cout << "warning: " << wmsg << "\n";

  fs::path out_file = out_path(out);
  auto on_step = [&](int n, const Tensor& img) {
    if (!save_intermediates || static_cast<size_t>(n) == plan.steps.size()) return;
    fs::path p = out_file;
    p.replace_extension("");
    std::string inter = p.string() + ".step" + std::to_string(n) + ".png";
    write_png(inter, Image(img));
    std::cout << "wrote " << inter << "\n";
  };
  Tensor result = run_extrapolation<float>(z, plan, model.vae, model.gen, on_step);
  write_png(out_file.string(), Image(std::move(result)));
  std::cout << "wrote " << out_file.string() << " (" << th << "x" << tw << ")\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& ckpt, const std::string& dir_a,
             const std::string& dir_b, int patch, const std::string& report, bool force) {
  InfGenModel model = load_model(cfg, ckpt, force);
  if (patch <= 0) patch = cfg.patch_size;
  auto files_a = list_pngs(dir_a);
  auto files_b = list_pngs(dir_b);

  double psnr_sum = 0.0, ssim_sum = 0.0;
  int pairs = 0;
  FeatureStats stats_a(PerceptualNetT<float>::kFeatureDim);
  FeatureStats stats_b(PerceptualNetT<float>::kFeatureDim);
  auto accumulate = [&](const std::vector<std::string>& files, FeatureStats& stats) {
    for (const auto& f : files) {
      Image img = read_png(f);
      for (const auto& p : crop_patches(img, patch)) stats.add(model.percep.features(p.pixels));
    }
  };
  for (const auto& fa : files_a) {
    fs::path name = fs::path(fa).filename();
    std::string fb = (fs::path(dir_b) / name).string();
    if (!fs::exists(fb)) continue;
    Image a = read_png(fa);
    Image b = read_png(fb);
    if (a.height() != b.height() || a.width() != b.width()) continue;
    psnr_sum += psnr(a, b);
    ssim_sum += ssim(a, b);
    ++pairs;
  }
  accumulate(files_a, stats_a);
  accumulate(files_b, stats_b);
  double rfd = frechet_distance(stats_a, stats_b);

  char run_id[32];
  std::snprintf(run_id, sizeof(run_id), "%016llx",
                static_cast<unsigned long long>(
                    fnv1a64(dir_a.data(), dir_a.size(), cfg.digest()) ^
                    fnv1a64(dir_b.data(), dir_b.size())));
  std::ostringstream os;
  os << "run_id=" << run_id << "\n";
  char digest[32];
  std::snprintf(digest, sizeof(digest), "%016llx", static_cast<unsigned long long>(cfg.digest()));
  os << "config_digest=" << digest << "\n";
  os << "patch_size=" << patch << "\n";
  os << "pairs=" << pairs << "\n";
  char num[64];
  if (pairs > 0) {
    std::snprintf(num, sizeof(num), "%.17g", psnr_sum / pairs);
    os << "psnr_mean=" << num << "\n";
    std::snprintf(num, sizeof(num), "%.17g", ssim_sum / pairs);
    os << "ssim_mean=" << num << "\n";
  }
  std::snprintf(num, sizeof(num), "%.17g", rfd);
  os << "rfd_patch=" << num << "\n";
  os << "features_a=" << stats_a.n << "\n";
  os << "features_b=" << stats_b.n << "\n";

  std::cout << os.str();
  if (!report.empty()) {
    std::ofstream rf(out_path(report), std::ios::trunc);
    if (!rf) throw std::runtime_error("cannot write report " + out_path(report));
    rf << os.str();
  }
  return 0;
}

int cmd_bench(const RunConfig& cfg, const std::string& ckpt, const std::string& sizes_str,
              int reps, const std::string& report, bool force) {
  InfGenModel model = load_model(cfg, ckpt, force);
  std::vector<int> sizes;
  {
    std::istringstream is(sizes_str);
    std::string tok;
    while (std::getline(is, tok, ',')) sizes.push_back(std::stoi(tok));
  }
  if (sizes.empty()) throw std::runtime_error("bench: no sizes given");

  int hw = model.latent_hw();
  Tensor z({cfg.latent_channels, hw, hw});
  Rng rng = Rng::subsystem(cfg.seed, "bench");
  for (auto& v : z.v) v = static_cast<float>(rng.normal());

  std::ostringstream os;
  os << "size pixels seconds mflops\n";
  std::vector<double> log_px, log_t;
  for (int s : sizes) {
    double best = 1e100;
    int64_t flops = 0;
    for (int r = 0; r < reps; ++r) {
      Graph g;
      auto t0 = std::chrono::steady_clock::now();
      int node = model.gen.decode_node(g, z, {s, s});
      auto t1 = std::chrono::steady_clock::now();
      (void)g.val(node);
      flops = g.flops();
      best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    log_px.push_back(std::log(static_cast<double>(s) * s));
    log_t.push_back(std::log(best));
    char line[128];
    std::snprintf(line, sizeof(line), "%d %d %.6f %.1f\n", s, s * s, best,
                  static_cast<double>(flops) / 1e6);
    os << line;
  }
  // least-squares slope of log time vs log pixel count
  double n = static_cast<double>(log_px.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < log_px.size(); ++i) {
    sx += log_px[i];
    sy += log_t[i];
    sxx += log_px[i] * log_px[i];
    sxy += log_px[i] * log_t[i];
  }
  double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  char fit[64];
  std::snprintf(fit, sizeof(fit), "%.4f", slope);
  os << "time_vs_pixels_exponent=" << fit << "\n";

  std::cout << os.str();
  if (!report.empty()) {
    std::ofstream rf(out_path(report), std::ios::trunc);
    if (!rf) throw std::runtime_error("cannot write report " + out_path(report));
    rf << os.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"InfGen: arbitrary-resolution image generation from fixed-size latents"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<uint64_t> seed_override;
  app.add_option("--config", config_path, "run configuration file (key=value lines)");
  app.add_option("--seed", seed_override, "override the config seed");

  // pretrain-vae
  auto* pv = app.add_subcommand("pretrain-vae", "train the latent codec and freeze the encoder");
  std::string pv_data, pv_out = "vae.infg";
  int pv_steps = 0;
  pv->add_option("--data", pv_data, "directory of training PNGs")->required();
  pv->add_option("--out", pv_out, "output checkpoint path");
  pv->add_option("--steps", pv_steps, "override the configured step count");

  // train
  auto* tr = app.add_subcommand("train", "adversarial training of the generator");
  std::string tr_data, tr_in, tr_out = "infgen.infg", tr_log = "loss_log.txt";
  int tr_steps = 0;
  bool tr_force = false;
  tr->add_option("--data", tr_data, "directory of training PNGs")->required();
  tr->add_option("--ckpt", tr_in, "input checkpoint (pretrained codec or resume)")->required();
  tr->add_option("--out", tr_out, "output checkpoint path");
  tr->add_option("--loss-log", tr_log, "append-only per-step loss log");
  tr->add_option("--steps", tr_steps, "run at most this many steps now");
  tr->add_flag("--force", tr_force, "accept a checkpoint with a different config digest");

  // decode
  auto* dc = app.add_subcommand("decode", "decode a latent to a PNG at the requested size");
  std::string dc_ckpt, dc_latent, dc_image, dc_out = "decode.png";
  std::optional<uint64_t> dc_seed;
  int dc_h = 0, dc_w = 0;
  bool dc_force = false;
  dc->add_option("--ckpt", dc_ckpt, "model checkpoint")->required();
  dc->add_option("--height", dc_h, "output height in pixels")->required();
  dc->add_option("--width", dc_w, "output width in pixels")->required();
  dc->add_option("--latent", dc_latent, "latent tensor file");
  dc->add_option("--image", dc_image, "encode this PNG and decode its mean latent");
  dc->add_option("--latent-seed", dc_seed, "draw the latent from N(0,1) with this seed");
  dc->add_option("--out", dc_out, "output PNG path");
  dc->add_flag("--force", dc_force, "accept a checkpoint with a different config digest");

  // extrapolate
  auto* ex = app.add_subcommand("extrapolate", "iterative decode/encode beyond the training range");
  std::string ex_ckpt, ex_target, ex_latent, ex_image, ex_out = "extrapolate.png";
  std::optional<uint64_t> ex_seed;
  double ex_cap = 0.0;
  bool ex_save = false, ex_force = false;
  ex->add_option("--ckpt", ex_ckpt, "model checkpoint")->required();
  ex->add_option("--target", ex_target, "target resolution HxW")->required();
  ex->add_option("--cap", ex_cap, "per-step scale cap (default from config)");
  ex->add_option("--latent", ex_latent, "latent tensor file");
  ex->add_option("--image", ex_image, "encode this PNG and start from its mean latent");
  ex->add_option("--latent-seed", ex_seed, "draw the latent from N(0,1) with this seed");
  ex->add_option("--out", ex_out, "output PNG path");
  ex->add_flag("--save-intermediates", ex_save, "write each intermediate image");
  ex->add_flag("--force", ex_force, "accept a checkpoint with a different config digest");

  // eval
  auto* ev = app.add_subcommand("eval", "metric report over two image directories");
  std::string ev_ckpt, ev_a, ev_b, ev_report = "eval_report.txt";
  int ev_patch = 0;
  bool ev_force = false;
  ev->add_option("--ckpt", ev_ckpt, "model checkpoint (for the feature extractor)")->required();
  ev->add_option("--dir-a", ev_a, "first image directory")->required();
  ev->add_option("--dir-b", ev_b, "second image directory")->required();
  ev->add_option("--patch", ev_patch, "patch size for the tiled feature distance");
  ev->add_option("--report", ev_report, "report file path");
  ev->add_flag("--force", ev_force, "accept a checkpoint with a different config digest");

  // bench
  auto* bn = app.add_subcommand("bench", "decode latency versus output resolution");
  std::string bn_ckpt, bn_sizes = "64,128,192,256", bn_report = "bench_report.txt";
  int bn_reps = 3;
  bool bn_force = false;
  bn->add_option("--ckpt", bn_ckpt, "model checkpoint")->required();
  bn->add_option("--sizes", bn_sizes, "comma-separated square sizes");
  bn->add_option("--reps", bn_reps, "repetitions per size (best is kept)");
  bn->add_option("--report", bn_report, "report file path");
  bn->add_flag("--force", bn_force, "accept a checkpoint with a different config digest");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_config(config_path, seed_override);
    if (pv->parsed()) return cmd_pretrain_vae(cfg, pv_data, pv_out, pv_steps);
    if (tr->parsed()) return cmd_train(cfg, tr_data, tr_in, tr_out, tr_log, tr_steps, tr_force);
    if (dc->parsed())
      return cmd_decode(cfg, dc_ckpt, dc_h, dc_w, dc_latent, dc_image, dc_seed, dc_out, dc_force);
    if (ex->parsed())
      return cmd_extrapolate(cfg, ex_ckpt, ex_target, ex_cap, ex_latent, ex_image, ex_seed,
                             ex_out, ex_save, ex_force);
    if (ev->parsed()) return cmd_eval(cfg, ev_ckpt, ev_a, ev_b, ev_patch, ev_report, ev_force);
    if (bn->parsed()) return cmd_bench(cfg, bn_ckpt, bn_sizes, bn_reps, bn_report, bn_force);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
