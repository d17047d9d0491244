#include "infgen/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace infgen {

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
  uint64_t h = seed;
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

int64_t parse_int(const std::string& key, const std::string& v) {
  size_t pos = 0;
  int64_t out;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
  }
  if (pos != v.size()) throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double out;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for '" + key + "': " + v);
  }
  if (pos != v.size()) throw std::invalid_argument("config: bad number for '" + key + "': " + v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad bool for '" + key + "': " + v);
}

// ordered so canonical() output is stable
const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
#define INT_FIELD(name)                                                               \
  {#name,                                                                             \
   {[](RunConfig& c, const std::string& v) { c.name = static_cast<int>(parse_int(#name, v)); }, \
    [](const RunConfig& c) { return std::to_string(c.name); }}}
#define DBL_FIELD(name)                                                      \
  {#name,                                                                    \
   {[](RunConfig& c, const std::string& v) { c.name = parse_double(#name, v); }, \
    [](const RunConfig& c) { return fmt_double(c.name); }}}
#define BOOL_FIELD(name)                                                    \
  {#name,                                                                   \
   {[](RunConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }, \
    [](const RunConfig& c) { return c.name ? std::string("true") : std::string("false"); }}}
      {"seed",
       {[](RunConfig& c, const std::string& v) {
          c.seed = static_cast<uint64_t>(parse_int("seed", v));
        },
        [](const RunConfig& c) { return std::to_string(c.seed); }}},
      INT_FIELD(d_model),
      INT_FIELD(blocks),
      INT_FIELD(heads),
      INT_FIELD(fourier_m),
      DBL_FIELD(fourier_sigma),
      BOOL_FIELD(half_pixel_coords),
      INT_FIELD(latent_channels),
      INT_FIELD(vae_width),
      INT_FIELD(input_size),
      INT_FIELD(max_res),
      INT_FIELD(vae_steps),
      INT_FIELD(vae_batch),
      DBL_FIELD(vae_lr),
      DBL_FIELD(kl_beta),
      INT_FIELD(stage1_min),
      INT_FIELD(stage1_max),
      INT_FIELD(stage1_steps),
      INT_FIELD(stage1_batch),
      INT_FIELD(stage2_min),
      INT_FIELD(stage2_max),
      INT_FIELD(stage2_steps),
      INT_FIELD(stage2_batch),
      DBL_FIELD(lambda_p),
      DBL_FIELD(lambda_g),
      INT_FIELD(gan_warmup_steps),
      DBL_FIELD(lr_start),
      DBL_FIELD(lr_end),
      DBL_FIELD(weight_decay),
      BOOL_FIELD(sample_latent),
      INT_FIELD(disc_width),
      DBL_FIELD(extrap_cap),
      INT_FIELD(patch_size),
#undef INT_FIELD
#undef DBL_FIELD
#undef BOOL_FIELD
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("config: " + msg);
  };
  require(d_model >= 8, "d_model must be >= 8");
  require(blocks >= 1, "blocks must be >= 1");
  require(heads >= 1 && d_model % heads == 0, "heads must divide d_model");
  require(fourier_m >= 1, "fourier_m must be >= 1");
  require(fourier_sigma > 0, "fourier_sigma must be positive");
  require(latent_channels >= 1, "latent_channels must be >= 1");
  require(vae_width >= 4, "vae_width must be >= 4");
  require(input_size >= 8 && input_size % 8 == 0, "input_size must be a positive multiple of 8");
  require(max_res >= input_size, "max_res must be >= input_size");
  require(vae_steps >= 0 && vae_batch >= 1, "vae schedule invalid");
  require(vae_lr > 0 && kl_beta >= 0, "vae optimizer settings invalid");
  auto stage_ok = [&](int mn, int mx, int steps, int batch) {
    return mn >= 8 && mx >= mn && mx <= max_res && steps >= 0 && batch >= 1;
  };
  require(stage_ok(stage1_min, stage1_max, stage1_steps, stage1_batch), "stage 1 invalid");
  require(stage_ok(stage2_min, stage2_max, stage2_steps, stage2_batch), "stage 2 invalid");
  require(stage1_min >= input_size && stage2_min >= input_size,
          "stage minimum below encoder input size");
  require(lambda_p >= 0 && lambda_g >= 0, "loss weights must be non-negative");
  require(gan_warmup_steps >= 0, "gan_warmup_steps must be >= 0");
  require(lr_start > 0 && lr_end > 0 && lr_end <= lr_start, "learning-rate schedule invalid");
  require(weight_decay >= 0, "weight_decay must be >= 0");
  require(disc_width >= 4, "disc_width must be >= 4");
  require(extrap_cap > 1.0, "extrap_cap must exceed 1");
  require(patch_size >= 8, "patch_size must be >= 8");
}

std::string RunConfig::canonical() const {
  std::ostringstream os;
  for (const auto& [key, field] : fields()) os << key << "=" << field.get(*this) << "\n";
  return os.str();
}

uint64_t RunConfig::digest() const {
  std::string c = canonical();
  return fnv1a64(c.data(), c.size());
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  it->second.set(*this, value);
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::map<std::string, int> seen;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not key=value: " + line);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (seen.count(key))
      throw std::invalid_argument("config: duplicate key '" + key + "' at line " +
                                  std::to_string(lineno));
    seen[key] = lineno;
    cfg.apply_override(key, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return from_text(os.str());
}

}  // namespace infgen
