#include "infgen/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "infgen/config.hpp"

namespace infgen {

namespace {

constexpr char kMagic[4] = {'I', 'N', 'F', 'G'};
constexpr char kTensorMagic[4] = {'I', 'N', 'F', 'T'};

void put_bytes(std::string& buf, const void* p, size_t n) {
  buf.append(static_cast<const char*>(p), n);
}

template <typename T>
void put(std::string& buf, T v) {
  put_bytes(buf, &v, sizeof(v));  // little-endian host assumed
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& what) : buf_(buf), what_(what) {}

  void bytes(void* p, size_t n) {
    if (pos_ + n > buf_.size()) throw std::runtime_error(what_ + ": truncated file");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }

  template <typename T>
  T get() {
    T v;
    bytes(&v, sizeof(v));
    return v;
  }

  std::string str(size_t n) {
    if (pos_ + n > buf_.size()) throw std::runtime_error(what_ + ": truncated file");
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  std::string what_;
  size_t pos_ = 0;
};

std::string read_all(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(what + ": cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

void write_all(const std::string& path, const std::string& buf, const std::string& what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(what + ": cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error(what + ": write failed for " + path);
}

void put_tensor_payload(std::string& buf, const Tensor& t) {
  put<uint8_t>(buf, static_cast<uint8_t>(t.rank()));
  for (int d : t.shape) put<uint32_t>(buf, static_cast<uint32_t>(d));
  put_bytes(buf, t.v.data(), t.v.size() * sizeof(float));
}

Tensor get_tensor_payload(Reader& r, const std::string& what) {
  int rank = r.get<uint8_t>();
  std::vector<int> shape;
  for (int i = 0; i < rank; ++i) {
    uint32_t d = r.get<uint32_t>();
    if (d == 0 || d > (1u << 24)) throw std::runtime_error(what + ": implausible tensor dim");
    shape.push_back(static_cast<int>(d));
  }
  Tensor t(shape);
  r.bytes(t.v.data(), t.v.size() * sizeof(float));
  return t;
}

}  // namespace

const Checkpoint::Entry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : tensors)
    if (e.name == name) return &e;
  return nullptr;
}

Checkpoint::Entry* Checkpoint::find(const std::string& name) {
  for (auto& e : tensors)
    if (e.name == name) return &e;
  return nullptr;
}

void Checkpoint::save(const std::string& path) const {
  std::string buf;
  put_bytes(buf, kMagic, 4);
  put<uint32_t>(buf, version);
  put<uint64_t>(buf, config_digest);
  put<uint64_t>(buf, step);
  put<uint32_t>(buf, static_cast<uint32_t>(tensors.size()));
  for (const auto& e : tensors) {
    if (e.name.size() > 0xffff) throw std::invalid_argument("checkpoint: tensor name too long");
    put<uint16_t>(buf, static_cast<uint16_t>(e.name.size()));
    put_bytes(buf, e.name.data(), e.name.size());
    put<uint8_t>(buf, 0);  // dtype: float32
    put<uint8_t>(buf, e.frozen ? 1 : 0);
    put_tensor_payload(buf, e.data);
  }
  put<uint64_t>(buf, fnv1a64(buf.data(), buf.size()));
  write_all(path, buf, "checkpoint");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::string buf = read_all(path, "checkpoint");
  if (buf.size() < 4 + 4 + 8 + 8 + 4 + 8) throw std::runtime_error("checkpoint: truncated file");
  uint64_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  if (stored != fnv1a64(buf.data(), buf.size() - 8))
    throw std::runtime_error("checkpoint: checksum mismatch (corrupt or truncated)");

  Reader r(buf, "checkpoint");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic, not a checkpoint file");
  Checkpoint ck;
  ck.version = r.get<uint32_t>();
  if (ck.version != kVersion)
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(ck.version));
  ck.config_digest = r.get<uint64_t>();
  ck.step = r.get<uint64_t>();
  uint32_t n = r.get<uint32_t>();
  ck.tensors.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    Entry e;
    uint16_t len = r.get<uint16_t>();
    e.name = r.str(len);
    uint8_t dtype = r.get<uint8_t>();
    if (dtype != 0) throw std::runtime_error("checkpoint: unsupported dtype");
    e.frozen = r.get<uint8_t>() != 0;
    e.data = get_tensor_payload(r, "checkpoint");
    ck.tensors.push_back(std::move(e));
  }
  if (r.pos() != buf.size() - 8) throw std::runtime_error("checkpoint: trailing garbage");
  return ck;
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::string buf;
  put_bytes(buf, kTensorMagic, 4);
  put_tensor_payload(buf, t);
  put<uint64_t>(buf, fnv1a64(buf.data(), buf.size()));
  write_all(path, buf, "tensor file");
}

Tensor load_tensor(const std::string& path) {
  std::string buf = read_all(path, "tensor file");
  if (buf.size() < 4 + 1 + 8) throw std::runtime_error("tensor file: truncated");
  uint64_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  if (stored != fnv1a64(buf.data(), buf.size() - 8))
    throw std::runtime_error("tensor file: checksum mismatch");
  Reader r(buf, "tensor file");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kTensorMagic, 4) != 0)
    throw std::runtime_error("tensor file: bad magic");
  Tensor t = get_tensor_payload(r, "tensor file");
  if (r.pos() != buf.size() - 8) throw std::runtime_error("tensor file: trailing garbage");
  return t;
}

}  // namespace infgen
