#include "geocaps/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "geocaps/error.hpp"

namespace geocaps {

namespace {

constexpr char kMagic[4] = {'G', 'C', 'A', 'P'};

// This layout is defined little-endian; serialization goes through memcpy of
// native integers, which matches on every platform the artifact targets.

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const std::size_t at = out.size();
  out.resize(at + sizeof(T));
  std::memcpy(out.data() + at, &v, sizeof(T));
}

void put_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const std::size_t at = out.size();
  out.resize(at + n);
  std::memcpy(out.data() + at, p, n);
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  put_bytes(out, s.data(), s.size());
}

void put_tensor(std::vector<std::uint8_t>& out, const CheckpointTensor& t) {
  put_string(out, t.name);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
  std::uint64_t numel = 1;
  for (std::int64_t d : t.dims) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    numel *= static_cast<std::uint64_t>(d);
  }
  if (numel != t.values.size()) {
    throw CheckpointError("tensor " + t.name + " dims do not match value count");
  }
  put_bytes(out, t.values.data(), t.values.size() * sizeof(float));
}

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n, const std::string& path)
      : p_(p), n_(n), path_(path) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > n_) corrupt("unexpected end of file");
    T v;
    std::memcpy(&v, p_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string() {
    const auto len = get<std::uint32_t>();
    if (pos_ + len > n_) corrupt("unexpected end of string");
    std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
    pos_ += len;
    return s;
  }

  CheckpointTensor get_tensor() {
    CheckpointTensor t;
    t.name = get_string();
    const auto rank = get<std::uint32_t>();
    if (rank > 8) corrupt("implausible tensor rank");
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = get<std::uint32_t>();
      t.dims.push_back(static_cast<std::int64_t>(d));
      numel *= d;
    }
    if (pos_ + numel * sizeof(float) > n_) corrupt("tensor payload exceeds file size");
    t.values.resize(numel);
    std::memcpy(t.values.data(), p_ + pos_, numel * sizeof(float));
    pos_ += numel * sizeof(float);
    return t;
  }

  [[noreturn]] void corrupt(const std::string& why) const {
    throw CheckpointError("corrupt checkpoint " + path_ + ": " + why);
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  put_bytes(out, kMagic, 4);
  put<std::uint32_t>(out, ckpt.version);
  put<std::uint32_t>(out, ckpt.has_optimizer ? 1u : 0u);
  put<std::uint64_t>(out, ckpt.digest);
  put_string(out, ckpt.config_json);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) put_tensor(out, t);
  if (ckpt.has_optimizer) {
    put<std::uint64_t>(out, ckpt.adam_step);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.adam_m.size()));
    for (const auto& t : ckpt.adam_m) put_tensor(out, t);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.adam_v.size()));
    for (const auto& t : ckpt.adam_v) put_tensor(out, t);
  }
  const std::uint64_t checksum = fnv1a64(out.data(), out.size());
  put<std::uint64_t>(out, checksum);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(out.size()) + 8);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw DataError("checkpoint not found: " + path);
  }
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 32) throw CheckpointError("corrupt checkpoint " + path + ": too short");

  std::uint64_t stored_len = 0, stored_sum = 0;
  std::memcpy(&stored_len, bytes.data() + bytes.size() - 8, 8);
  std::memcpy(&stored_sum, bytes.data() + bytes.size() - 16, 8);
  if (stored_len != bytes.size()) {
    throw CheckpointError("corrupt checkpoint " + path + ": length field " +
                          std::to_string(stored_len) + " does not match file size " +
                          std::to_string(bytes.size()));
  }
  if (fnv1a64(bytes.data(), bytes.size() - 16) != stored_sum) {
    throw CheckpointError("corrupt checkpoint " + path + ": checksum mismatch");
  }

  Reader r(bytes.data(), bytes.size() - 16, path);
  char magic[4];
  magic[0] = static_cast<char>(r.get<std::uint8_t>());
  magic[1] = static_cast<char>(r.get<std::uint8_t>());
  magic[2] = static_cast<char>(r.get<std::uint8_t>());
  magic[3] = static_cast<char>(r.get<std::uint8_t>());
  if (std::memcmp(magic, kMagic, 4) != 0) r.corrupt("bad magic");

  Checkpoint ckpt;
  ckpt.version = r.get<std::uint32_t>();
  if (ckpt.version != 1) r.corrupt("unsupported version " + std::to_string(ckpt.version));
  const auto flags = r.get<std::uint32_t>();
  ckpt.has_optimizer = (flags & 1u) != 0;
  ckpt.digest = r.get<std::uint64_t>();
  ckpt.config_json = r.get_string();
  const auto count = r.get<std::uint32_t>();
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) ckpt.tensors.push_back(r.get_tensor());
  if (ckpt.has_optimizer) {
    ckpt.adam_step = r.get<std::uint64_t>();
    const auto mc = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < mc; ++i) ckpt.adam_m.push_back(r.get_tensor());
    const auto vc = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < vc; ++i) ckpt.adam_v.push_back(r.get_tensor());
  }
  return ckpt;
}

}  // namespace geocaps
