#pragma once

// Checkpoint container. All integers little-endian.
//
//   8 bytes   magic "DUCSEGCK"
//   u32       format version (1)
//   u64 + n   model configuration as key=value text
//   u32       tensor count
//   per tensor:
//     u32 + n   name
//     u8        kind: 0 learnable, 1 buffer (batch-norm running statistics)
//     u64       element count
//     f64 * count  values (IEEE-754 binary64)
//
// Tensors appear in visit order, learnables first, so loading checks each
// name and length against a freshly built model of the stored configuration.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ducseg/config.hpp"
#include "ducseg/errors.hpp"
#include "ducseg/model.hpp"

namespace ducseg {

inline constexpr char kCheckpointMagic[8] = {'D', 'U', 'C', 'S', 'E', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> buf) : buf_(std::move(buf)) {}
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <class U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string str(std::size_t len) {
    need(len);
    std::string s(buf_.data() + pos_, len);
    pos_ += len;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

struct NamedTensor {
  std::string name;
  std::uint8_t kind;
  std::span<double> values;
};

inline std::vector<NamedTensor> checkpoint_tensors(ModelParams<double>& p) {
  std::vector<NamedTensor> out;
  p.visit([&](const std::string& n, std::span<double> v) { out.push_back({n, 0, v}); });
  p.visit_buffers([&](const std::string& n, std::span<double> v) { out.push_back({n, 1, v}); });
  return out;
}

}  // namespace detail

/// Serialized checkpoint bytes; identical inputs give identical bytes.
inline std::vector<char> checkpoint_bytes(const ModelConfig& cfg, ModelParams<double>& params) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.uint(kCheckpointVersion);
  const std::string text = model_config_text(cfg);
  w.uint(static_cast<std::uint64_t>(text.size()));
  w.bytes(text.data(), text.size());
  const auto tensors = detail::checkpoint_tensors(params);
  w.uint(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.str(t.name);
    w.uint(t.kind);
    w.uint(static_cast<std::uint64_t>(t.values.size()));
    for (double v : t.values) w.f64(v);
  }
  return w.data();
}

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg, ModelParams<double>& params) {
  const auto bytes = checkpoint_bytes(cfg, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("cannot write checkpoint " + path);
}

struct Checkpoint {
  ModelConfig config;
  ModelParams<double> params;
};

inline Checkpoint parse_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw FormatError("not a checkpoint (bad magic)");
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto text = r.str(static_cast<std::size_t>(r.uint<std::uint64_t>()));
  Checkpoint ck;
  try {
    ck.config = parse_model_config(text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint configuration invalid: ") + e.what());
  }
  SplitMix64 rng(0);
  ck.params = init_model_params<double>(ck.config, rng);
  auto tensors = detail::checkpoint_tensors(ck.params);
  const auto count = r.uint<std::uint32_t>();
  if (count != tensors.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                      std::to_string(tensors.size()));
  }
  for (auto& t : tensors) {
    const auto name = r.str(r.uint<std::uint32_t>());
    const auto kind = r.uint<std::uint8_t>();
    const auto n = r.uint<std::uint64_t>();
    if (name != t.name || kind != t.kind || n != t.values.size()) {
      throw FormatError("checkpoint tensor '" + name + "' (" + std::to_string(n) +
                        " values) does not match expected '" + t.name + "' (" +
                        std::to_string(t.values.size()) + " values)");
    }
    for (auto& v : t.values) v = r.f64();
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint tensors");
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(std::move(bytes));
}

}  // namespace ducseg
