#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "lmu/model.hpp"

namespace lmu {

// ---------------------------------------------------------------------------
// Checkpoint container: "LMUC" magic, u32 format version, precision tag,
// named tensor records (little-endian), and a trailing CRC32 over everything
// before it. Round trips are bit-exact.
// ---------------------------------------------------------------------------

class FormatError : public Error {
 public:
  using Error::Error;
};
class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};
class CrcError : public FormatError {
 public:
  using FormatError::FormatError;
};

namespace detail {

inline const std::array<std::uint32_t, 256>& crc32_table() {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  return table;
}

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
  std::uint32_t c = 0xFFFFFFFFu;
  const auto& table = crc32_table();
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}
inline void put_u64(std::vector<std::uint8_t>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t len) : data_(data), len_(len) {}
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return len_ - pos_; }

  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > len_) throw FormatError("checkpoint truncated: need " + std::to_string(n) +
                                           " bytes at offset " + std::to_string(pos_));
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    const std::uint8_t* p = take(8);
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }

 private:
  const std::uint8_t* data_;
  std::size_t len_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensorsF32 = std::vector<std::pair<std::string, Tensor<float>>>;
using NamedTensorsF64 = std::vector<std::pair<std::string, Tensor<double>>>;

template <typename T>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors) {
  std::vector<std::uint8_t> buf;
  buf.push_back('L');
  buf.push_back('M');
  buf.push_back('U');
  buf.push_back('C');
  detail::put_u32(buf, kCheckpointVersion);
  buf.push_back(static_cast<std::uint8_t>(sizeof(T)));  // precision tag: 4 or 8
  detail::put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    detail::put_u32(buf, static_cast<std::uint32_t>(t->rank()));
    for (auto e : t->shape()) detail::put_u64(buf, static_cast<std::uint64_t>(e));
    const std::size_t bytes = static_cast<std::size_t>(t->size()) * sizeof(T);
    const std::size_t at = buf.size();
    buf.resize(at + bytes);
    std::memcpy(buf.data() + at, t->data(), bytes);
  }
  detail::put_u32(buf, detail::crc32(buf.data(), buf.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw Error("write failed for '" + path + "'");
}

// Reads the precision tag without loading payloads.
inline int checkpoint_precision(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  char head[9];
  f.read(head, 9);
  if (!f) throw FormatError("checkpoint truncated: header incomplete");
  if (std::memcmp(head, "LMUC", 4) != 0)
    throw BadMagicError("bad checkpoint magic '" + std::string(head, 4) + "'");
  return static_cast<int>(static_cast<std::uint8_t>(head[8]));
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 13) throw FormatError("checkpoint truncated: only " + std::to_string(buf.size()) + " bytes");
  if (std::memcmp(buf.data(), "LMUC", 4) != 0)
    throw BadMagicError("bad checkpoint magic '" +
                        std::string(reinterpret_cast<const char*>(buf.data()), 4) + "'");

  const std::uint32_t stored_crc =
      static_cast<std::uint32_t>(buf[buf.size() - 4]) | (static_cast<std::uint32_t>(buf[buf.size() - 3]) << 8) |
      (static_cast<std::uint32_t>(buf[buf.size() - 2]) << 16) |
      (static_cast<std::uint32_t>(buf[buf.size() - 1]) << 24);
  const std::uint32_t actual_crc = detail::crc32(buf.data(), buf.size() - 4);
  if (stored_crc != actual_crc)
    throw CrcError("checkpoint CRC mismatch (stored " + std::to_string(stored_crc) + ", computed " +
                   std::to_string(actual_crc) + ")");

  detail::Reader r(buf.data(), buf.size() - 4);
  const std::uint8_t* magic = r.take(4);
  if (std::memcmp(magic, "LMUC", 4) != 0)
    throw BadMagicError("bad checkpoint magic '" +
                        std::string(reinterpret_cast<const char*>(magic), 4) + "'");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw VersionError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  const std::uint8_t tag = *r.take(1);
  if (tag != sizeof(T))
    throw FormatError("checkpoint precision tag " + std::to_string(tag) + " does not match f" +
                      std::to_string(8 * sizeof(T)));
  const std::uint32_t count = r.u32();
  std::vector<std::pair<std::string, Tensor<T>>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    const std::uint8_t* name_p = r.take(name_len);
    std::string name(reinterpret_cast<const char*>(name_p), name_len);
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t j = 0; j < rank; ++j) shape.push_back(static_cast<std::int64_t>(r.u64()));
    const std::int64_t numel = shape_numel(shape);
    const std::uint8_t* payload = r.take(static_cast<std::size_t>(numel) * sizeof(T));
    std::vector<T> data(static_cast<std::size_t>(numel));
    std::memcpy(data.data(), payload, data.size() * sizeof(T));
    out.emplace_back(std::move(name), Tensor<T>(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint has trailing bytes");
  return out;
}

// ---------------------------------------------------------------------------
// Model persistence: configuration scalars are stored alongside parameters
// under "config.*"; callers may append extra tensors (optimizer state).
// ---------------------------------------------------------------------------

template <typename T>
void save_model(const std::string& path, Model<T>& model,
                const std::vector<std::pair<std::string, const Tensor<T>*>>& extra = {}) {
  std::vector<std::pair<std::string, Tensor<T>>> config;
  auto scalar = [&](const std::string& name, double v) {
    config.emplace_back(name, Tensor<T>(Shape{1}, {static_cast<T>(v)}));
  };
  scalar("config.n", static_cast<double>(model.cfg.n));
  scalar("config.vocab", static_cast<double>(model.cfg.vocab));
  scalar("config.d", static_cast<double>(model.cfg.d));
  scalar("config.layers", static_cast<double>(model.cfg.layers));
  scalar("config.d_prime", static_cast<double>(model.cfg.d_prime));
  scalar("config.variant", model.cfg.variant == Variant::lmu ? 0.0 : 1.0);
  scalar("config.theta", model.cfg.lmu.theta);
  scalar("config.q", static_cast<double>(model.cfg.lmu.q));
  scalar("config.q_prime", static_cast<double>(model.cfg.lmu.q_prime));

  std::vector<std::pair<std::string, const Tensor<T>*>> tensors;
  for (const auto& [name, t] : config) tensors.emplace_back(name, &t);
  for_each_param(model.params, model.cfg.variant,
                 [&](const std::string& name, Tensor<T>& t) { tensors.emplace_back(name, &t); });
  for (const auto& [name, t] : extra) tensors.emplace_back(name, t);
  save_checkpoint(path, tensors);
}

template <typename T>
Model<T> load_model(const std::string& path,
                    std::vector<std::pair<std::string, Tensor<T>>>* extra_out = nullptr) {
  auto records = load_checkpoint<T>(path);
  auto find = [&](const std::string& name) -> Tensor<T>* {
    for (auto& [n, t] : records)
      if (n == name) return &t;
    return nullptr;
  };
  auto scalar = [&](const std::string& name) {
    Tensor<T>* t = find(name);
    if (!t) throw FormatError("checkpoint missing '" + name + "'");
    return static_cast<double>((*t)[0]);
  };
  ModelConfig cfg;
  cfg.n = static_cast<std::int64_t>(scalar("config.n"));
  cfg.vocab = static_cast<std::int64_t>(scalar("config.vocab"));
  cfg.d = static_cast<std::int64_t>(scalar("config.d"));
  cfg.layers = static_cast<std::int64_t>(scalar("config.layers"));
  cfg.d_prime = static_cast<std::int64_t>(scalar("config.d_prime"));
  cfg.variant = scalar("config.variant") == 0.0 ? Variant::lmu : Variant::lmu_global;
  cfg.lmu = LmuConfig::make(scalar("config.theta"), static_cast<std::int64_t>(scalar("config.q")),
                            static_cast<std::int64_t>(scalar("config.q_prime")));

  Model<T> model = Model<T>::init(cfg, 0);
  std::vector<bool> used(records.size(), false);
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].first.rfind("config.", 0) == 0) used[i] = true;
  for_each_param(model.params, cfg.variant, [&](const std::string& name, Tensor<T>& t) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].first == name) {
        if (records[i].second.shape() != t.shape())
          throw FormatError("checkpoint tensor '" + name + "' has shape " +
                            shape_str(records[i].second.shape()) + ", expected " +
                            shape_str(t.shape()));
        t = std::move(records[i].second);
        used[i] = true;
        return;
      }
    }
    throw FormatError("checkpoint missing parameter '" + name + "'");
  });
  if (extra_out) {
    extra_out->clear();
    for (std::size_t i = 0; i < records.size(); ++i)
      if (!used[i]) extra_out->push_back(std::move(records[i]));
  }
  return model;
}

}  // namespace lmu
