#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lmu/tensor.hpp"

namespace lmu {

// Byte-level tokenizer: byte b maps to id b, id 256 is the end-of-sequence
// separator (vocab size 257). No external vocabulary required.
inline constexpr std::int32_t kSeparatorId = 256;
inline constexpr std::int64_t kByteVocab = 257;

inline std::vector<std::int32_t> tokenize(const std::string& bytes) {
  std::vector<std::int32_t> ids;
  ids.reserve(bytes.size());
  for (unsigned char b : bytes) ids.push_back(static_cast<std::int32_t>(b));
  return ids;
}

// Drops separator ids; any id above the separator is rejected.
inline std::string detokenize(const std::vector<std::int32_t>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (std::int32_t id : ids) {
    if (id == kSeparatorId) continue;
    if (id < 0 || id > kSeparatorId)
      throw DomainError("detokenize: id " + std::to_string(id) + " outside [0, 256]");
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Document packing: documents are concatenated with a separator between them
// and chunked into length-n sequences. The final partial chunk is padded with
// separators that are masked out of the loss (mask 0 = padding).
// ---------------------------------------------------------------------------

struct PackedCorpus {
  std::int64_t n = 0;
  std::vector<std::vector<std::int32_t>> sequences;
  std::vector<std::vector<std::uint8_t>> masks;

  std::int64_t sequence_count() const { return static_cast<std::int64_t>(sequences.size()); }

  std::int64_t unmasked_tokens() const {
    std::int64_t total = 0;
    for (const auto& m : masks)
      for (auto v : m) total += v;
    return total;
  }
};

inline PackedCorpus pack_corpus(const std::vector<std::string>& documents, std::int64_t n) {
  if (n < 2) throw ConfigError("pack_corpus: n must be >= 2");
  PackedCorpus out;
  out.n = n;
  std::vector<std::int32_t> stream;
  for (std::size_t i = 0; i < documents.size(); ++i) {
    const auto ids = tokenize(documents[i]);
    stream.insert(stream.end(), ids.begin(), ids.end());
    if (i + 1 < documents.size()) stream.push_back(kSeparatorId);
  }
  for (std::size_t off = 0; off < stream.size(); off += static_cast<std::size_t>(n)) {
    std::vector<std::int32_t> seq(static_cast<std::size_t>(n), kSeparatorId);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
    const std::size_t len = std::min(static_cast<std::size_t>(n), stream.size() - off);
    for (std::size_t j = 0; j < len; ++j) {
      seq[j] = stream[off + j];
      mask[j] = 1;
    }
    out.sequences.push_back(std::move(seq));
    out.masks.push_back(std::move(mask));
  }
  return out;
}

}  // namespace lmu
