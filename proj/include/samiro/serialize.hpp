#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "samiro/tensor.hpp"

namespace samiro {

// Tensor record: "SMRT", u32 version, u32 rank, u32 extents[rank],
// u8 element size (4 or 8), little-endian payload.
inline constexpr std::uint32_t kTensorFormatVersion = 1;

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t);

// Reads either element size and converts to T.
template <typename T>
Tensor<T> read_tensor(std::istream& is);

/// Named tensors plus a key=value architecture manifest.
///
/// File layout: "SMRK", u32 version, u32 manifest byte length, manifest text
/// (one key=value per line), u32 tensor count, then per tensor a u32 name
/// length, the name bytes and one SMRT record. Entries are in name order, so
/// identical contents give identical bytes.
struct Checkpoint {
  std::map<std::string, std::string> manifest;
  std::map<std::string, Tensor<float>> tensors;

  const std::string& require(const std::string& key) const;
  const Tensor<float>& tensor(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace samiro
