#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sinogan/io.hpp"
#include "sinogan/tensor.hpp"

namespace sinogan {

struct NamedTensor {
  std::string name;
  Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// CKPT layout, all integers u32 little-endian:
//   "CKPT" version metadata_len metadata_text tensor_count
//   per tensor: name_len name rank dims[rank] f64 values
// metadata_text is "key=value\n" lines in insertion order.
struct ModelCheckpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<NamedTensor> tensors;

  void set(const std::string& key, const std::string& value);
  std::optional<std::string> get(const std::string& key) const;
  // Throws FormatError when absent.
  const std::string& require(const std::string& key) const;
  const Tensor* find(const std::string& name) const;

  friend bool operator==(const ModelCheckpoint&, const ModelCheckpoint&) = default;
};

io::Bytes encode_checkpoint(const ModelCheckpoint& checkpoint);
ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> data, const std::string& what = "checkpoint");
void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& checkpoint);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sinogan
