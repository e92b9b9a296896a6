#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "foreranker/encoder.hpp"

// Checkpoint layout (all integers little-endian, values IEEE-754 binary64):
//
//   magic         8 bytes  "FRNKCKPT"
//   version       u32
//   architecture  7 x u64  vocab_size d_model heads ff_width layers max_length head_hidden
//   vocab_hash    u64
//   tensor_count  u32
//   tensors       { u32 name_len, name, u64 rows, u64 cols, f64 x rows*cols }
//   checksum      u64      FNV-1a over every preceding byte

namespace foreranker {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  ArchConfig arch;
  std::uint64_t vocab_hash = 0;
};

template <typename T>
void save_checkpoint(const ModelParams<T>& params, std::uint64_t vocab_hash,
                     const std::filesystem::path& path);

/// Reads only the header. Throws ParseError on a malformed file.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Throws ParseError on a truncated or corrupt file and InputError when the
/// stored architecture differs from `expected`. Nothing is returned on error.
template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path,
                               const std::optional<ArchConfig>& expected = std::nullopt,
                               CheckpointHeader* header = nullptr);

}  // namespace foreranker
