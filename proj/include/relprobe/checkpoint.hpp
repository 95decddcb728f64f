#pragma once

// RPCK checkpoint container: named float32 tensors plus a trailing UTF-8
// configuration blob.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace relprobe {

struct CheckpointTensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> data;
  friend bool operator==(const CheckpointTensor&, const CheckpointTensor&) = default;
};

struct Checkpoint {
  std::vector<CheckpointTensor> tensors;
  std::string blob;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// FNV-1a over the file bytes; identifies a checkpoint in caches.
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace relprobe
