#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "gcrl/model.hpp"

namespace gcrl {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout (little-endian): "GCRLCKPT", u32 version, u64 length +
/// config text, u32 tensor count, then per tensor: u32 length + name,
/// u8 partition group, u64 rows, u64 cols, rows*cols f64 in row-major order.
struct Checkpoint {
  std::string config_text;
  std::map<std::string, Matrix> tensors;
  std::map<std::string, ParamGroup> groups;
};

Checkpoint capture(GcrlModel& model, const std::string& config_text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies tensors into the model; names, shapes and partition tags must match.
void restore(GcrlModel& model, const Checkpoint& ckpt);

/// FNV-1a over names and raw bytes of the z-branch tensors.
std::uint64_t z_branch_hash(GcrlModel& model);

}  // namespace gcrl
