#pragma once

#include <cstdint>
#include <filesystem>

#include "lrfr/model.hpp"
#include "lrfr/tensor.hpp"

namespace lrfr {

// Binary array container: header {magic "LRFRCKPT", u32 version}, then one
// record per array {u32 name length, name bytes, u8 dtype (0 = f32,
// 1 = f64), u32 rank, i64 extents, row-major payload} until EOF.
// Everything little-endian. Writers emit f64; readers widen f32.
inline constexpr uint32_t kCheckpointVersion = 1;

// Atomic: writes to path + ".tmp", then renames.
void write_tensors(const std::filesystem::path& path,
                   const NamedTensors& tensors);
NamedTensors read_tensors(const std::filesystem::path& path);

struct Checkpoint {
  NetworkConfig config;
  NetworkParams params;        // requires_grad set on load
  Tensor class_weights;        // K x embedding_dim
};

// Network config and class-weight matrix ride along as reserved
// "__meta.*" / "class_weights" records next to the parameters.
void save_checkpoint(const std::filesystem::path& path,
                     const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lrfr
