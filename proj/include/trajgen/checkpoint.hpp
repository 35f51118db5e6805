#pragma once

#include <string>

#include "trajgen/optimizer.hpp"
#include "trajgen/transformer.hpp"

namespace trajgen {

// Checkpoint container (all integers and doubles little-endian):
//   magic "TRJGCKPT", u32 version
//   config block: n_layers, n_heads, d_model, block_size, vocab_size (i64),
//                 dropout (f64), seed (u64), head kind (i64)
//   metadata: u64 length + UTF-8 bytes (free-form JSON)
//   parameters: u64 count, then per parameter name, rows, cols, f64 payload
//   optimizer: u8 present; step, lr, beta1, beta2, eps, weight decay, clip,
//              then first and second moments in parameter order
//   dropout RNG state: u64 length + text
//   u64 FNV-1a checksum of everything before it
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TransformerModel model;
  bool has_optimizer = false;
  AdamW optimizer;
  std::string metadata;
};

void save_checkpoint(const std::string& path, const TransformerModel& model,
                     const AdamW* optimizer, const std::string& metadata);
Checkpoint load_checkpoint(const std::string& path);
// Loads into an existing model; rejects a checkpoint whose config differs.
std::string load_checkpoint_into(const std::string& path, TransformerModel& model, AdamW* optimizer);

// Hash of the file bytes, for provenance records.
std::string file_hash(const std::string& path);

}  // namespace trajgen
