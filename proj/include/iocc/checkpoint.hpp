#pragma once

// Checkpoint container: 16-byte magic "IOCCCK01", u64 header (d, hidden_c, K,
// hidden_p, D, activation, shared_hidden, iter), the eight weight tensors as little-endian
// f64, Adam state (t, beta1, beta2, eps, m tensors, v tensors), then an
// optional center bank section (u64 present flag, K, D, C, valid, counts).

#include <filesystem>
#include <optional>

#include "iocc/centers.hpp"
#include "iocc/model.hpp"

namespace iocc {

struct Checkpoint {
  ModelParams params;
  AdamState adam;
  std::optional<CenterBank> bank;
  long iter = 0;
};

void save_checkpoint(const Checkpoint &ck, const std::filesystem::path &path);
Checkpoint load_checkpoint(const std::filesystem::path &path);

} // namespace iocc
