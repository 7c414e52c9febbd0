#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rxnpt/autograd.h"

namespace rxnpt {

class CheckpointError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// On-disk layout:
//   "RPT1" | header length (u64 little-endian) | JSON header | payloads
// The header lists tensors in payload order as {name, shape}; payloads are raw
// little-endian reals of the header's dtype.
struct Checkpoint {
  std::string config_hash;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor *find(const std::string &name) const;
};

void write_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt);
Checkpoint read_checkpoint(const std::filesystem::path &path);

std::string encode_checkpoint(const Checkpoint &ckpt);
Checkpoint decode_checkpoint(const std::string &bytes);

// Parameter values, plus AdamW moments and step counts when with_optimizer.
void store_parameters(const ParameterSet &params, Checkpoint &ckpt, bool with_optimizer);

// Loads every parameter whose name starts with `prefix` from the checkpoint.
// Throws CheckpointError on a missing tensor or shape mismatch.
void load_parameters(const Checkpoint &ckpt, ParameterSet &params, bool with_optimizer,
                     const std::string &prefix = "");

}  // namespace rxnpt
