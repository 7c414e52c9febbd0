#pragma once

#include <cstdint>
#include <string_view>

namespace rxnpt {

// Deterministic sub-seed for a named component of a run. Every random source
// in the library is seeded through this so a single root seed fixes a run.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t a = 0,
                          std::uint64_t b = 0);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace rxnpt
