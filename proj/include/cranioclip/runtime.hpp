#pragma once

#include <cblas.h>

#include <cstdlib>
#include <string_view>

namespace cranioclip::runtime {

inline constexpr const char* kDeterministicEnv = "CRANIOCLIP_DETERMINISTIC";

/// True when CRANIOCLIP_DETERMINISTIC=1.
inline bool deterministic() {
  const char* v = std::getenv(kDeterministicEnv);
  return v != nullptr && std::string_view(v) == "1";
}

/// Caps BLAS worker threads. Deterministic mode pins a single thread so
/// every reduction runs in one fixed order; `n <= 0` keeps the library default.
inline int configure_threads(int n) {
  if (deterministic()) n = 1;
  if (n > 0) openblas_set_num_threads(n);
  return n;
}

}  // namespace cranioclip::runtime
