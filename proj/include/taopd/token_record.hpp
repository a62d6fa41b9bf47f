#pragma once

#include <cstdint>
#include <string>

#include "taopd/sparse_dist.hpp"

namespace taopd {

/// One response position of an on-policy rollout: the context identity,
/// the sampled token, and the student/teacher next-token distributions.
struct TokenRecord {
  std::string prompt_id;   // cluster key for bootstrap resampling
  std::string context_id;  // one rollout / prefix chain
  int32_t position = 0;
  int32_t sampled_token = 0;
  dist::SparseTokenDist student;
  dist::SparseTokenDist teacher;
  bool valid = true;
  std::string batch_id;  // optional grouping for per-batch normalization
};

}  // namespace taopd
