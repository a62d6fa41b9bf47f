#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "taopd/stats.hpp"
#include "taopd/token_record.hpp"

namespace taopd::teach {

/// A budgeted keep-mask over batch positions. n_kept is always exactly
/// ceil(rho * |valid positions|).
struct SelectionMask {
  SelectorKind selector = SelectorKind::teach;
  double rho = 1.0;
  int64_t n_kept = 0;
  std::vector<uint8_t> keep;  // aligned with the batch, subset of valid
  uint64_t seed = 0;          // meaningful for the random selector only
};

/// Tie-break identity for one batch position. Equal scores are resolved by
/// ascending position, then ascending context_id, then batch index.
struct TieKey {
  int32_t position = 0;
  std::string context_id;
};

/// Keeps the top-n valid positions by score (n = ceil(rho*|valid|)).
/// The random selector ignores scores and samples n valid positions
/// uniformly, reproducibly from `seed`. Throws DomainError on rho outside
/// (0,1] and ValidationError when no position is valid.
SelectionMask select(std::span<const double> scores, std::span<const uint8_t> valid,
                     std::span<const TieKey> keys, double rho, SelectorKind selector,
                     uint64_t seed = 0);

/// Low-level variant with an explicit keep count instead of a ratio
/// (used by budget-matched interventions whose n comes from a different
/// candidate pool than `valid`).
SelectionMask select_top_n(std::span<const double> scores, std::span<const uint8_t> valid,
                           std::span<const TieKey> keys, int64_t n, SelectorKind selector,
                           uint64_t seed = 0);

/// Convenience: scores + tie keys derived from records and normalized stats.
SelectionMask select(std::span<const TokenRecord> records,
                     std::span<const NormalizedStats> norm, double rho,
                     SelectorKind selector, uint64_t seed = 0);

enum class LossEstimator { full_kl, sampled_token };

struct MaskedLossResult {
  double loss = 0.0;
  int64_t n_tokens = 0;
  int64_t floored = 0;  // sampled tokens missing from a distribution
};

/// Mean per-token OPD loss over the mask's kept positions. full_kl is the
/// reverse KL on the student's listed support against the teacher;
/// sampled_token is log p_student(y) - log p_teacher(y) and may be negative.
MaskedLossResult masked_opd_loss(std::span<const TokenRecord> records,
                                 const SelectionMask& mask, LossEstimator estimator);

struct Q3Spec {
  double entropy_quantile = 0.5;
  double kl_quantile = 0.5;
};

/// Membership in the low-entropy/high-disagreement region: H~ strictly below
/// the batch entropy quantile and D~ strictly above the batch KL quantile.
/// Thresholds are estimated over the rows marked valid (all when empty).
std::vector<uint8_t> q3_membership(std::span<const NormalizedStats> norm, const Q3Spec& spec,
                                   std::span<const uint8_t> valid = {});

}  // namespace taopd::teach
