#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "taopd/token_record.hpp"

namespace taopd::teach {

/// Raw per-token measurements before any batch normalization.
struct TokenStats {
  double d = 0.0;            // local disagreement: KL(teacher||student) on the K-union
  double c = 0.0;            // compatibility: teacher mass on the student top-K
  double c_hat = 0.0;        // lower bound: teacher mass on the top-K intersection
  double h_student = 0.0;    // truncated student entropy, nats
  double h_teacher = 0.0;    // truncated teacher entropy, nats
  double raw_kl_sampled = 0.0;  // log p_student(y) - log p_teacher(y)
  double pos_norm = 0.0;     // position / (sequence length - 1), in [0,1]
  int k = 0;                 // support size used
  bool c_exact = true;       // false when teacher scores were missing on the
                             // student support and c fell back to c_hat
  bool sampled_floored = false;  // y was absent from a dist and got the floor
};

struct NormalizationConfig {
  double q_low = 0.05;
  double q_high = 0.95;
  double epsilon = 1e-8;
  enum class Scope { per_batch, per_dataset } scope = Scope::per_batch;
};

enum class SelectorKind {
  teach,        // D~ * C~
  entropy,      // H~
  raw_kl,       // D~
  compat,       // C~
  tip,          // H~ + D~ - H~ D~
  h_plus_teach, // H~ + s_teach - H~ s_teach
  d_incomp,     // D~ * (1 - C~)
  random,       // uniform over valid positions
};

const char* selector_name(SelectorKind kind);
SelectorKind selector_from_name(const std::string& name);

/// All deterministic selector kinds (everything except random), in the
/// order their score columns appear in the score CSV.
std::span<const SelectorKind> scored_selectors();

/// Batch-normalized scores for one token.
struct NormalizedStats {
  double d_tilde = 0.0;
  double c_tilde = 0.0;
  double h_tilde = 0.0;
  double d_learn = 0.0;   // D~ * C~
  double d_incomp = 0.0;  // D~ * (1 - C~)

  double score(SelectorKind kind) const;
};

/// Computes raw stats for one record. `seq_len` (tokens in the record's
/// context) is needed for pos_norm; pass 0 when unknown.
TokenStats compute_stats(const TokenRecord& record, int k, int seq_len = 0);

/// Per-record stats for a whole batch; sequence lengths are derived from the
/// records' (context_id, position) pairs. OpenMP-parallel over records.
std::vector<TokenStats> compute_stats_batch(std::span<const TokenRecord> records, int k);

/// Serial reference for compute_stats_batch; results are bit-identical.
std::vector<TokenStats> compute_stats_batch_serial(std::span<const TokenRecord> records, int k);

/// q-quantile by linear interpolation between order statistics.
double quantile(std::span<const double> sorted_values, double q);

/// clip((z - Q_low) / (Q_high - Q_low + eps), 0, 1) per value, with the
/// quantiles estimated from `values` itself.
std::vector<double> robust_normalize(std::span<const double> values, const NormalizationConfig& cfg);

/// Normalizes a batch of raw stats. Quantiles are estimated over the rows
/// marked valid (all rows when `valid` is empty); every row is then mapped
/// through the same transform.
std::vector<NormalizedStats> normalize_batch(std::span<const TokenStats> stats,
                                             const NormalizationConfig& cfg,
                                             std::span<const uint8_t> valid = {});

}  // namespace taopd::teach
