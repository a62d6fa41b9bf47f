#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace taopd::dist {

/// Log-probability assigned to a support token that is missing from a
/// distribution's listed entries. Keeps union-support KL finite and
/// deterministic instead of undefined at exact zeros.
inline constexpr double kAbsentLogProb = -30.0;

/// Minimum probability mass that must survive a support restriction.
inline constexpr double kMassFloor = 1e-12;

/// Tolerance on sum(exp(logprob)) + tail_mass when validating a distribution.
inline constexpr double kMassTol = 1e-6;

struct SparseEntry {
  int32_t token = 0;
  double logprob = 0.0;
};

/// A top-K truncated next-token distribution: token ids plus natural-log
/// probabilities, with an optional known probability mass outside the
/// listed entries. Canonical entry order is descending logprob with ties
/// broken by ascending token id.
struct SparseTokenDist {
  std::vector<SparseEntry> entries;
  std::optional<double> tail_mass;
  int32_t vocab_size = 0;

  /// Logprob of `token`, or kAbsentLogProb when not listed.
  double logprob_or_floor(int32_t token) const;
  /// True when `token` appears among the listed entries.
  bool contains(int32_t token) const;
};

/// Sorts entries into canonical order (descending logprob, ascending token).
void canonicalize(SparseTokenDist& d);

/// Throws ValidationError unless all type invariants hold:
/// unique token ids < vocab_size, canonical entry order, and probability
/// mass within kMassTol of 1 (with tail) or at most 1 + kMassTol (without).
void validate(const SparseTokenDist& d);

/// Builds a distribution from a dense probability vector indexed by token id.
/// Zero-probability tokens are dropped. Probabilities must sum to ~1.
SparseTokenDist from_probs(std::span<const double> probs);

/// Builds a full distribution from unnormalized logits (softmax in log space).
SparseTokenDist from_logits(std::span<const double> logits);

/// Keeps the K highest-probability entries and folds the rest into tail_mass.
SparseTokenDist truncate_top_k(const SparseTokenDist& d, int k);

enum class SupportKind { student_topk, teacher_topk, union_set };

/// An ordered set of token ids (ascending) over one vocabulary.
struct SupportSet {
  std::vector<int32_t> token_ids;  // sorted ascending, unique
  SupportKind kind = SupportKind::union_set;
  bool k_clamped = false;  // set when top_k had to clamp K to the entry count

  bool contains(int32_t token) const;
  size_t size() const { return token_ids.size(); }
};

/// Entropy in nats of the distribution renormalized over its listed entries
/// (tail mass is excluded: this is the truncated entropy of the top-K
/// artifact). Throws DomainError on an empty entry list.
double entropy(const SparseTokenDist& d);

/// The K highest-probability token ids under the canonical tie rule.
/// K larger than the entry count is clamped (recorded via k_clamped).
/// Throws DomainError when K = 0 or the entry list is empty.
SupportSet top_k(const SparseTokenDist& d, int k, SupportKind kind);

/// Set union; result kind is union_set.
SupportSet union_support(const SupportSet& a, const SupportSet& b);

/// Ascending intersection of two support sets.
std::vector<int32_t> intersect(const SupportSet& a, const SupportSet& b);

/// Restricts `d` to `support` and renormalizes. Support tokens absent from
/// the entries receive the absent-token floor before renormalization.
/// Throws DegenerateSupportError when the retained listed mass is below
/// kMassFloor.
SparseTokenDist renormalize_on(const SparseTokenDist& d, const SupportSet& support);

/// KL(p-bar || q-bar) in nats with both distributions renormalized on
/// `support`, computed in log space and clamped at 0.
double kl(const SparseTokenDist& p, const SparseTokenDist& q, const SupportSet& support);

}  // namespace taopd::dist
