#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "taopd/rng.hpp"
#include "taopd/sparse_dist.hpp"

namespace taopd::sim {

/// A softmax policy over a small vocabulary with an n-gram state space:
/// one logit row per state, where a state is the last `order` tokens (plus
/// one dedicated start row used until enough tokens exist).
struct TabularPolicy {
  int vocab_size = 16;
  int order = 2;
  std::vector<double> logits;  // n_states() x vocab_size, row-major

  int n_states() const;
  int start_state() const { return n_states() - 1; }

  std::span<const double> row(int state) const;
  std::span<double> row(int state);

  /// Softmax probabilities of one row.
  std::vector<double> probs(int state) const;
  /// Log-softmax of one row.
  std::vector<double> log_probs(int state) const;
  /// Full next-token distribution at `state`.
  dist::SparseTokenDist next_token_dist(int state) const;
};

/// Random policy: logits[s][v] ~ N(0,1) * scale_s with per-state scale drawn
/// uniformly from [scale_lo, scale_hi], so row entropies vary.
TabularPolicy make_random_policy(int vocab_size, int order, uint64_t seed,
                                 double scale_lo = 1.5, double scale_hi = 3.5);

/// State index after observing `history` (most recent last). Uses the start
/// row until `order` tokens are available.
int encode_state(const TabularPolicy& policy, std::span<const int32_t> history);

struct RolloutStep {
  int32_t state = 0;
  int32_t token = 0;
};

/// Samples `length` tokens starting from `start_state` (pass start_state()
/// for a fresh sequence; any n-gram state seeds the history with its
/// decoded tokens). Deterministic given the generator state; token draws
/// use inverse-CDF walks in ascending token order.
std::vector<RolloutStep> rollout(const TabularPolicy& policy, int start_state, int length,
                                 Rng& rng);

/// n_rollouts independent trajectories with per-trajectory derived seeds;
/// OpenMP-parallel and bit-identical for any thread count.
std::vector<std::vector<RolloutStep>> sample_rollouts(const TabularPolicy& policy,
                                                      int n_rollouts, int length, uint64_t seed);

/// Serial reference for sample_rollouts.
std::vector<std::vector<RolloutStep>> sample_rollouts_serial(const TabularPolicy& policy,
                                                             int n_rollouts, int length,
                                                             uint64_t seed);

}  // namespace taopd::sim
