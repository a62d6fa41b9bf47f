#include "taopd/tabular_policy.hpp"

#include <algorithm>
#include <cmath>

#include "taopd/errors.hpp"

namespace taopd::sim {

int TabularPolicy::n_states() const {
  int n = 1;
  for (int i = 0; i < order; ++i) n *= vocab_size;
  return n + 1;
}

std::span<const double> TabularPolicy::row(int state) const {
  return {logits.data() + static_cast<size_t>(state) * vocab_size,
          static_cast<size_t>(vocab_size)};
}

std::span<double> TabularPolicy::row(int state) {
  return {logits.data() + static_cast<size_t>(state) * vocab_size,
          static_cast<size_t>(vocab_size)};
}

std::vector<double> TabularPolicy::log_probs(int state) const {
  const auto r = row(state);
  double m = r[0];
  for (double v : r) m = std::max(m, v);
  double s = 0.0;
  for (double v : r) s += std::exp(v - m);
  const double z = m + std::log(s);
  std::vector<double> out(r.begin(), r.end());
  for (double& v : out) v -= z;
  return out;
}

std::vector<double> TabularPolicy::probs(int state) const {
  std::vector<double> out = log_probs(state);
  for (double& v : out) v = std::exp(v);
  return out;
}

dist::SparseTokenDist TabularPolicy::next_token_dist(int state) const {
  return dist::from_logits(row(state));
}

TabularPolicy make_random_policy(int vocab_size, int order, uint64_t seed, double scale_lo,
                                 double scale_hi) {
  if (vocab_size < 2 || order < 1) throw DomainError("policy needs vocab >= 2 and order >= 1");
  TabularPolicy p;
  p.vocab_size = vocab_size;
  p.order = order;
  p.logits.resize(static_cast<size_t>(p.n_states()) * vocab_size);
  Rng rng(seed);
  for (int s = 0; s < p.n_states(); ++s) {
    const double scale = rng.next_uniform(scale_lo, scale_hi);
    for (double& v : p.row(s)) v = scale * rng.next_normal();
  }
  return p;
}

int encode_state(const TabularPolicy& policy, std::span<const int32_t> history) {
  if (history.size() < static_cast<size_t>(policy.order)) return policy.start_state();
  int s = 0;
  int mult = 1;
  for (int i = 0; i < policy.order; ++i) {
    s += history[history.size() - 1 - i] * mult;
    mult *= policy.vocab_size;
  }
  return s;
}

namespace {

void decode_state(const TabularPolicy& policy, int state, std::vector<int32_t>& history) {
  history.clear();
  if (state == policy.start_state()) return;
  history.resize(policy.order);
  for (int i = 0; i < policy.order; ++i) {
    history[policy.order - 1 - i] = state % policy.vocab_size;
    state /= policy.vocab_size;
  }
}

int32_t sample_token(const TabularPolicy& policy, int state, Rng& rng) {
  const std::vector<double> p = policy.probs(state);
  const double u = rng.next_double();
  double cum = 0.0;
  for (int v = 0; v < policy.vocab_size; ++v) {
    cum += p[v];
    if (u < cum) return v;
  }
  return policy.vocab_size - 1;
}

}  // namespace

std::vector<RolloutStep> rollout(const TabularPolicy& policy, int start_state, int length,
                                 Rng& rng) {
  if (length < 1) throw DomainError("rollout length must be >= 1");
  if (start_state < 0 || start_state >= policy.n_states())
    throw DomainError("rollout start state out of range");
  std::vector<int32_t> history;
  decode_state(policy, start_state, history);
  std::vector<RolloutStep> steps(length);
  int state = start_state;
  for (int t = 0; t < length; ++t) {
    const int32_t tok = sample_token(policy, state, rng);
    steps[t] = {static_cast<int32_t>(state), tok};
    history.push_back(tok);
    state = encode_state(policy, history);
  }
  return steps;
}

std::vector<std::vector<RolloutStep>> sample_rollouts(const TabularPolicy& policy,
                                                      int n_rollouts, int length, uint64_t seed) {
  std::vector<std::vector<RolloutStep>> out(n_rollouts);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n_rollouts; ++i) {
    Rng rng(derive_seed(seed, i));
    out[i] = rollout(policy, policy.start_state(), length, rng);
  }
  return out;
}

std::vector<std::vector<RolloutStep>> sample_rollouts_serial(const TabularPolicy& policy,
                                                             int n_rollouts, int length,
                                                             uint64_t seed) {
  std::vector<std::vector<RolloutStep>> out(n_rollouts);
  for (int i = 0; i < n_rollouts; ++i) {
    Rng rng(derive_seed(seed, i));
    out[i] = rollout(policy, policy.start_state(), length, rng);
  }
  return out;
}

}  // namespace taopd::sim
