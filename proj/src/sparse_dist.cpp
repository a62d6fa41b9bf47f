#include "taopd/sparse_dist.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "taopd/errors.hpp"

namespace taopd::dist {

namespace {

// log(sum exp(v)) over a gather of logprobs, shifted by the max.
double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

bool canonical_less(const SparseEntry& a, const SparseEntry& b) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  return a.token < b.token;
}

}  // namespace

double SparseTokenDist::logprob_or_floor(int32_t token) const {
  for (const auto& e : entries) {
    if (e.token == token) return e.logprob;
  }
  return kAbsentLogProb;
}

bool SparseTokenDist::contains(int32_t token) const {
  for (const auto& e : entries) {
    if (e.token == token) return true;
  }
  return false;
}

void canonicalize(SparseTokenDist& d) {
  std::sort(d.entries.begin(), d.entries.end(), canonical_less);
}

void validate(const SparseTokenDist& d) {
  if (d.vocab_size <= 0) throw ValidationError("vocab_size must be positive");
  double mass = 0.0;
  for (const auto& e : d.entries) {
    if (e.token < 0 || e.token >= d.vocab_size)
      throw ValidationError("token id " + std::to_string(e.token) + " outside vocabulary");
    if (!std::isfinite(e.logprob)) throw ValidationError("non-finite logprob");
    mass += std::exp(e.logprob);
  }
  for (size_t i = 1; i < d.entries.size(); ++i) {
    if (canonical_less(d.entries[i], d.entries[i - 1]))
      throw ValidationError("entries not in canonical order");
  }
  std::vector<int32_t> ids;
  ids.reserve(d.entries.size());
  for (const auto& e : d.entries) ids.push_back(e.token);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw ValidationError("duplicate token id in entries");
  if (d.tail_mass) {
    if (*d.tail_mass < -kMassTol || *d.tail_mass > 1.0 + kMassTol)
      throw ValidationError("tail_mass outside [0,1]");
    const double total = mass + *d.tail_mass;
    if (total < 1.0 - kMassTol || total > 1.0 + kMassTol)
      throw ValidationError("probability mass " + std::to_string(total) + " not within 1e-6 of 1");
  } else {
    if (mass > 1.0 + kMassTol)
      throw ValidationError("listed probability mass " + std::to_string(mass) + " exceeds 1");
  }
}

SparseTokenDist from_probs(std::span<const double> probs) {
  SparseTokenDist d;
  d.vocab_size = static_cast<int32_t>(probs.size());
  double sum = 0.0;
  for (double p : probs) sum += p;
  if (sum <= 0.0) throw DomainError("probabilities sum to zero");
  for (size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] < 0.0) throw DomainError("negative probability");
    if (probs[i] > 0.0)
      d.entries.push_back({static_cast<int32_t>(i), std::log(probs[i] / sum)});
  }
  d.tail_mass = 0.0;
  canonicalize(d);
  return d;
}

SparseTokenDist from_logits(std::span<const double> logits) {
  SparseTokenDist d;
  d.vocab_size = static_cast<int32_t>(logits.size());
  const double z = log_sum_exp(logits);
  d.entries.reserve(logits.size());
  for (size_t i = 0; i < logits.size(); ++i)
    d.entries.push_back({static_cast<int32_t>(i), logits[i] - z});
  d.tail_mass = 0.0;
  canonicalize(d);
  return d;
}

SparseTokenDist truncate_top_k(const SparseTokenDist& d, int k) {
  if (k <= 0) throw DomainError("top-k truncation needs K >= 1");
  SparseTokenDist out;
  out.vocab_size = d.vocab_size;
  const size_t keep = std::min<size_t>(static_cast<size_t>(k), d.entries.size());
  out.entries.assign(d.entries.begin(), d.entries.begin() + keep);
  double kept_mass = 0.0;
  for (const auto& e : out.entries) kept_mass += std::exp(e.logprob);
  double tail = (d.tail_mass ? *d.tail_mass : 0.0);
  for (size_t i = keep; i < d.entries.size(); ++i) tail += std::exp(d.entries[i].logprob);
  out.tail_mass = std::clamp(tail, 0.0, 1.0);
  return out;
}

bool SupportSet::contains(int32_t token) const {
  return std::binary_search(token_ids.begin(), token_ids.end(), token);
}

double entropy(const SparseTokenDist& d) {
  if (d.entries.empty()) throw DomainError("entropy of empty distribution");
  std::vector<double> lps;
  lps.reserve(d.entries.size());
  for (const auto& e : d.entries) lps.push_back(e.logprob);
  const double z = log_sum_exp(lps);
  // H = z - sum p_i * lp_i  with p_i = exp(lp_i - z)
  double acc = 0.0;
  for (double lp : lps) acc += std::exp(lp - z) * lp;
  return std::max(0.0, z - acc);
}

SupportSet top_k(const SparseTokenDist& d, int k, SupportKind kind) {
  if (k <= 0) throw DomainError("top_k requires K >= 1");
  if (d.entries.empty()) throw DomainError("top_k of empty distribution");
  SupportSet s;
  s.kind = kind;
  const size_t n = d.entries.size();
  const size_t keep = std::min<size_t>(static_cast<size_t>(k), n);
  s.k_clamped = keep < static_cast<size_t>(k);
  s.token_ids.reserve(keep);
  // entries are canonical: first K are the top-K under the tie rule
  for (size_t i = 0; i < keep; ++i) s.token_ids.push_back(d.entries[i].token);
  std::sort(s.token_ids.begin(), s.token_ids.end());
  return s;
}

SupportSet union_support(const SupportSet& a, const SupportSet& b) {
  SupportSet u;
  u.kind = SupportKind::union_set;
  u.token_ids.resize(a.token_ids.size() + b.token_ids.size());
  auto end = std::set_union(a.token_ids.begin(), a.token_ids.end(), b.token_ids.begin(),
                            b.token_ids.end(), u.token_ids.begin());
  u.token_ids.resize(end - u.token_ids.begin());
  return u;
}

std::vector<int32_t> intersect(const SupportSet& a, const SupportSet& b) {
  std::vector<int32_t> out(std::min(a.token_ids.size(), b.token_ids.size()));
  auto end = std::set_intersection(a.token_ids.begin(), a.token_ids.end(), b.token_ids.begin(),
                                   b.token_ids.end(), out.begin());
  out.resize(end - out.begin());
  return out;
}

namespace {

// Gathers logprobs of `d` on `support` (floor for absent tokens) and the
// retained listed mass. Shared by renormalize_on and kl.
struct Restricted {
  std::vector<double> logprobs;  // aligned with support.token_ids
  double retained_mass = 0.0;    // true listed mass on the support
};

Restricted restrict_to(const SparseTokenDist& d, const SupportSet& support) {
  Restricted r;
  r.logprobs.reserve(support.token_ids.size());
  for (int32_t tok : support.token_ids) {
    const double lp = d.logprob_or_floor(tok);
    r.logprobs.push_back(lp);
  }
  for (const auto& e : d.entries) {
    if (support.contains(e.token)) r.retained_mass += std::exp(e.logprob);
  }
  return r;
}

}  // namespace

SparseTokenDist renormalize_on(const SparseTokenDist& d, const SupportSet& support) {
  if (support.token_ids.empty()) throw DomainError("empty support");
  Restricted r = restrict_to(d, support);
  if (r.retained_mass <= kMassFloor)
    throw DegenerateSupportError("support retains no probability mass");
  const double z = log_sum_exp(r.logprobs);
  SparseTokenDist out;
  out.vocab_size = d.vocab_size;
  out.entries.reserve(support.token_ids.size());
  for (size_t i = 0; i < support.token_ids.size(); ++i)
    out.entries.push_back({support.token_ids[i], r.logprobs[i] - z});
  out.tail_mass = 0.0;
  canonicalize(out);
  return out;
}

double kl(const SparseTokenDist& p, const SparseTokenDist& q, const SupportSet& support) {
  if (support.token_ids.empty()) throw DomainError("empty support");
  Restricted rp = restrict_to(p, support);
  Restricted rq = restrict_to(q, support);
  if (rp.retained_mass <= kMassFloor)
    throw DegenerateSupportError("first distribution degenerate on support");
  if (rq.retained_mass <= kMassFloor)
    throw DegenerateSupportError("second distribution degenerate on support");
  const double zp = log_sum_exp(rp.logprobs);
  const double zq = log_sum_exp(rq.logprobs);
  double acc = 0.0;
  for (size_t i = 0; i < support.token_ids.size(); ++i) {
    const double lp = rp.logprobs[i] - zp;
    const double lq = rq.logprobs[i] - zq;
    acc += std::exp(lp) * (lp - lq);
  }
  return std::max(0.0, acc);
}

}  // namespace taopd::dist
