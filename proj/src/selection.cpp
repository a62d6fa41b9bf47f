#include "taopd/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "taopd/errors.hpp"
#include "taopd/rng.hpp"

namespace taopd::teach {

namespace {

int64_t budget(double rho, int64_t n_valid) {
  return static_cast<int64_t>(std::ceil(rho * static_cast<double>(n_valid)));
}

}  // namespace

SelectionMask select_top_n(std::span<const double> scores, std::span<const uint8_t> valid,
                           std::span<const TieKey> keys, int64_t n_keep, SelectorKind selector,
                           uint64_t seed) {
  if (valid.size() != scores.size() && selector != SelectorKind::random)
    throw DomainError("scores/valid length mismatch");
  const size_t n = valid.size();
  if (!keys.empty() && keys.size() != n) throw DomainError("tie keys length mismatch");

  std::vector<size_t> candidates;
  for (size_t i = 0; i < n; ++i)
    if (valid[i]) candidates.push_back(i);
  if (candidates.empty()) throw ValidationError("selection over empty valid set");
  if (n_keep < 1 || n_keep > static_cast<int64_t>(candidates.size()))
    throw DomainError("keep count outside [1, |valid|]");

  SelectionMask mask;
  mask.selector = selector;
  mask.rho = static_cast<double>(n_keep) / static_cast<double>(candidates.size());
  mask.seed = seed;
  mask.keep.assign(n, 0);
  mask.n_kept = n_keep;

  if (selector == SelectorKind::random) {
    // Fisher-Yates over the valid indices; platform-stable draws.
    Rng rng(seed);
    for (size_t i = 0; i + 1 < candidates.size(); ++i) {
      const size_t j = i + static_cast<size_t>(rng.next_below(candidates.size() - i));
      std::swap(candidates[i], candidates[j]);
    }
    for (int64_t i = 0; i < n_keep; ++i) mask.keep[candidates[i]] = 1;
    return mask;
  }

  auto better = [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (!keys.empty()) {
      if (keys[a].position != keys[b].position) return keys[a].position < keys[b].position;
      if (keys[a].context_id != keys[b].context_id) return keys[a].context_id < keys[b].context_id;
    }
    return a < b;
  };
  if (n_keep < static_cast<int64_t>(candidates.size())) {
    std::nth_element(candidates.begin(), candidates.begin() + n_keep, candidates.end(), better);
  }
  for (int64_t i = 0; i < n_keep; ++i) mask.keep[candidates[i]] = 1;
  return mask;
}

SelectionMask select(std::span<const double> scores, std::span<const uint8_t> valid,
                     std::span<const TieKey> keys, double rho, SelectorKind selector,
                     uint64_t seed) {
  if (!(rho > 0.0 && rho <= 1.0)) throw DomainError("rho must be in (0, 1]");
  int64_t n_valid = 0;
  for (uint8_t v : valid) n_valid += v ? 1 : 0;
  if (n_valid == 0) throw ValidationError("selection over empty valid set");
  SelectionMask mask = select_top_n(scores, valid, keys, budget(rho, n_valid), selector, seed);
  mask.rho = rho;
  return mask;
}

SelectionMask select(std::span<const TokenRecord> records,
                     std::span<const NormalizedStats> norm, double rho,
                     SelectorKind selector, uint64_t seed) {
  if (records.size() != norm.size()) throw DomainError("records/stats length mismatch");
  std::vector<double> scores(records.size(), 0.0);
  std::vector<uint8_t> valid(records.size(), 0);
  std::vector<TieKey> keys(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    valid[i] = records[i].valid ? 1 : 0;
    keys[i] = {records[i].position, records[i].context_id};
    if (selector != SelectorKind::random) scores[i] = norm[i].score(selector);
  }
  return select(scores, valid, keys, rho, selector, seed);
}

MaskedLossResult masked_opd_loss(std::span<const TokenRecord> records,
                                 const SelectionMask& mask, LossEstimator estimator) {
  if (mask.keep.size() != records.size()) throw DomainError("mask length mismatch");
  MaskedLossResult res;
  double acc = 0.0;
  for (size_t i = 0; i < records.size(); ++i) {
    if (!mask.keep[i]) continue;
    const TokenRecord& r = records[i];
    if (estimator == LossEstimator::full_kl) {
      const auto support = dist::top_k(r.student, static_cast<int>(r.student.entries.size()),
                                       dist::SupportKind::student_topk);
      acc += dist::kl(r.student, r.teacher, support);
    } else {
      if (!r.student.contains(r.sampled_token) || !r.teacher.contains(r.sampled_token))
        ++res.floored;
      acc += r.student.logprob_or_floor(r.sampled_token) -
             r.teacher.logprob_or_floor(r.sampled_token);
    }
    ++res.n_tokens;
  }
  if (res.n_tokens == 0) throw ValidationError("masked loss over empty mask");
  res.loss = acc / static_cast<double>(res.n_tokens);
  return res;
}

std::vector<uint8_t> q3_membership(std::span<const NormalizedStats> norm, const Q3Spec& spec,
                                   std::span<const uint8_t> valid) {
  if (norm.empty()) throw DomainError("q3_membership of empty batch");
  if (!(spec.entropy_quantile > 0.0 && spec.entropy_quantile < 1.0 &&
        spec.kl_quantile > 0.0 && spec.kl_quantile < 1.0))
    throw DomainError("Q3 quantiles must be in (0,1)");
  if (!valid.empty() && valid.size() != norm.size())
    throw DomainError("validity mask length mismatch");

  std::vector<double> h_vals, d_vals;
  for (size_t i = 0; i < norm.size(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    h_vals.push_back(norm[i].h_tilde);
    d_vals.push_back(norm[i].d_tilde);
  }
  if (h_vals.empty()) throw DomainError("q3_membership: no valid positions");
  std::sort(h_vals.begin(), h_vals.end());
  std::sort(d_vals.begin(), d_vals.end());
  const double h_thresh = quantile(h_vals, spec.entropy_quantile);
  const double d_thresh = quantile(d_vals, spec.kl_quantile);

  std::vector<uint8_t> out(norm.size(), 0);
  for (size_t i = 0; i < norm.size(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    out[i] = (norm[i].h_tilde < h_thresh && norm[i].d_tilde > d_thresh) ? 1 : 0;
  }
  return out;
}

}  // namespace taopd::teach
