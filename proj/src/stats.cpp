#include "taopd/stats.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <unordered_map>

#include "taopd/errors.hpp"

namespace taopd::teach {

using dist::SparseTokenDist;
using dist::SupportKind;
using dist::SupportSet;

const char* selector_name(SelectorKind kind) {
  switch (kind) {
    case SelectorKind::teach: return "teach";
    case SelectorKind::entropy: return "entropy";
    case SelectorKind::raw_kl: return "kl";
    case SelectorKind::compat: return "compat";
    case SelectorKind::tip: return "tip";
    case SelectorKind::h_plus_teach: return "h_teach";
    case SelectorKind::d_incomp: return "d_incomp";
    case SelectorKind::random: return "random";
  }
  return "?";
}

SelectorKind selector_from_name(const std::string& name) {
  for (SelectorKind k : {SelectorKind::teach, SelectorKind::entropy, SelectorKind::raw_kl,
                         SelectorKind::compat, SelectorKind::tip, SelectorKind::h_plus_teach,
                         SelectorKind::d_incomp, SelectorKind::random}) {
    if (name == selector_name(k)) return k;
  }
  throw DomainError("unknown selector '" + name + "'");
}

std::span<const SelectorKind> scored_selectors() {
  static constexpr std::array<SelectorKind, 7> kinds = {
      SelectorKind::teach,   SelectorKind::entropy,      SelectorKind::raw_kl,
      SelectorKind::compat,  SelectorKind::tip,          SelectorKind::h_plus_teach,
      SelectorKind::d_incomp};
  return kinds;
}

double NormalizedStats::score(SelectorKind kind) const {
  switch (kind) {
    case SelectorKind::teach: return d_learn;
    case SelectorKind::entropy: return h_tilde;
    case SelectorKind::raw_kl: return d_tilde;
    case SelectorKind::compat: return c_tilde;
    case SelectorKind::tip: return h_tilde + d_tilde - h_tilde * d_tilde;
    case SelectorKind::h_plus_teach: return h_tilde + d_learn - h_tilde * d_learn;
    case SelectorKind::d_incomp: return d_incomp;
    case SelectorKind::random: throw DomainError("random selector has no score");
  }
  return 0.0;
}

TokenStats compute_stats(const TokenRecord& record, int k, int seq_len) {
  if (k < 1) throw DomainError("compute_stats requires K >= 1");
  TokenStats s;
  s.k = k;
  const SupportSet student_top = dist::top_k(record.student, k, SupportKind::student_topk);
  const SupportSet teacher_top = dist::top_k(record.teacher, k, SupportKind::teacher_topk);
  const SupportSet u = dist::union_support(student_top, teacher_top);

  s.d = dist::kl(record.teacher, record.student, u);
  s.h_student = dist::entropy(record.student);
  s.h_teacher = dist::entropy(record.teacher);

  // Compatibility mass: exact when the teacher lists a score for every
  // student top-K token, otherwise fall back to the intersection bound.
  double c_exact_sum = 0.0;
  bool covered = true;
  for (int32_t tok : student_top.token_ids) {
    if (record.teacher.contains(tok)) {
      c_exact_sum += std::exp(record.teacher.logprob_or_floor(tok));
    } else {
      covered = false;
    }
  }
  double c_hat = 0.0;
  for (int32_t tok : dist::intersect(student_top, teacher_top))
    c_hat += std::exp(record.teacher.logprob_or_floor(tok));
  s.c_hat = std::clamp(c_hat, 0.0, 1.0);
  s.c_exact = covered;
  s.c = covered ? std::clamp(c_exact_sum, 0.0, 1.0) : s.c_hat;

  const double lp_student = record.student.logprob_or_floor(record.sampled_token);
  const double lp_teacher = record.teacher.logprob_or_floor(record.sampled_token);
  s.sampled_floored = !record.student.contains(record.sampled_token) ||
                      !record.teacher.contains(record.sampled_token);
  s.raw_kl_sampled = lp_student - lp_teacher;

  if (seq_len >= 2)
    s.pos_norm = std::clamp(static_cast<double>(record.position) / (seq_len - 1), 0.0, 1.0);
  return s;
}

namespace {

std::vector<int> context_lengths(std::span<const TokenRecord> records) {
  // seq_len per record = (max position within its context) + 1
  std::unordered_map<std::string, int> max_pos;
  for (const auto& r : records) {
    auto [it, inserted] = max_pos.try_emplace(r.context_id, r.position);
    if (!inserted) it->second = std::max(it->second, r.position);
  }
  std::vector<int> lens(records.size());
  for (size_t i = 0; i < records.size(); ++i)
    lens[i] = max_pos[records[i].context_id] + 1;
  return lens;
}

}  // namespace

std::vector<TokenStats> compute_stats_batch(std::span<const TokenRecord> records, int k) {
  const std::vector<int> lens = context_lengths(records);
  std::vector<TokenStats> out(records.size());
  const int64_t n = static_cast<int64_t>(records.size());
  std::atomic<bool> failed{false};
  std::exception_ptr err;
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    if (failed.load(std::memory_order_relaxed)) continue;
    try {
      out[i] = compute_stats(records[i], k, lens[i]);
    } catch (...) {
#pragma omp critical
      if (!failed.exchange(true)) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  return out;
}

std::vector<TokenStats> compute_stats_batch_serial(std::span<const TokenRecord> records, int k) {
  const std::vector<int> lens = context_lengths(records);
  std::vector<TokenStats> out(records.size());
  for (size_t i = 0; i < records.size(); ++i) out[i] = compute_stats(records[i], k, lens[i]);
  return out;
}

double quantile(std::span<const double> sorted_values, double q) {
  if (sorted_values.empty()) throw DomainError("quantile of empty list");
  if (q <= 0.0) return sorted_values.front();
  if (q >= 1.0) return sorted_values.back();
  const double h = q * (sorted_values.size() - 1);
  const size_t lo = static_cast<size_t>(h);
  const double frac = h - lo;
  if (lo + 1 >= sorted_values.size()) return sorted_values.back();
  return sorted_values[lo] + frac * (sorted_values[lo + 1] - sorted_values[lo]);
}

namespace {

struct NormTransform {
  double q_low = 0.0;
  double q_high = 0.0;
  double epsilon = 1e-8;

  double apply(double z) const {
    const double v = (z - q_low) / (q_high - q_low + epsilon);
    return std::clamp(v, 0.0, 1.0);
  }
};

NormTransform fit_transform(std::vector<double> values, const NormalizationConfig& cfg) {
  if (values.empty()) throw DomainError("robust normalization of empty batch");
  if (!(cfg.q_low >= 0.0 && cfg.q_low < cfg.q_high && cfg.q_high <= 1.0))
    throw DomainError("normalization quantiles must satisfy 0 <= q_low < q_high <= 1");
  if (!(cfg.epsilon > 0.0)) throw DomainError("normalization epsilon must be positive");
  std::sort(values.begin(), values.end());
  return {quantile(values, cfg.q_low), quantile(values, cfg.q_high), cfg.epsilon};
}

}  // namespace

std::vector<double> robust_normalize(std::span<const double> values, const NormalizationConfig& cfg) {
  const NormTransform t = fit_transform({values.begin(), values.end()}, cfg);
  std::vector<double> out(values.size());
  for (size_t i = 0; i < values.size(); ++i) out[i] = t.apply(values[i]);
  return out;
}

std::vector<NormalizedStats> normalize_batch(std::span<const TokenStats> stats,
                                             const NormalizationConfig& cfg,
                                             std::span<const uint8_t> valid) {
  if (stats.empty()) throw DomainError("normalize_batch of empty batch");
  if (!valid.empty() && valid.size() != stats.size())
    throw DomainError("validity mask length mismatch");

  std::vector<double> d_vals, c_vals, h_vals;
  for (size_t i = 0; i < stats.size(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    d_vals.push_back(stats[i].d);
    c_vals.push_back(stats[i].c);
    h_vals.push_back(stats[i].h_student);
  }
  if (d_vals.empty()) throw DomainError("normalize_batch: no valid positions");

  const NormTransform td = fit_transform(std::move(d_vals), cfg);
  const NormTransform tc = fit_transform(std::move(c_vals), cfg);
  const NormTransform th = fit_transform(std::move(h_vals), cfg);

  std::vector<NormalizedStats> out(stats.size());
  for (size_t i = 0; i < stats.size(); ++i) {
    NormalizedStats& n = out[i];
    n.d_tilde = td.apply(stats[i].d);
    n.c_tilde = tc.apply(stats[i].c);
    n.h_tilde = th.apply(stats[i].h_student);
    n.d_learn = n.d_tilde * n.c_tilde;
    n.d_incomp = n.d_tilde * (1.0 - n.c_tilde);
  }
  return out;
}

}  // namespace taopd::teach
