#include "taopd/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "taopd/errors.hpp"
#include "taopd/rng.hpp"

namespace taopd::diag {

std::vector<RegressionRow> build_diag_rows(const ContextBank& bank,
                                           const std::string& ckpt_before,
                                           const std::string& ckpt_after, int k,
                                           const teach::NormalizationConfig& norm_cfg,
                                           const teach::Q3Spec& q3_spec) {
  const auto& before = bank.snapshot(ckpt_before);
  std::vector<TokenRecord> records(bank.contexts().size());
  for (size_t i = 0; i < records.size(); ++i) {
    const BankContext& ctx = bank.contexts()[i];
    records[i].prompt_id = ctx.prompt_id;
    records[i].context_id = ctx.context_id;
    records[i].position = ctx.position;
    records[i].sampled_token = ctx.sampled_token;
    records[i].student = before.student[i];
    records[i].teacher = ctx.teacher;
  }
  const auto stats = teach::compute_stats_batch(records, k);
  const auto norm = teach::normalize_batch(stats, norm_cfg);
  const auto q3 = teach::q3_membership(norm, q3_spec);
  const auto gains = bank_gains(bank, ckpt_before, ckpt_after);

  std::vector<RegressionRow> rows(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    rows[i].cluster = records[i].prompt_id;
    rows[i].gain = gains[i].g_fix;
    rows[i].h_tilde = norm[i].h_tilde;
    rows[i].d_tilde = norm[i].d_tilde;
    rows[i].c_tilde = norm[i].c_tilde;
    rows[i].d_learn = norm[i].d_learn;
    rows[i].d_incomp = norm[i].d_incomp;
    rows[i].pos_norm = stats[i].pos_norm;
    rows[i].h_teacher = stats[i].h_teacher;
    rows[i].q3 = q3[i] != 0;
  }
  return rows;
}

std::vector<BucketRow> bucket_trend(std::span<const double> scores,
                                    std::span<const double> gains, int n_buckets) {
  if (n_buckets < 2) throw DomainError("bucket_trend needs at least 2 buckets");
  if (scores.size() != gains.size()) throw DomainError("scores/gains length mismatch");
  if (scores.size() < static_cast<size_t>(n_buckets))
    throw ValidationError("fewer rows than buckets");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return a < b;
  });

  const size_t n = scores.size();
  const size_t base = n / n_buckets;
  const size_t extra = n % n_buckets;
  std::vector<BucketRow> out(n_buckets);
  size_t pos = 0;
  for (int b = 0; b < n_buckets; ++b) {
    const size_t count = base + (static_cast<size_t>(b) < extra ? 1 : 0);
    double score_sum = 0.0, gain_sum = 0.0;
    for (size_t i = 0; i < count; ++i) {
      score_sum += scores[order[pos + i]];
      gain_sum += gains[order[pos + i]];
    }
    out[b] = {score_sum / count, gain_sum / count, count};
    pos += count;
  }
  return out;
}

const char* proxy_name(SupportProxy proxy) {
  switch (proxy) {
    case SupportProxy::c_mass: return "c_mass";
    case SupportProxy::topk_overlap: return "topk_overlap";
    case SupportProxy::jaccard: return "jaccard";
    case SupportProxy::shared_teacher_mass: return "shared_teacher_mass";
  }
  return "?";
}

SupportProxy proxy_from_name(const std::string& name) {
  for (SupportProxy p : {SupportProxy::c_mass, SupportProxy::topk_overlap, SupportProxy::jaccard,
                         SupportProxy::shared_teacher_mass}) {
    if (name == proxy_name(p)) return p;
  }
  throw DomainError("unknown support proxy '" + name + "'");
}

double proxy_value(const TokenRecord& record, const teach::TokenStats& stats,
                   SupportProxy proxy, int k) {
  switch (proxy) {
    case SupportProxy::c_mass:
      return stats.c;
    case SupportProxy::shared_teacher_mass:
      return stats.c_hat;
    case SupportProxy::topk_overlap:
    case SupportProxy::jaccard: {
      const auto s = dist::top_k(record.student, k, dist::SupportKind::student_topk);
      const auto t = dist::top_k(record.teacher, k, dist::SupportKind::teacher_topk);
      const auto inter = dist::intersect(s, t);
      if (proxy == SupportProxy::topk_overlap)
        return static_cast<double>(inter.size()) / static_cast<double>(k);
      const auto u = dist::union_support(s, t);
      return static_cast<double>(inter.size()) / static_cast<double>(u.size());
    }
  }
  return 0.0;
}

ProxyAuditResult support_proxy_audit(std::span<const TokenRecord> records,
                                     std::span<const double> gains, SupportProxy proxy,
                                     const teach::Q3Spec& q3_spec, int k, int bootstrap_b,
                                     uint64_t seed) {
  if (records.size() != gains.size()) throw DomainError("records/gains length mismatch");
  const auto stats = teach::compute_stats_batch(records, k);
  teach::NormalizationConfig cfg;
  cfg.scope = teach::NormalizationConfig::Scope::per_dataset;
  const auto norm = teach::normalize_batch(stats, cfg);
  const auto q3 = teach::q3_membership(norm, q3_spec);

  std::vector<size_t> q3_rows;
  for (size_t i = 0; i < records.size(); ++i)
    if (q3[i]) q3_rows.push_back(i);
  if (q3_rows.empty()) throw ValidationError("support proxy audit: empty Q3 subset");

  std::vector<double> pvals(q3_rows.size());
  for (size_t i = 0; i < q3_rows.size(); ++i)
    pvals[i] = proxy_value(records[q3_rows[i]], stats[q3_rows[i]], proxy, k);
  std::vector<double> sorted = pvals;
  std::sort(sorted.begin(), sorted.end());
  const double median = teach::quantile(sorted, 0.5);

  // Frozen high/low assignment; the bootstrap only redraws clusters.
  ClusterIndex idx;
  {
    std::vector<ClusteredValue> cv(q3_rows.size());
    for (size_t i = 0; i < q3_rows.size(); ++i)
      cv[i] = {records[q3_rows[i]].prompt_id, 0.0};
    idx = group_clusters(cv);
  }
  if (idx.names.size() < 2)
    throw ValidationError("support proxy audit needs at least 2 prompt clusters in Q3");

  const size_t nc = idx.names.size();
  std::vector<double> hi_sum(nc, 0.0), hi_n(nc, 0.0), lo_sum(nc, 0.0), lo_n(nc, 0.0);
  double hi_total = 0.0, hi_count = 0.0, lo_total = 0.0, lo_count = 0.0;
  for (size_t c = 0; c < nc; ++c) {
    for (size_t r : idx.rows[c]) {
      const double g = gains[q3_rows[r]];
      if (pvals[r] >= median) {
        hi_sum[c] += g;
        hi_n[c] += 1.0;
        hi_total += g;
        hi_count += 1.0;
      } else {
        lo_sum[c] += g;
        lo_n[c] += 1.0;
        lo_total += g;
        lo_count += 1.0;
      }
    }
  }
  if (hi_count == 0.0 || lo_count == 0.0)
    throw ValidationError("support proxy audit: degenerate median split");

  ProxyAuditResult res;
  res.proxy = proxy;
  res.n_q3 = q3_rows.size();
  res.mean_high = hi_total / hi_count;
  res.mean_low = lo_total / lo_count;
  res.gap = res.mean_high - res.mean_low;

  std::vector<double> boot(bootstrap_b);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < bootstrap_b; ++b) {
    Rng rng(derive_seed(seed, b));
    double hs = 0.0, hn = 0.0, ls = 0.0, ln = 0.0;
    for (size_t i = 0; i < nc; ++i) {
      const size_t c = static_cast<size_t>(rng.next_below(nc));
      hs += hi_sum[c];
      hn += hi_n[c];
      ls += lo_sum[c];
      ln += lo_n[c];
    }
    boot[b] = (hn > 0.0 && ln > 0.0) ? hs / hn - ls / ln : res.gap;
  }
  std::sort(boot.begin(), boot.end());
  res.ci_low = teach::quantile(boot, 0.025);
  res.ci_high = teach::quantile(boot, 0.975);
  return res;
}

std::vector<InterventionRow> selector_intervention_report(const ContextBank& bank,
                                                          std::span<const InterventionRun> runs,
                                                          int bootstrap_b, uint64_t seed) {
  std::vector<InterventionRow> out;
  out.reserve(runs.size());
  for (const auto& run : runs) {
    const auto gains = bank_gains(bank, run.ckpt_before, run.ckpt_after);
    std::vector<ClusteredValue> cv(gains.size());
    for (size_t i = 0; i < gains.size(); ++i) cv[i] = {gains[i].cluster, gains[i].g_fix};
    const BootstrapResult boot = cluster_bootstrap(cv, bootstrap_b, seed);
    InterventionRow row;
    row.selector = run.selector;
    row.rho = run.rho;
    row.actual_keep = run.actual_keep;
    row.gain = boot.mean;
    row.gain_ci_low = boot.ci_low;
    row.gain_ci_high = boot.ci_high;
    row.gain_per_kept = run.actual_keep > 0.0 ? boot.mean / run.actual_keep : 0.0;
    row.q3_fraction = run.q3_fraction;
    row.seed = run.seed;
    out.push_back(row);
  }
  return out;
}

}  // namespace taopd::diag
