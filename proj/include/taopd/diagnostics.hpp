#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "taopd/bootstrap.hpp"
#include "taopd/context_bank.hpp"
#include "taopd/regression.hpp"
#include "taopd/selection.hpp"
#include "taopd/stats.hpp"

namespace taopd::diag {

/// Builds one regression/diagnostic row per bank context: token stats from
/// the before-checkpoint student against the frozen teacher, dataset-scope
/// normalization, Q3 flags, and the fixed-context gain to the after
/// checkpoint.
std::vector<RegressionRow> build_diag_rows(const ContextBank& bank,
                                           const std::string& ckpt_before,
                                           const std::string& ckpt_after, int k,
                                           const teach::NormalizationConfig& norm_cfg,
                                           const teach::Q3Spec& q3_spec);

struct BucketRow {
  double mean_score = 0.0;
  double mean_gain = 0.0;
  size_t count = 0;
};

/// Equal-count score-quantile buckets (counts differ by at most one),
/// reported in ascending score order. Throws when rows < buckets.
std::vector<BucketRow> bucket_trend(std::span<const double> scores,
                                    std::span<const double> gains, int n_buckets);

enum class SupportProxy { c_mass, topk_overlap, jaccard, shared_teacher_mass };

const char* proxy_name(SupportProxy proxy);
SupportProxy proxy_from_name(const std::string& name);

/// Per-token value of a support proxy (overlap and Jaccard use the top-K
/// sets; shared_teacher_mass is the intersection teacher mass).
double proxy_value(const TokenRecord& record, const teach::TokenStats& stats,
                   SupportProxy proxy, int k);

struct ProxyAuditResult {
  SupportProxy proxy = SupportProxy::c_mass;
  size_t n_q3 = 0;
  double mean_high = 0.0;
  double mean_low = 0.0;
  double gap = 0.0;  // mean gain(high half) - mean gain(low half)
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Splits the Q3 subset at the proxy's within-subset median and reports the
/// high-vs-low gain gap with a prompt-cluster bootstrap CI (the half
/// assignment is frozen from the full data; the resamples draw clusters).
ProxyAuditResult support_proxy_audit(std::span<const TokenRecord> records,
                                     std::span<const double> gains, SupportProxy proxy,
                                     const teach::Q3Spec& q3_spec, int k, int bootstrap_b,
                                     uint64_t seed);

/// Metadata for one trained selector run whose checkpoints live in a bank.
struct InterventionRun {
  teach::SelectorKind selector = teach::SelectorKind::teach;
  double rho = 1.0;
  std::string ckpt_before;
  std::string ckpt_after;
  double actual_keep = 1.0;   // mean kept fraction over training steps
  double q3_fraction = 0.0;   // fraction of kept tokens inside Q3
  uint64_t seed = 0;
};

struct InterventionRow {
  teach::SelectorKind selector = teach::SelectorKind::teach;
  double rho = 1.0;
  double actual_keep = 1.0;
  double gain = 0.0;
  double gain_ci_low = 0.0;
  double gain_ci_high = 0.0;
  double gain_per_kept = 0.0;
  double q3_fraction = 0.0;
  uint64_t seed = 0;
};

/// One row per run: mean bank gain between the run's checkpoint pair with a
/// cluster-bootstrap CI, plus gain normalized by the actual keep ratio.
std::vector<InterventionRow> selector_intervention_report(const ContextBank& bank,
                                                          std::span<const InterventionRun> runs,
                                                          int bootstrap_b, uint64_t seed);

}  // namespace taopd::diag
