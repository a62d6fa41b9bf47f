#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace taopd::diag {

struct ClusteredValue {
  std::string cluster;
  double value = 0.0;
};

struct BootstrapResult {
  double mean = 0.0;     // grand mean over the original data
  double ci_low = 0.0;   // percentile 2.5
  double ci_high = 0.0;  // percentile 97.5
  std::vector<double> resample_means;
};

/// Prompt-cluster bootstrap: resamples whole clusters with replacement B
/// times and forms a percentile confidence interval over the pooled mean.
/// Deterministic given `seed`; resamples run in parallel with derived
/// per-resample seeds. Throws ValidationError with fewer than two clusters.
BootstrapResult cluster_bootstrap(std::span<const ClusteredValue> values, int b, uint64_t seed);

/// Serial reference; results are bit-identical to cluster_bootstrap.
BootstrapResult cluster_bootstrap_serial(std::span<const ClusteredValue> values, int b, uint64_t seed);

/// Groups values by cluster key (first-appearance order preserved).
/// Exposed for reuse by the regression and audit paths.
struct ClusterIndex {
  std::vector<std::string> names;
  std::vector<std::vector<size_t>> rows;  // row indices per cluster
};
ClusterIndex group_clusters(std::span<const ClusteredValue> values);

}  // namespace taopd::diag
