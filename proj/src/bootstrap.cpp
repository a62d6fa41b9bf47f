#include "taopd/bootstrap.hpp"

#include <algorithm>
#include <unordered_map>

#include "taopd/errors.hpp"
#include "taopd/rng.hpp"
#include "taopd/stats.hpp"

namespace taopd::diag {

ClusterIndex group_clusters(std::span<const ClusteredValue> values) {
  ClusterIndex idx;
  std::unordered_map<std::string, size_t> pos;
  for (size_t i = 0; i < values.size(); ++i) {
    auto [it, inserted] = pos.try_emplace(values[i].cluster, idx.names.size());
    if (inserted) {
      idx.names.push_back(values[i].cluster);
      idx.rows.emplace_back();
    }
    idx.rows[it->second].push_back(i);
  }
  return idx;
}

namespace {

struct ClusterSums {
  std::vector<double> sum;
  std::vector<double> count;
};

ClusterSums cluster_sums(std::span<const ClusteredValue> values, const ClusterIndex& idx) {
  ClusterSums cs;
  cs.sum.resize(idx.rows.size(), 0.0);
  cs.count.resize(idx.rows.size(), 0.0);
  for (size_t c = 0; c < idx.rows.size(); ++c) {
    for (size_t r : idx.rows[c]) cs.sum[c] += values[r].value;
    cs.count[c] = static_cast<double>(idx.rows[c].size());
  }
  return cs;
}

// One resample: draw n_clusters clusters with replacement and return the
// pooled mean of their values.
double resample_mean(const ClusterSums& cs, uint64_t seed) {
  Rng rng(seed);
  const size_t n = cs.sum.size();
  double sum = 0.0, count = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const size_t c = static_cast<size_t>(rng.next_below(n));
    sum += cs.sum[c];
    count += cs.count[c];
  }
  return sum / count;
}

BootstrapResult finalize(std::span<const ClusteredValue> values, std::vector<double> means) {
  BootstrapResult res;
  double sum = 0.0;
  for (const auto& v : values) sum += v.value;
  res.mean = sum / static_cast<double>(values.size());
  res.resample_means = std::move(means);
  std::vector<double> sorted = res.resample_means;
  std::sort(sorted.begin(), sorted.end());
  res.ci_low = teach::quantile(sorted, 0.025);
  res.ci_high = teach::quantile(sorted, 0.975);
  return res;
}

void check_inputs(std::span<const ClusteredValue> values, const ClusterIndex& idx, int b) {
  if (values.empty()) throw ValidationError("bootstrap over empty data");
  if (idx.names.size() < 2) throw ValidationError("cluster bootstrap needs at least 2 clusters");
  if (b < 1) throw DomainError("bootstrap resample count must be >= 1");
}

}  // namespace

BootstrapResult cluster_bootstrap(std::span<const ClusteredValue> values, int b, uint64_t seed) {
  const ClusterIndex idx = group_clusters(values);
  check_inputs(values, idx, b);
  const ClusterSums cs = cluster_sums(values, idx);
  std::vector<double> means(b);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < b; ++i) means[i] = resample_mean(cs, derive_seed(seed, i));
  return finalize(values, std::move(means));
}

BootstrapResult cluster_bootstrap_serial(std::span<const ClusteredValue> values, int b,
                                         uint64_t seed) {
  const ClusterIndex idx = group_clusters(values);
  check_inputs(values, idx, b);
  const ClusterSums cs = cluster_sums(values, idx);
  std::vector<double> means(b);
  for (int i = 0; i < b; ++i) means[i] = resample_mean(cs, derive_seed(seed, i));
  return finalize(values, std::move(means));
}

}  // namespace taopd::diag
