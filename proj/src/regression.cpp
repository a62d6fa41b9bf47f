#include "taopd/regression.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "taopd/bootstrap.hpp"
#include "taopd/errors.hpp"
#include "taopd/rng.hpp"
#include "taopd/stats.hpp"

namespace taopd::diag {

namespace {

constexpr double kRidgeJitter = 1e-10;

// Dense symmetric solve via Cholesky; the systems here are tiny
// (predictors + intercept, at most ~9 columns).
class SmallSpd {
 public:
  explicit SmallSpd(size_t n) : n_(n), a_(n * n, 0.0) {}

  double& at(size_t i, size_t j) { return a_[i * n_ + j]; }
  double at(size_t i, size_t j) const { return a_[i * n_ + j]; }

  // In-place Cholesky; returns false when a pivot collapses relative to its
  // diagonal (rank deficiency even after the ridge jitter).
  bool factor() {
    diag_ratio_.assign(n_, 1.0);
    for (size_t j = 0; j < n_; ++j) {
      double d = at(j, j);
      const double orig = d;
      for (size_t k = 0; k < j; ++k) d -= at(j, k) * at(j, k);
      if (!(d > 0.0)) return false;
      diag_ratio_[j] = orig > 0.0 ? d / orig : 0.0;
      const double root = std::sqrt(d);
      at(j, j) = root;
      for (size_t i = j + 1; i < n_; ++i) {
        double s = at(i, j);
        for (size_t k = 0; k < j; ++k) s -= at(i, k) * at(j, k);
        at(i, j) = s / root;
      }
    }
    return true;
  }

  bool rank_deficient(double tol = 1e-9) const {
    for (double r : diag_ratio_)
      if (r < tol) return true;
    return false;
  }

  std::vector<double> solve(std::span<const double> rhs) const {
    std::vector<double> x(rhs.begin(), rhs.end());
    for (size_t i = 0; i < n_; ++i) {
      for (size_t k = 0; k < i; ++k) x[i] -= at(i, k) * x[k];
      x[i] /= at(i, i);
    }
    for (size_t i = n_; i-- > 0;) {
      for (size_t k = i + 1; k < n_; ++k) x[i] -= at(k, i) * x[k];
      x[i] /= at(i, i);
    }
    return x;
  }

 private:
  size_t n_;
  std::vector<double> a_;
  std::vector<double> diag_ratio_;
};

struct Design {
  size_t n_rows = 0;
  size_t n_cols = 0;                // predictors + intercept (last column)
  std::vector<double> x;            // row-major, standardized, intercept appended
  std::vector<double> y;
  std::vector<std::string> cluster;
};

std::string collinear_description(const Design& d, const std::vector<std::string>& names) {
  // Name near-duplicate standardized columns by pairwise correlation.
  const size_t k = names.size();
  std::string out;
  for (size_t a = 0; a < k; ++a) {
    for (size_t b = a + 1; b < k; ++b) {
      double dot = 0.0;
      for (size_t i = 0; i < d.n_rows; ++i)
        dot += d.x[i * d.n_cols + a] * d.x[i * d.n_cols + b];
      const double corr = dot / static_cast<double>(d.n_rows - 1);
      if (std::abs(corr) > 1.0 - 1e-6) {
        if (!out.empty()) out += ", ";
        out += names[a] + "~" + names[b];
      }
    }
  }
  return out.empty() ? "(no near-duplicate pair found)" : out;
}

Design build_design(std::span<const RegressionRow> rows, const std::vector<std::string>& names,
                    bool q3_only) {
  Design d;
  std::vector<size_t> used;
  for (size_t i = 0; i < rows.size(); ++i)
    if (!q3_only || rows[i].q3) used.push_back(i);
  if (used.size() < names.size() + 2)
    throw ValidationError("regression needs at least predictors+2 rows");

  d.n_rows = used.size();
  d.n_cols = names.size() + 1;
  d.x.resize(d.n_rows * d.n_cols);
  d.y.resize(d.n_rows);
  d.cluster.resize(d.n_rows);

  for (size_t j = 0; j < names.size(); ++j) {
    double mean = 0.0;
    for (size_t i = 0; i < d.n_rows; ++i) mean += predictor_value(rows[used[i]], names[j]);
    mean /= static_cast<double>(d.n_rows);
    double var = 0.0;
    for (size_t i = 0; i < d.n_rows; ++i) {
      const double v = predictor_value(rows[used[i]], names[j]) - mean;
      var += v * v;
    }
    var /= static_cast<double>(d.n_rows - 1);
    if (var <= 0.0)
      throw NumericError("predictor '" + names[j] + "' is constant; design matrix rank-deficient");
    const double sd = std::sqrt(var);
    for (size_t i = 0; i < d.n_rows; ++i)
      d.x[i * d.n_cols + j] = (predictor_value(rows[used[i]], names[j]) - mean) / sd;
  }
  for (size_t i = 0; i < d.n_rows; ++i) {
    d.x[i * d.n_cols + d.n_cols - 1] = 1.0;
    d.y[i] = rows[used[i]].gain;
    d.cluster[i] = rows[used[i]].cluster;
  }
  return d;
}

// Per-cluster Gram blocks so a bootstrap refit is a sum of precomputed
// matrices instead of a pass over the rows.
struct GramBlocks {
  size_t n_cols = 0;
  size_t n_clusters = 0;
  std::vector<double> xtx;  // n_clusters * n_cols * n_cols
  std::vector<double> xty;  // n_clusters * n_cols
  std::vector<double> yty;
  std::vector<double> ysum;
  std::vector<double> count;
};

GramBlocks cluster_grams(const Design& d) {
  std::unordered_map<std::string, size_t> cluster_of;
  std::vector<size_t> row_cluster(d.n_rows);
  for (size_t i = 0; i < d.n_rows; ++i) {
    auto [it, inserted] = cluster_of.try_emplace(d.cluster[i], cluster_of.size());
    row_cluster[i] = it->second;
  }
  GramBlocks g;
  g.n_cols = d.n_cols;
  g.n_clusters = cluster_of.size();
  g.xtx.assign(g.n_clusters * d.n_cols * d.n_cols, 0.0);
  g.xty.assign(g.n_clusters * d.n_cols, 0.0);
  g.yty.assign(g.n_clusters, 0.0);
  g.ysum.assign(g.n_clusters, 0.0);
  g.count.assign(g.n_clusters, 0.0);
  for (size_t i = 0; i < d.n_rows; ++i) {
    const size_t c = row_cluster[i];
    const double* xi = &d.x[i * d.n_cols];
    double* xtx = &g.xtx[c * d.n_cols * d.n_cols];
    double* xty = &g.xty[c * d.n_cols];
    for (size_t a = 0; a < d.n_cols; ++a) {
      for (size_t b = a; b < d.n_cols; ++b) xtx[a * d.n_cols + b] += xi[a] * xi[b];
      xty[a] += xi[a] * d.y[i];
    }
    g.yty[c] += d.y[i] * d.y[i];
    g.ysum[c] += d.y[i];
    g.count[c] += 1.0;
  }
  return g;
}

struct FitOutput {
  std::vector<double> beta;
  double r2 = 0.0;
  bool rank_deficient = false;
  bool factor_failed = false;
};

// Fits from accumulated normal-equation sums.
FitOutput fit_from_sums(size_t n_cols, std::span<const double> xtx, std::span<const double> xty,
                        double yty, double ysum, double count) {
  SmallSpd m(n_cols);
  for (size_t a = 0; a < n_cols; ++a)
    for (size_t b = a; b < n_cols; ++b) {
      m.at(a, b) = xtx[a * n_cols + b] + (a == b ? kRidgeJitter : 0.0);
      m.at(b, a) = m.at(a, b);
    }
  FitOutput out;
  if (!m.factor()) {
    out.factor_failed = true;
    return out;
  }
  out.rank_deficient = m.rank_deficient();
  out.beta = m.solve(xty);
  double sse = yty;
  for (size_t a = 0; a < n_cols; ++a) {
    sse -= 2.0 * out.beta[a] * xty[a];
    for (size_t b = 0; b < n_cols; ++b)
      sse += out.beta[a] * out.beta[b] * xtx[a * n_cols + b];
  }
  const double sst = yty - ysum * ysum / count;
  out.r2 = sst > 0.0 ? 1.0 - sse / sst : 0.0;
  return out;
}

FitOutput fit_full(const GramBlocks& g) {
  const size_t k2 = g.n_cols * g.n_cols;
  std::vector<double> xtx(k2, 0.0), xty(g.n_cols, 0.0);
  double yty = 0.0, ysum = 0.0, count = 0.0;
  for (size_t c = 0; c < g.n_clusters; ++c) {
    for (size_t a = 0; a < k2; ++a) xtx[a] += g.xtx[c * k2 + a];
    for (size_t a = 0; a < g.n_cols; ++a) xty[a] += g.xty[c * g.n_cols + a];
    yty += g.yty[c];
    ysum += g.ysum[c];
    count += g.count[c];
  }
  return fit_from_sums(g.n_cols, xtx, xty, yty, ysum, count);
}

FitOutput fit_resample(const GramBlocks& g, uint64_t seed) {
  Rng rng(seed);
  const size_t k2 = g.n_cols * g.n_cols;
  std::vector<double> xtx(k2, 0.0), xty(g.n_cols, 0.0);
  double yty = 0.0, ysum = 0.0, count = 0.0;
  for (size_t i = 0; i < g.n_clusters; ++i) {
    const size_t c = static_cast<size_t>(rng.next_below(g.n_clusters));
    for (size_t a = 0; a < k2; ++a) xtx[a] += g.xtx[c * k2 + a];
    for (size_t a = 0; a < g.n_cols; ++a) xty[a] += g.xty[c * g.n_cols + a];
    yty += g.yty[c];
    ysum += g.ysum[c];
    count += g.count[c];
  }
  return fit_from_sums(g.n_cols, xtx, xty, yty, ysum, count);
}

std::pair<double, double> percentile_ci(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return {teach::quantile(values, 0.025), teach::quantile(values, 0.975)};
}

}  // namespace

double predictor_value(const RegressionRow& row, const std::string& name) {
  if (name == "H_tilde") return row.h_tilde;
  if (name == "D_tilde") return row.d_tilde;
  if (name == "C_tilde") return row.c_tilde;
  if (name == "D_learn") return row.d_learn;
  if (name == "D_incomp") return row.d_incomp;
  if (name == "HxD") return row.h_tilde * row.d_tilde;
  if (name == "pos_norm") return row.pos_norm;
  if (name == "H_teacher") return row.h_teacher;
  throw DomainError("unknown predictor column '" + name + "'");
}

RegressionResult standardized_regression(std::span<const RegressionRow> rows,
                                         const RegressionSpec& spec) {
  if (spec.predictors.empty()) throw DomainError("regression needs at least one predictor");
  const Design d = build_design(rows, spec.predictors, spec.q3_only);
  const GramBlocks grams = cluster_grams(d);
  if (grams.n_clusters < 2)
    throw ValidationError("clustered regression needs at least 2 clusters");

  const FitOutput full = fit_full(grams);
  if (full.factor_failed || full.rank_deficient)
    throw NumericError("design matrix rank-deficient after jitter; collinear columns: " +
                       collinear_description(d, spec.predictors));

  const size_t k = spec.predictors.size();
  RegressionResult res;
  res.n_rows = d.n_rows;
  res.intercept = full.beta[k];
  res.r2 = full.r2;

  int dl = -1, di = -1;
  for (size_t j = 0; j < k; ++j) {
    if (spec.predictors[j] == "D_learn") dl = static_cast<int>(j);
    if (spec.predictors[j] == "D_incomp") di = static_cast<int>(j);
  }

  const int b = spec.bootstrap_resamples;
  std::vector<std::vector<double>> boot_beta(k, std::vector<double>(b));
  std::vector<double> boot_gap(b);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < b; ++i) {
    const FitOutput f = fit_resample(grams, derive_seed(spec.seed, i));
    for (size_t j = 0; j < k; ++j)
      boot_beta[j][i] = f.factor_failed ? full.beta[j] : f.beta[j];
    if (dl >= 0 && di >= 0)
      boot_gap[i] = f.factor_failed ? full.beta[dl] - full.beta[di] : f.beta[dl] - f.beta[di];
  }

  res.coefficients.resize(k);
  for (size_t j = 0; j < k; ++j) {
    auto [lo, hi] = percentile_ci(boot_beta[j]);
    res.coefficients[j] = {spec.predictors[j], full.beta[j], lo, hi};
  }

  if (dl >= 0 && di >= 0) {
    res.has_gap = true;
    res.gap = full.beta[dl] - full.beta[di];
    auto [lo, hi] = percentile_ci(boot_gap);
    res.gap_ci_low = lo;
    res.gap_ci_high = hi;

    // Baseline model: the decomposed pair collapsed back to raw D_tilde.
    std::vector<std::string> base_names;
    bool replaced = false;
    for (const auto& n : spec.predictors) {
      if (n == "D_learn" || n == "D_incomp") {
        if (!replaced) {
          base_names.push_back("D_tilde");
          replaced = true;
        }
      } else {
        base_names.push_back(n);
      }
    }
    const Design base = build_design(rows, base_names, spec.q3_only);
    const FitOutput base_fit = fit_full(cluster_grams(base));
    if (!base_fit.factor_failed) {
      res.has_delta_r2 = true;
      res.delta_r2 = full.r2 - base_fit.r2;
    }
  }
  return res;
}

}  // namespace taopd::diag
