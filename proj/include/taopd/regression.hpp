#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace taopd::diag {

/// One diagnostic observation: fixed-context gain plus the pre-update
/// token signals used as predictors.
struct RegressionRow {
  std::string cluster;  // prompt_id
  double gain = 0.0;    // dependent variable
  double h_tilde = 0.0;
  double d_tilde = 0.0;
  double c_tilde = 0.0;
  double d_learn = 0.0;
  double d_incomp = 0.0;
  double pos_norm = 0.0;
  double h_teacher = 0.0;
  bool q3 = false;
};

/// Known predictor column names: H_tilde, D_tilde, C_tilde, D_learn,
/// D_incomp, HxD (interaction), pos_norm, H_teacher.
double predictor_value(const RegressionRow& row, const std::string& name);

struct RegressionSpec {
  // Decomposed default: disagreement replaced by the learnable/incompatible pair.
  std::vector<std::string> predictors = {"H_tilde",  "D_learn", "D_incomp",
                                         "HxD",      "pos_norm", "H_teacher"};
  int bootstrap_resamples = 1000;
  uint64_t seed = 0;
  bool q3_only = false;  // restrict rows to the Q3 region
};

struct CoefficientEstimate {
  std::string name;
  double beta = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct RegressionResult {
  std::vector<CoefficientEstimate> coefficients;  // spec order, intercept excluded
  double intercept = 0.0;
  double r2 = 0.0;
  size_t n_rows = 0;

  // D_learn - D_incomp coefficient gap, present when both are predictors.
  bool has_gap = false;
  double gap = 0.0;
  double gap_ci_low = 0.0;
  double gap_ci_high = 0.0;

  // R^2 of the decomposed model minus the baseline where the pair is
  // replaced by raw D_tilde; present under the same condition.
  bool has_delta_r2 = false;
  double delta_r2 = 0.0;
};

/// OLS on standardized predictors (zero mean, unit variance over the rows
/// used) via normal equations with a 1e-10 ridge jitter. Coefficient and
/// gap intervals come from a prompt-cluster bootstrap refit (percentile
/// method), parallel over resamples. Throws NumericError on rank
/// deficiency, naming the collinear columns.
RegressionResult standardized_regression(std::span<const RegressionRow> rows,
                                         const RegressionSpec& spec);

}  // namespace taopd::diag
