#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "taopd/context_bank.hpp"
#include "taopd/selection.hpp"
#include "taopd/stats.hpp"
#include "taopd/tabular_policy.hpp"
#include "taopd/token_record.hpp"

namespace taopd::sim {

/// Reverse KL(student || teacher) of the two softmax rows at `state`.
double reverse_kl_loss(const TabularPolicy& student, const TabularPolicy& teacher, int state);

/// Analytic gradient of the per-token OPD loss with respect to the state's
/// logit row. full_kl: p * (log p - log q - KL(p||q)) per component.
/// sampled_token: one-hot(y) - p (the log p_T(y) term is constant in theta).
std::vector<double> opd_grad(const TabularPolicy& student, const TabularPolicy& teacher,
                             int state, teach::LossEstimator estimator,
                             int32_t sampled_token = -1);

/// Designed teacher. Corrected states either re-weight the student's top-K
/// (learnable, compatibility mass near 1) or move most teacher mass onto a
/// token outside the student's top-K while zeroing the student's other
/// support tokens (incompatible: reverse-KL updates there first burn the
/// student's teacher-floor tokens into its argmax, which can push the
/// same-context forward KL up). neutral_fraction states keep the teacher at
/// the student's own distribution, mirroring the majority of real rollout
/// positions that carry no disagreement.
struct TeacherDesign {
  TabularPolicy base;              // the student the teacher is designed against
  double aligned_fraction = 1.0;   // learnable share of the corrected states
  int k = 4;                       // support size defining "the student's top-K"
  double neutral_fraction = 0.0;   // states with (near) zero correction
};

struct DesignedTeacher {
  TabularPolicy policy;
  std::vector<uint8_t> aligned;  // per-state ground-truth label
};

DesignedTeacher design_teacher(const TeacherDesign& design, uint64_t seed);

/// Frozen bank of student-rollout contexts scored by the designed teacher,
/// with the per-state aligned/off-support label planted on each context.
/// Requires n_contexts >= 100.
diag::ContextBank build_design_bank(const TeacherDesign& design, const DesignedTeacher& teacher,
                              int n_contexts, int rollout_len, uint64_t seed);

/// One student distribution per bank context (rescoring a checkpoint on
/// the frozen bank). OpenMP-parallel per context.
std::vector<dist::SparseTokenDist> snapshot_on_bank(const TabularPolicy& policy,
                                                    const diag::ContextBank& bank);

/// TokenRecords for a batch of rollouts. truncate_to > 0 truncates both
/// distributions to that many entries with an explicit tail mass (as a real
/// top-K logprob dump would); 0 keeps the full rows.
std::vector<TokenRecord> make_token_records(const TabularPolicy& student,
                                            const TabularPolicy& teacher,
                                            std::span<const std::vector<RolloutStep>> rollouts,
                                            int truncate_to = 0,
                                            const std::string& batch_id = "");

struct TrainerConfig {
  double eta = 0.05;
  int steps = 10;
  double rho = 1.0;
  teach::SelectorKind selector = teach::SelectorKind::teach;
  int rollout_len = 64;
  int rollouts_per_step = 32;
  uint64_t seed = 0;
  int k = 4;  // top-K support size for token stats at toy scale
  teach::LossEstimator estimator = teach::LossEstimator::full_kl;
  teach::Q3Spec q3;

  /// Q3-restricted interventions: selection happens inside the Q3 region
  /// only, at the same absolute token budget as the unrestricted selector.
  enum class Restrict { none, q3_high_dl, q3_low_dl, q3_high_di } restrict = Restrict::none;
};

struct StepLog {
  int step = 0;
  double kept_fraction = 0.0;
  double loss = 0.0;
  double mean_d_learn = 0.0;   // over kept tokens
  double mean_d_incomp = 0.0;  // over kept tokens
  double q3_fraction = 0.0;    // of kept tokens
};

struct TrainResult {
  TabularPolicy student;
  std::vector<StepLog> logs;
  double mean_keep = 0.0;
  double mean_q3_fraction = 0.0;
};

/// Budgeted OPD training loop: sample rollouts, score every position,
/// select the budgeted mask, average the kept analytic gradients, and take
/// one plain descent step per training step. Deterministic given cfg.seed.
TrainResult train_masked(const TabularPolicy& student, const TabularPolicy& teacher,
                         const TrainerConfig& cfg);

struct Prop1Point {
  double eta = 0.0;
  double gain = 0.0;      // fixed-context loss reduction from the single-token update
  double inner = 0.0;     // <grad L_fix, grad l_t>
  double residual = 0.0;  // gain - eta * inner
  double bound = 0.0;     // beta_hat * eta^2 / 2 * ||grad l_t||^2
  bool ok = false;
};

struct Prop1Result {
  int state = 0;
  double grad_norm_sq = 0.0;
  double beta_hat = 0.0;  // probed directional curvature bound, x1.5 safety
  double slope = 0.0;     // log-log slope of |residual| vs eta
  std::vector<Prop1Point> points;
};

/// Measures the quadratic gain expansion of a single-token update at
/// `state` against the frozen bank's fixed-context loss, for each eta.
/// Bank contexts must carry simulator state indices.
Prop1Result verify_prop1(const TabularPolicy& student, const TabularPolicy& teacher,
                         const diag::ContextBank& bank, int state, std::span<const double> etas);

}  // namespace taopd::sim
