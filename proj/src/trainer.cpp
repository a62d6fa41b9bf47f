#include "taopd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "taopd/errors.hpp"

namespace taopd::sim {

double reverse_kl_loss(const TabularPolicy& student, const TabularPolicy& teacher, int state) {
  const auto lp = student.log_probs(state);
  const auto lq = teacher.log_probs(state);
  double acc = 0.0;
  for (int v = 0; v < student.vocab_size; ++v) acc += std::exp(lp[v]) * (lp[v] - lq[v]);
  return std::max(0.0, acc);
}

std::vector<double> opd_grad(const TabularPolicy& student, const TabularPolicy& teacher,
                             int state, teach::LossEstimator estimator, int32_t sampled_token) {
  const int v_size = student.vocab_size;
  const auto lp = student.log_probs(state);
  std::vector<double> grad(v_size, 0.0);
  if (estimator == teach::LossEstimator::full_kl) {
    const auto lq = teacher.log_probs(state);
    double kl = 0.0;
    for (int v = 0; v < v_size; ++v) kl += std::exp(lp[v]) * (lp[v] - lq[v]);
    for (int v = 0; v < v_size; ++v) grad[v] = std::exp(lp[v]) * (lp[v] - lq[v] - kl);
  } else {
    if (sampled_token < 0 || sampled_token >= v_size)
      throw DomainError("sampled-token gradient needs the sampled token");
    for (int v = 0; v < v_size; ++v) grad[v] = -std::exp(lp[v]);
    grad[sampled_token] += 1.0;
  }
  return grad;
}

DesignedTeacher design_teacher(const TeacherDesign& design, uint64_t seed) {
  if (!(design.aligned_fraction >= 0.0 && design.aligned_fraction <= 1.0))
    throw DomainError("aligned_fraction must be in [0,1]");
  if (!(design.neutral_fraction >= 0.0 && design.neutral_fraction <= 1.0))
    throw DomainError("neutral_fraction must be in [0,1]");
  const TabularPolicy& student = design.base;
  const int v_size = student.vocab_size;
  const int k = std::min(design.k, v_size);
  if (k >= v_size)
    throw DomainError("teacher design needs top-K smaller than the vocabulary");

  DesignedTeacher out;
  out.policy = student;
  out.aligned.assign(student.n_states(), 0);

  Rng rng(seed);
  std::vector<int> order(v_size);
  for (int s = 0; s < student.n_states(); ++s) {
    // student token ranking at this state, canonical tie rule
    const auto srow = student.row(s);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (srow[a] != srow[b]) return srow[a] > srow[b];
      return a < b;
    });
    const double max_logit = srow[order[0]];
    auto trow = out.policy.row(s);

    if (rng.next_double() < design.neutral_fraction) {
      // teacher agrees with the student up to score noise
      out.aligned[s] = 1;
      for (auto& v : trow) v += 0.02 * rng.next_normal();
      continue;
    }

    const bool aligned = rng.next_double() < design.aligned_fraction;
    out.aligned[s] = aligned ? 1 : 0;
    if (aligned) {
      // Re-weight inside the student top-K: boost non-argmax support tokens
      // and push everything outside the support far down, so the teacher's
      // mass stays on candidates the student already considers.
      const int n_boost = 1 + static_cast<int>(rng.next_below(2));
      for (int b = 0; b < std::min(n_boost, k - 1); ++b) {
        const int pick = order[1 + static_cast<int>(rng.next_below(k - 1))];
        trow[pick] += rng.next_uniform(2.0, 7.0);
      }
      for (int r = k; r < v_size; ++r) trow[order[r]] -= 6.0;
    } else {
      // Incompatible correction: a large teacher share moves to a token just
      // outside the student's top-K; the argmax keeps the remainder and the
      // other support tokens drop toward the floor. The ranges overlap the
      // aligned states' local disagreement, so raw disagreement alone cannot
      // tell the two kinds apart.
      const int span = std::min(2, v_size - k);
      const int pick = order[k + static_cast<int>(rng.next_below(span))];
      for (int r = 1; r < v_size; ++r) trow[order[r]] -= 4.0;
      trow[pick] = max_logit + rng.next_uniform(-0.8, 0.2);
    }
  }
  return out;
}

diag::ContextBank build_design_bank(const TeacherDesign& design, const DesignedTeacher& teacher,
                              int n_contexts, int rollout_len, uint64_t seed) {
  if (n_contexts < 100) throw DomainError("design bank needs at least 100 contexts");
  if (rollout_len < 1) throw DomainError("rollout length must be >= 1");

  diag::ContextBank bank;
  auto add = [&](int rollout_id, int position, const RolloutStep& step) {
    diag::BankContext ctx;
    ctx.prompt_id = "p" + std::to_string(rollout_id);
    ctx.context_id = "p" + std::to_string(rollout_id);
    ctx.position = position;
    ctx.sampled_token = step.token;
    ctx.state = step.state;
    ctx.teacher = teacher.policy.next_token_dist(step.state);
    ctx.aligned_label = teacher.aligned[step.state];
    bank.add_context(std::move(ctx));
  };

  // Prefer one context per distinct state so bank coverage is flat over the
  // visited state space rather than weighted by visitation frequency; fill
  // with revisits only when the policy cannot reach enough distinct states.
  std::unordered_set<int> seen;
  struct Leftover {
    int rollout_id;
    int position;
    RolloutStep step;
  };
  std::vector<Leftover> leftovers;
  const int chunk = std::max(1, (n_contexts + rollout_len - 1) / rollout_len);
  int taken = 0;
  int rollout_id = 0;
  for (int round = 0; round < 64 && taken < n_contexts; ++round) {
    const auto rollouts =
        sample_rollouts(design.base, chunk, rollout_len, derive_seed(seed, 7000 + round));
    for (int j = 0; j < chunk; ++j, ++rollout_id) {
      for (int t = 0; t < rollout_len; ++t) {
        const RolloutStep& step = rollouts[j][t];
        if (taken < n_contexts && seen.insert(step.state).second) {
          add(rollout_id, t, step);
          ++taken;
        } else if (static_cast<int>(leftovers.size()) < n_contexts) {
          leftovers.push_back({rollout_id, t, step});
        }
      }
    }
  }
  for (size_t i = 0; taken < n_contexts && i < leftovers.size(); ++i, ++taken)
    add(leftovers[i].rollout_id, leftovers[i].position, leftovers[i].step);
  if (taken < n_contexts)
    throw ValidationError("policy rollouts could not populate the requested bank size");
  bank.freeze();
  return bank;
}

std::vector<dist::SparseTokenDist> snapshot_on_bank(const TabularPolicy& policy,
                                                    const diag::ContextBank& bank) {
  for (const auto& ctx : bank.contexts())
    if (ctx.state < 0 || ctx.state >= policy.n_states())
      throw ValidationError("bank context lacks a simulator state");
  std::vector<dist::SparseTokenDist> out(bank.contexts().size());
  const int64_t n = static_cast<int64_t>(out.size());
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) out[i] = policy.next_token_dist(bank.contexts()[i].state);
  return out;
}

std::vector<TokenRecord> make_token_records(const TabularPolicy& student,
                                            const TabularPolicy& teacher,
                                            std::span<const std::vector<RolloutStep>> rollouts,
                                            int truncate_to, const std::string& batch_id) {
  const std::string prefix = batch_id.empty() ? "" : batch_id + ":";
  std::vector<TokenRecord> out;
  for (size_t j = 0; j < rollouts.size(); ++j) {
    for (size_t t = 0; t < rollouts[j].size(); ++t) {
      const RolloutStep& step = rollouts[j][t];
      TokenRecord rec;
      rec.prompt_id = prefix + "p" + std::to_string(j);
      rec.context_id = prefix + "r" + std::to_string(j);
      rec.position = static_cast<int32_t>(t);
      rec.sampled_token = step.token;
      rec.student = student.next_token_dist(step.state);
      rec.teacher = teacher.next_token_dist(step.state);
      if (truncate_to > 0) {
        rec.student = dist::truncate_top_k(rec.student, truncate_to);
        rec.teacher = dist::truncate_top_k(rec.teacher, truncate_to);
      }
      rec.valid = true;
      rec.batch_id = batch_id;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

namespace {

void check_config(const TrainerConfig& cfg) {
  if (!(cfg.eta > 0.0)) throw DomainError("learning rate must be positive");
  if (!(cfg.rho > 0.0 && cfg.rho <= 1.0)) throw DomainError("rho must be in (0,1]");
  if (cfg.steps < 0) throw DomainError("steps must be >= 0");
  if (cfg.rollout_len < 1 || cfg.rollouts_per_step < 1)
    throw DomainError("rollout sizes must be >= 1");
  if (cfg.k < 1) throw DomainError("stats K must be >= 1");
}

}  // namespace

TrainResult train_masked(const TabularPolicy& student0, const TabularPolicy& teacher,
                         const TrainerConfig& cfg) {
  check_config(cfg);
  TrainResult res;
  res.student = student0;
  TabularPolicy& student = res.student;
  const int v_size = student.vocab_size;

  for (int step = 0; step < cfg.steps; ++step) {
    const auto rollouts =
        sample_rollouts(student, cfg.rollouts_per_step, cfg.rollout_len, derive_seed(cfg.seed, 2 * step));
    const auto records = make_token_records(student, teacher, rollouts, 0, "");
    const auto stats = teach::compute_stats_batch(records, cfg.k);
    teach::NormalizationConfig norm_cfg;  // per rollout batch
    const auto norm = teach::normalize_batch(stats, norm_cfg);
    const auto q3 = teach::q3_membership(norm, cfg.q3);

    const size_t n_tokens = records.size();
    const int64_t n_target =
        static_cast<int64_t>(std::ceil(cfg.rho * static_cast<double>(n_tokens)));

    std::vector<teach::TieKey> keys(n_tokens);
    for (size_t i = 0; i < n_tokens; ++i) keys[i] = {records[i].position, records[i].context_id};

    teach::SelectionMask mask;
    const uint64_t step_seed = derive_seed(cfg.seed, 2 * step + 1);
    if (cfg.restrict == TrainerConfig::Restrict::none) {
      mask = teach::select(records, norm, cfg.rho, cfg.selector, step_seed);
    } else {
      // Q3-restricted mask at the same absolute budget as the unrestricted
      // selectors; ranking inside Q3 by the decomposed disagreement.
      std::vector<double> scores(n_tokens, 0.0);
      for (size_t i = 0; i < n_tokens; ++i) {
        switch (cfg.restrict) {
          case TrainerConfig::Restrict::q3_high_dl: scores[i] = norm[i].d_learn; break;
          case TrainerConfig::Restrict::q3_low_dl: scores[i] = -norm[i].d_learn; break;
          case TrainerConfig::Restrict::q3_high_di: scores[i] = norm[i].d_incomp; break;
          case TrainerConfig::Restrict::none: break;
        }
      }
      int64_t n_q3 = 0;
      for (uint8_t b : q3) n_q3 += b;
      if (n_q3 == 0) throw ValidationError("empty Q3 selection at training step " +
                                           std::to_string(step));
      mask = teach::select_top_n(scores, q3, keys, std::min(n_target, n_q3),
                                 teach::SelectorKind::teach, step_seed);
    }

    // Masked gradient step: sum kept per-token gradients into the visited
    // rows, then one descent update (single writer).
    std::vector<double> gsum(student.logits.size(), 0.0);
    int64_t n_kept = 0;
    double dl_sum = 0.0, di_sum = 0.0;
    int64_t q3_kept = 0;
    for (size_t i = 0; i < n_tokens; ++i) {
      if (!mask.keep[i]) continue;
      const size_t j = i / cfg.rollout_len;
      const size_t t = i % cfg.rollout_len;
      const RolloutStep& rstep = rollouts[j][t];
      const auto g = opd_grad(student, teacher, rstep.state, cfg.estimator, rstep.token);
      double* dst = gsum.data() + static_cast<size_t>(rstep.state) * v_size;
      for (int v = 0; v < v_size; ++v) dst[v] += g[v];
      ++n_kept;
      dl_sum += norm[i].d_learn;
      di_sum += norm[i].d_incomp;
      q3_kept += q3[i];
    }
    if (n_kept == 0) throw ValidationError("empty selection at training step " +
                                           std::to_string(step));
    const double scale = cfg.eta / static_cast<double>(n_kept);
    for (size_t i = 0; i < student.logits.size(); ++i) student.logits[i] -= scale * gsum[i];

    StepLog log;
    log.step = step;
    log.kept_fraction = static_cast<double>(n_kept) / static_cast<double>(n_tokens);
    log.loss = teach::masked_opd_loss(records, mask, cfg.estimator).loss;
    log.mean_d_learn = dl_sum / static_cast<double>(n_kept);
    log.mean_d_incomp = di_sum / static_cast<double>(n_kept);
    log.q3_fraction = static_cast<double>(q3_kept) / static_cast<double>(n_kept);
    res.logs.push_back(log);
  }

  if (!res.logs.empty()) {
    for (const auto& l : res.logs) {
      res.mean_keep += l.kept_fraction;
      res.mean_q3_fraction += l.q3_fraction;
    }
    res.mean_keep /= static_cast<double>(res.logs.size());
    res.mean_q3_fraction /= static_cast<double>(res.logs.size());
  } else {
    res.mean_keep = cfg.rho;
  }
  return res;
}

namespace {

// Dense teacher probabilities from a bank context's sparse distribution.
std::vector<double> densify(const dist::SparseTokenDist& d, int v_size) {
  std::vector<double> q(v_size, 0.0);
  for (const auto& e : d.entries) q[e.token] = std::exp(e.logprob);
  return q;
}

std::vector<double> log_softmax(std::span<const double> row) {
  double m = row[0];
  for (double v : row) m = std::max(m, v);
  double s = 0.0;
  for (double v : row) s += std::exp(v - m);
  const double z = m + std::log(s);
  std::vector<double> out(row.begin(), row.end());
  for (double& v : out) v -= z;
  return out;
}

}  // namespace

Prop1Result verify_prop1(const TabularPolicy& student, const TabularPolicy& teacher,
                         const diag::ContextBank& bank, int state, std::span<const double> etas) {
  if (etas.empty()) throw DomainError("verify_prop1 needs at least one eta");
  const int v_size = student.vocab_size;
  const size_t n_bank = bank.contexts().size();
  if (n_bank == 0) throw ValidationError("verify_prop1 over empty bank");

  // Teacher distributions of the bank contexts sitting at `state`; only
  // those terms of the fixed-context loss move under a single-row update.
  std::vector<std::vector<double>> q_at_state;
  for (const auto& ctx : bank.contexts()) {
    if (ctx.state < 0) throw ValidationError("bank context lacks a simulator state");
    if (ctx.state == state) q_at_state.push_back(densify(ctx.teacher, v_size));
  }
  if (q_at_state.empty()) throw DomainError("probed state does not appear in the bank");

  Prop1Result res;
  res.state = state;
  const std::vector<double> g = opd_grad(student, teacher, state, teach::LossEstimator::full_kl);
  for (double v : g) res.grad_norm_sq += v * v;

  const std::vector<double> p = student.probs(state);
  const double inv_n = 1.0 / static_cast<double>(n_bank);
  const double n_state = static_cast<double>(q_at_state.size());

  // grad of L_fix on this row: sum_i (p - q_i) / N
  double inner = 0.0;
  for (int v = 0; v < v_size; ++v) {
    double gf = 0.0;
    for (const auto& q : q_at_state) gf += p[v] - q[v];
    inner += gf * inv_n * g[v];
  }

  double p_dot_g = 0.0;
  for (int v = 0; v < v_size; ++v) p_dot_g += p[v] * g[v];
  double s_qg = 0.0;  // sum_i <q_i, g>
  for (const auto& q : q_at_state)
    for (int v = 0; v < v_size; ++v) s_qg += q[v] * g[v];

  const auto base_row = student.row(state);

  // log Z(theta - c g) - log Z(theta) = log E_p[exp(-c g)], the cumulant
  // generating function of -g under p. expm1/log1p keep it exact for tiny
  // steps, where direct log-softmax differences would cancel away.
  auto delta_logz = [&](double c) {
    double acc = 0.0;
    for (int v = 0; v < v_size; ++v) acc += p[v] * std::expm1(-c * g[v]);
    return std::log1p(acc);
  };

  // Directional curvature of L_fix along the ray: the row Hessian of each
  // affected context is diag(p_c) - p_c p_c^T, so g'Hg = Var_{p_c}(g).
  auto curvature = [&](double c) {
    std::vector<double> row(base_row.begin(), base_row.end());
    for (int v = 0; v < v_size; ++v) row[v] -= c * g[v];
    const auto lp = log_softmax(row);
    double mean = 0.0, second = 0.0;
    for (int v = 0; v < v_size; ++v) {
      const double pv = std::exp(lp[v]);
      mean += pv * g[v];
      second += pv * g[v] * g[v];
    }
    return (n_state * inv_n) * std::max(0.0, second - mean * mean);
  };

  // curvature probed along the longest step any eta will take, 1.5x margin
  if (res.grad_norm_sq > 1e-300) {
    double eta_max = 0.0;
    for (double e : etas) eta_max = std::max(eta_max, e);
    double max_curv = 0.0;
    for (double c : {0.0, eta_max * 0.5, eta_max})
      max_curv = std::max(max_curv, curvature(c));
    res.beta_hat = 1.5 * max_curv / res.grad_norm_sq;
  }

  for (double eta : etas) {
    Prop1Point pt;
    pt.eta = eta;
    const double dlz = delta_logz(eta);
    // L_fix(theta) - L_fix(theta + Delta); only the state's contexts move
    pt.gain = inv_n * (-eta * s_qg - n_state * dlz);
    pt.inner = inner;
    // algebraically gain - eta*inner, with the O(eta) parts cancelled first
    pt.residual = -(n_state * inv_n) * (dlz + eta * p_dot_g);
    pt.bound = 0.5 * res.beta_hat * eta * eta * res.grad_norm_sq;
    pt.ok = std::abs(pt.residual) <= pt.bound + 1e-30;
    res.points.push_back(pt);
  }

  // log-log slope of |residual| against eta
  std::vector<double> xs, ys;
  for (const auto& pt : res.points) {
    if (std::abs(pt.residual) > 1e-300) {
      xs.push_back(std::log(pt.eta));
      ys.push_back(std::log(std::abs(pt.residual)));
    }
  }
  if (xs.size() >= 2) {
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
      mx += xs[i];
      my += ys[i];
    }
    mx /= xs.size();
    my /= ys.size();
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
      num += (xs[i] - mx) * (ys[i] - my);
      den += (xs[i] - mx) * (xs[i] - mx);
    }
    res.slope = den > 0.0 ? num / den : std::numeric_limits<double>::infinity();
  } else {
    res.slope = std::numeric_limits<double>::infinity();
  }
  return res;
}

}  // namespace taopd::sim
