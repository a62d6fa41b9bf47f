#include <doctest.h>

#include <cmath>
#include <map>

#include "taopd/errors.hpp"
#include "taopd/trainer.hpp"

using namespace taopd;
using sim::TabularPolicy;
using sim::TeacherDesign;

namespace {

// dense forward KL(q || p) for bank scoring checks
double dense_kl(std::span<const double> q, std::span<const double> p) {
  double acc = 0.0;
  for (size_t v = 0; v < q.size(); ++v)
    if (q[v] > 0.0) acc += q[v] * std::log(q[v] / p[v]);
  return acc;
}

double bank_mean_forward_kl(const diag::ContextBank& bank, const TabularPolicy& student) {
  double acc = 0.0;
  for (const auto& ctx : bank.contexts()) {
    std::vector<double> q(student.vocab_size, 0.0);
    for (const auto& e : ctx.teacher.entries) q[e.token] = std::exp(e.logprob);
    acc += dense_kl(q, student.probs(ctx.state));
  }
  return acc / static_cast<double>(bank.contexts().size());
}

// loss value used by the finite-difference oracle
double loss_value(const TabularPolicy& student, const TabularPolicy& teacher, int state,
                  teach::LossEstimator est, int32_t y) {
  if (est == teach::LossEstimator::full_kl) return sim::reverse_kl_loss(student, teacher, state);
  const auto lp = student.log_probs(state);
  const auto lq = teacher.log_probs(state);
  return lp[y] - lq[y];
}

double grad_rel_error(const TabularPolicy& student, const TabularPolicy& teacher, int state,
                      teach::LossEstimator est, int32_t y) {
  const auto analytic = sim::opd_grad(student, teacher, state, est, y);
  const double h = 1e-5;
  double num = 0.0, den = 0.0;
  TabularPolicy probe = student;
  for (int v = 0; v < student.vocab_size; ++v) {
    const double orig = probe.row(state)[v];
    probe.row(state)[v] = orig + h;
    const double up = loss_value(probe, teacher, state, est, y);
    probe.row(state)[v] = orig - h;
    const double down = loss_value(probe, teacher, state, est, y);
    probe.row(state)[v] = orig;
    const double fd = (up - down) / (2.0 * h);
    num += (analytic[v] - fd) * (analytic[v] - fd);
    den += analytic[v] * analytic[v];
  }
  return std::sqrt(num) / (std::sqrt(den) + 1e-300);
}

}  // namespace

TEST_CASE("rollout: determinism and one-hot policies") {
  TabularPolicy p = sim::make_random_policy(8, 2, 3);
  Rng r1(42), r2(42);
  auto a = sim::rollout(p, p.start_state(), 32, r1);
  auto b = sim::rollout(p, p.start_state(), 32, r2);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].state == b[i].state);
    CHECK(a[i].token == b[i].token);
  }

  // one-hot logits force a fixed sequence regardless of the seed
  TabularPolicy det = p;
  for (int s = 0; s < det.n_states(); ++s) {
    auto row = det.row(s);
    for (auto& v : row) v = -100.0;
    row[s % det.vocab_size] = 100.0;
  }
  Rng r3(1), r4(999);
  auto d1 = sim::rollout(det, det.start_state(), 16, r3);
  auto d2 = sim::rollout(det, det.start_state(), 16, r4);
  for (size_t i = 0; i < d1.size(); ++i) CHECK(d1[i].token == d2[i].token);
}

TEST_CASE("rollout: empirical frequencies match softmax within 3-sigma") {
  TabularPolicy p = sim::make_random_policy(6, 1, 9, 0.5, 1.0);
  const int state = p.start_state();
  const auto probs = p.probs(state);
  const int n = 100000;
  std::vector<int> counts(p.vocab_size, 0);
  Rng rng(7);
  for (int i = 0; i < n; ++i) {
    auto step = sim::rollout(p, state, 1, rng);
    ++counts[step[0].token];
  }
  for (int v = 0; v < p.vocab_size; ++v) {
    const double expect = n * probs[v];
    const double sigma = std::sqrt(n * probs[v] * (1.0 - probs[v]));
    CHECK(std::abs(counts[v] - expect) <= 3.0 * sigma + 1.0);
  }
}

TEST_CASE("sample_rollouts: parallel equals serial") {
  TabularPolicy p = sim::make_random_policy(8, 2, 5);
  auto a = sim::sample_rollouts(p, 16, 20, 77);
  auto b = sim::sample_rollouts_serial(p, 16, 20, 77);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t t = 0; t < a[i].size(); ++t) {
      CHECK(a[i][t].state == b[i][t].state);
      CHECK(a[i][t].token == b[i][t].token);
    }
}

TEST_CASE("opd_grad: zero at the minimum, zero row sum, shift invariance") {
  TabularPolicy p = sim::make_random_policy(10, 1, 21);
  for (int s = 0; s < 5; ++s) {
    auto g = sim::opd_grad(p, p, s, teach::LossEstimator::full_kl);
    for (double v : g) CHECK(std::abs(v) <= 1e-14);
  }

  TabularPolicy q = sim::make_random_policy(10, 1, 22);
  for (int s = 0; s < 10; ++s) {
    auto g = sim::opd_grad(p, q, s, teach::LossEstimator::full_kl);
    double sum = 0.0;
    for (double v : g) sum += v;
    CHECK(std::abs(sum) <= 1e-12);
  }

  // adding a constant to a logit row changes nothing
  TabularPolicy shifted = p;
  for (auto& v : shifted.row(3)) v += 4.2;
  auto g0 = sim::opd_grad(p, q, 3, teach::LossEstimator::full_kl);
  auto g1 = sim::opd_grad(shifted, q, 3, teach::LossEstimator::full_kl);
  for (size_t v = 0; v < g0.size(); ++v) CHECK(std::abs(g0[v] - g1[v]) <= 1e-12);
  const auto d0 = p.probs(3);
  const auto d1 = shifted.probs(3);
  for (size_t v = 0; v < d0.size(); ++v) CHECK(std::abs(d0[v] - d1[v]) <= 1e-14);
}

TEST_CASE("opd_grad matches central finite differences") {
  Rng rng(303);
  for (int trial = 0; trial < 60; ++trial) {
    const int vocab = 4 + static_cast<int>(rng.next_below(12));
    TabularPolicy student = sim::make_random_policy(vocab, 1, rng.next_u64());
    TabularPolicy teacher = sim::make_random_policy(vocab, 1, rng.next_u64());
    const int state = static_cast<int>(rng.next_below(student.n_states()));
    CHECK(grad_rel_error(student, teacher, state, teach::LossEstimator::full_kl, 0) <= 1e-6);
    const int32_t y = static_cast<int32_t>(rng.next_below(vocab));
    CHECK(grad_rel_error(student, teacher, state, teach::LossEstimator::sampled_token, y) <= 1e-6);
  }
}

TEST_CASE("design_teacher: compatibility mass separates by label") {
  TabularPolicy student = sim::make_random_policy(16, 2, 1001);
  TeacherDesign design{student, 0.5, 4};
  auto teacher = sim::design_teacher(design, 5);
  auto bank = sim::build_design_bank(design, teacher, 400, 64, 6);
  REQUIRE(bank.contexts().size() == 400);
  CHECK(bank.frozen());

  // per-context compatibility from the planted teacher
  std::vector<double> c_aligned, c_off;
  for (const auto& ctx : bank.contexts()) {
    TokenRecord rec;
    rec.student = student.next_token_dist(ctx.state);
    rec.teacher = ctx.teacher;
    rec.sampled_token = ctx.sampled_token;
    auto s = teach::compute_stats(rec, design.k);
    REQUIRE(ctx.aligned_label >= 0);
    (ctx.aligned_label ? c_aligned : c_off).push_back(s.c);
  }
  REQUIRE(!c_aligned.empty());
  REQUIRE(!c_off.empty());
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double gap = median(c_aligned) - median(c_off);
  CHECK(gap > 0.3);  // two separated compatibility modes
  CHECK(median(c_aligned) > 0.8);
}

TEST_CASE("design_teacher: extreme fractions") {
  TabularPolicy student = sim::make_random_policy(16, 2, 77);
  auto all_aligned = sim::design_teacher({student, 1.0, 4}, 3);
  for (uint8_t a : all_aligned.aligned) CHECK(a == 1);
  auto none_aligned = sim::design_teacher({student, 0.0, 4}, 3);
  for (uint8_t a : none_aligned.aligned) CHECK(a == 0);

  auto bank = sim::build_design_bank({student, 0.0, 4}, none_aligned, 150, 50, 4);
  std::vector<double> cs;
  for (const auto& ctx : bank.contexts()) {
    TokenRecord rec;
    rec.student = student.next_token_dist(ctx.state);
    rec.teacher = ctx.teacher;
    auto s = teach::compute_stats(rec, 4);
    cs.push_back(s.c);
  }
  std::sort(cs.begin(), cs.end());
  // median compatibility clearly below the aligned/neutral mode (~0.97)
  CHECK(cs[cs.size() / 2] < 0.7);
}

TEST_CASE("build_design_bank: rejects tiny banks") {
  TabularPolicy student = sim::make_random_policy(16, 2, 1);
  auto teacher = sim::design_teacher({student, 1.0, 4}, 2);
  CHECK_THROWS_AS(sim::build_design_bank({student, 1.0, 4}, teacher, 99, 64, 3), DomainError);
}

TEST_CASE("train_masked: zero steps leaves the student unchanged") {
  TabularPolicy student = sim::make_random_policy(16, 2, 10);
  TabularPolicy teacher = sim::make_random_policy(16, 2, 11);
  sim::TrainerConfig cfg;
  cfg.steps = 0;
  auto res = sim::train_masked(student, teacher, cfg);
  CHECK(res.student.logits == student.logits);
  CHECK(res.logs.empty());
}

TEST_CASE("train_masked: random selector runs are bit-identical across reruns") {
  TabularPolicy student = sim::make_random_policy(16, 2, 12);
  TeacherDesign design{student, 0.5, 4};
  auto teacher = sim::design_teacher(design, 13);
  sim::TrainerConfig cfg;
  cfg.steps = 3;
  cfg.rho = 0.1;
  cfg.selector = teach::SelectorKind::random;
  cfg.rollouts_per_step = 8;
  cfg.rollout_len = 32;
  cfg.seed = 99;
  auto a = sim::train_masked(student, teacher.policy, cfg);
  auto b = sim::train_masked(student, teacher.policy, cfg);
  CHECK(a.student.logits == b.student.logits);
  REQUIRE(a.logs.size() == b.logs.size());
  for (size_t i = 0; i < a.logs.size(); ++i) CHECK(a.logs[i].loss == b.logs[i].loss);
}

TEST_CASE("train_masked: budget respected in every step log") {
  TabularPolicy student = sim::make_random_policy(16, 2, 14);
  auto teacher = sim::design_teacher({student, 0.7, 4}, 15);
  sim::TrainerConfig cfg;
  cfg.steps = 2;
  cfg.rho = 0.05;
  cfg.rollouts_per_step = 8;
  cfg.rollout_len = 32;
  auto res = sim::train_masked(student, teacher.policy, cfg);
  const double expect = std::ceil(0.05 * 8 * 32) / (8.0 * 32.0);
  for (const auto& log : res.logs) CHECK(log.kept_fraction == doctest::Approx(expect));
}

TEST_CASE("train_masked: full-mask training on an aligned teacher reduces bank KL") {
  TabularPolicy student = sim::make_random_policy(16, 2, 2000);
  TeacherDesign design{student, 1.0, 4};
  auto teacher = sim::design_teacher(design, 2001);
  auto bank = sim::build_design_bank(design, teacher, 200, 50, 2002);

  int monotone_failures = 0;
  TabularPolicy current = student;
  double prev = bank_mean_forward_kl(bank, current);
  sim::TrainerConfig cfg;
  cfg.steps = 1;
  cfg.rho = 1.0;
  cfg.eta = 0.05;
  for (int step = 0; step < 10; ++step) {
    cfg.seed = 5000 + step;
    current = sim::train_masked(current, teacher.policy, cfg).student;
    const double now = bank_mean_forward_kl(bank, current);
    if (now >= prev) ++monotone_failures;
    prev = now;
  }
  CHECK(monotone_failures == 0);
  CHECK(prev < bank_mean_forward_kl(bank, student));
}

TEST_CASE("verify_prop1: zero gradient gives zero gain and residual") {
  TabularPolicy student = sim::make_random_policy(16, 2, 31);
  TeacherDesign design{student, 1.0, 4};
  // teacher identical to student: gradient vanishes everywhere
  sim::DesignedTeacher teacher;
  teacher.policy = student;
  teacher.aligned.assign(student.n_states(), 1);
  auto bank = sim::build_design_bank(design, teacher, 120, 40, 32);
  const int state = bank.contexts()[0].state;
  const double etas[] = {1e-2, 1e-3};
  auto res = sim::verify_prop1(student, student, bank, state, etas);
  CHECK(res.grad_norm_sq <= 1e-20);
  for (const auto& pt : res.points) {
    CHECK(pt.gain == 0.0);
    CHECK(pt.residual == 0.0);
    CHECK(pt.ok);
  }
}

TEST_CASE("verify_prop1: quadratic residual scaling and bound") {
  TabularPolicy student = sim::make_random_policy(16, 2, 41);
  TeacherDesign design{student, 0.5, 4};
  auto teacher = sim::design_teacher(design, 42);
  auto bank = sim::build_design_bank(design, teacher, 300, 60, 43);

  const double etas[] = {1e-2, 1e-3, 1e-4};
  Rng rng(44);
  int checked = 0;
  for (int trial = 0; trial < 40 && checked < 20; ++trial) {
    const int idx = static_cast<int>(rng.next_below(bank.contexts().size()));
    const int state = bank.contexts()[idx].state;
    auto res = sim::verify_prop1(student, teacher.policy, bank, state, etas);
    if (res.grad_norm_sq < 1e-12) continue;
    ++checked;
    for (const auto& pt : res.points) CHECK(pt.ok);
    CHECK(res.slope >= 1.9);
    // halving eta shrinks the residual roughly 4x
    const double r2 = std::abs(res.points[0].residual);
    auto res_half = sim::verify_prop1(student, teacher.policy, bank, state,
                                      std::vector<double>{5e-3});
    const double r_half = std::abs(res_half.points[0].residual);
    if (r2 > 1e-14) CHECK(r_half <= 0.35 * r2);
  }
  CHECK(checked >= 10);
}

TEST_CASE("verify_prop1: probing a state absent from the bank fails") {
  TabularPolicy student = sim::make_random_policy(4, 1, 51);
  TeacherDesign design{student, 1.0, 2};
  auto teacher = sim::design_teacher(design, 52);
  auto bank = sim::build_design_bank(design, teacher, 100, 25, 53);
  std::vector<uint8_t> seen(student.n_states(), 0);
  for (const auto& ctx : bank.contexts()) seen[ctx.state] = 1;
  int missing = -1;
  for (int s = 0; s < student.n_states(); ++s)
    if (!seen[s]) missing = s;
  if (missing >= 0) {
    const double etas[] = {1e-3};
    CHECK_THROWS_AS(sim::verify_prop1(student, teacher.policy, bank, missing, etas), DomainError);
  }
}

TEST_CASE("bank gains match a direct dense computation") {
  TabularPolicy student = sim::make_random_policy(16, 2, 61);
  TeacherDesign design{student, 0.8, 4};
  auto teacher = sim::design_teacher(design, 62);
  auto bank = sim::build_design_bank(design, teacher, 150, 50, 63);
  bank.add_snapshot("init", sim::snapshot_on_bank(student, bank));

  sim::TrainerConfig cfg;
  cfg.steps = 5;
  cfg.rho = 1.0;
  cfg.seed = 64;
  auto trained = sim::train_masked(student, teacher.policy, cfg);
  bank.add_snapshot("final", sim::snapshot_on_bank(trained.student, bank));

  auto gains = diag::bank_gains(bank, "init", "final");
  const double before = bank_mean_forward_kl(bank, student);
  const double after = bank_mean_forward_kl(bank, trained.student);
  double mean_gain = 0.0;
  for (const auto& g : gains) mean_gain += g.g_fix;
  mean_gain /= static_cast<double>(gains.size());
  CHECK(mean_gain == doctest::Approx(before - after).epsilon(1e-9));

  // identical checkpoints: zero gains everywhere
  bank.add_snapshot("init2", sim::snapshot_on_bank(student, bank));
  for (const auto& g : diag::bank_gains(bank, "init", "init2"))
    CHECK(std::abs(g.g_fix) <= 1e-12);

  // antisymmetry under swapping the checkpoints
  auto swapped = diag::bank_gains(bank, "final", "init");
  for (size_t i = 0; i < gains.size(); ++i)
    CHECK(gains[i].g_fix == doctest::Approx(-swapped[i].g_fix).epsilon(1e-12));
}
