// Timing comparison of the OpenMP kernels against their serial reference
// implementations. Run with --quick for a small smoke-sized configuration.

#include <omp.h>

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "taopd/bootstrap.hpp"
#include "taopd/context_bank.hpp"
#include "taopd/stats.hpp"
#include "taopd/trainer.hpp"

using namespace taopd;

namespace {

struct Timing {
  double serial = 0.0;
  double parallel = 0.0;
};

void report(const char* name, const Timing& t, bool match) {
  std::printf("%-22s serial %8.3f ms   parallel %8.3f ms   speedup %5.2fx   %s\n", name,
              t.serial * 1e3, t.parallel * 1e3, t.serial / t.parallel,
              match ? "outputs match" : "OUTPUT MISMATCH");
}

std::vector<TokenRecord> synth_records(int n_contexts, int len, int vocab, uint64_t seed) {
  sim::TabularPolicy student = sim::make_random_policy(vocab, 2, seed);
  sim::TabularPolicy teacher = sim::make_random_policy(vocab, 2, seed + 1);
  auto rollouts = sim::sample_rollouts(student, n_contexts, len, seed + 2);
  return sim::make_token_records(student, teacher, rollouts, 0, "");
}

}  // namespace

int main(int argc, char** argv) {
  bool quick = false;
  for (int i = 1; i < argc; ++i)
    if (std::strcmp(argv[i], "--quick") == 0) quick = true;

  const int n_contexts = quick ? 16 : 256;
  const int len = quick ? 16 : 128;
  const int boot_values = quick ? 2000 : 100000;
  const int boot_b = quick ? 200 : 2000;
  const int bank_contexts = quick ? 200 : 4000;

  std::printf("threads: %d\n", omp_get_max_threads());
  bool all_match = true;

  {
    auto records = synth_records(n_contexts, len, 16, 1);
    Timing t;
    double t0 = omp_get_wtime();
    auto ser = teach::compute_stats_batch_serial(records, 4);
    t.serial = omp_get_wtime() - t0;
    t0 = omp_get_wtime();
    auto par = teach::compute_stats_batch(records, 4);
    t.parallel = omp_get_wtime() - t0;
    bool match = ser.size() == par.size();
    for (size_t i = 0; match && i < ser.size(); ++i)
      match = ser[i].d == par[i].d && ser[i].c == par[i].c && ser[i].h_student == par[i].h_student;
    all_match &= match;
    report("token stats", t, match);
  }

  {
    Rng rng(2);
    std::vector<diag::ClusteredValue> values;
    values.reserve(boot_values);
    for (int i = 0; i < boot_values; ++i)
      values.push_back({"p" + std::to_string(i % 200), rng.next_normal()});
    Timing t;
    double t0 = omp_get_wtime();
    auto ser = diag::cluster_bootstrap_serial(values, boot_b, 3);
    t.serial = omp_get_wtime() - t0;
    t0 = omp_get_wtime();
    auto par = diag::cluster_bootstrap(values, boot_b, 3);
    t.parallel = omp_get_wtime() - t0;
    const bool match = ser.resample_means == par.resample_means;
    all_match &= match;
    report("cluster bootstrap", t, match);
  }

  {
    sim::TabularPolicy student = sim::make_random_policy(16, 2, 4);
    sim::TeacherDesign design{student, 0.5, 4};
    auto teacher = sim::design_teacher(design, 5);
    auto bank = sim::build_design_bank(design, teacher, bank_contexts, 64, 6);
    bank.add_snapshot("a", sim::snapshot_on_bank(student, bank));
    sim::TrainerConfig cfg;
    cfg.steps = 2;
    cfg.seed = 7;
    auto trained = sim::train_masked(student, teacher.policy, cfg);
    bank.add_snapshot("b", sim::snapshot_on_bank(trained.student, bank));
    Timing t;
    double t0 = omp_get_wtime();
    auto ser = diag::bank_gains_serial(bank, "a", "b");
    t.serial = omp_get_wtime() - t0;
    t0 = omp_get_wtime();
    auto par = diag::bank_gains(bank, "a", "b");
    t.parallel = omp_get_wtime() - t0;
    bool match = ser.size() == par.size();
    for (size_t i = 0; match && i < ser.size(); ++i) match = ser[i].g_fix == par[i].g_fix;
    all_match &= match;
    report("bank gains", t, match);
  }

  {
    sim::TabularPolicy policy = sim::make_random_policy(16, 2, 8);
    Timing t;
    double t0 = omp_get_wtime();
    auto ser = sim::sample_rollouts_serial(policy, n_contexts, len, 9);
    t.serial = omp_get_wtime() - t0;
    t0 = omp_get_wtime();
    auto par = sim::sample_rollouts(policy, n_contexts, len, 9);
    t.parallel = omp_get_wtime() - t0;
    bool match = ser.size() == par.size();
    for (size_t i = 0; match && i < ser.size(); ++i)
      for (size_t j = 0; match && j < ser[i].size(); ++j)
        match = ser[i][j].state == par[i][j].state && ser[i][j].token == par[i][j].token;
    all_match &= match;
    report("rollout sampling", t, match);
  }

  return all_match ? 0 : 1;
}
