#include "cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "taopd/bank_io.hpp"
#include "taopd/diagnostics.hpp"
#include "taopd/dump_io.hpp"
#include "taopd/errors.hpp"
#include "taopd/score_csv.hpp"
#include "taopd/trainer.hpp"

namespace taopd::cli {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  return out;
}

// ---------------------------------------------------------------- score ---

struct ScoreArgs {
  std::string dump_path;
  int k = 0;  // 0: take K from the dump header
  std::string scope = "batch";
  std::string out_path;
};

void cmd_score(const ScoreArgs& args) {
  auto [header, records] = io::read_dump(args.dump_path);
  const int k = args.k > 0 ? args.k : header.k;
  if (k < 1) throw DomainError("K must be >= 1");

  size_t undersized = 0;
  for (const auto& r : records) {
    if (r.student.entries.size() < static_cast<size_t>(k) ||
        r.teacher.entries.size() < static_cast<size_t>(k))
      ++undersized;
  }
  if (undersized > 0)
    std::cerr << "warning: K=" << k << " clamped to the listed entry count on " << undersized
              << " of " << records.size() << " records\n";

  const auto stats = teach::compute_stats_batch(records, k);

  // normalization groups: the whole dataset, or per recorded rollout batch
  std::vector<std::vector<size_t>> groups;
  if (args.scope == "dataset") {
    groups.emplace_back(records.size());
    for (size_t i = 0; i < records.size(); ++i) groups[0][i] = i;
  } else {
    std::map<std::string, size_t> group_of;
    for (size_t i = 0; i < records.size(); ++i) {
      auto [it, inserted] = group_of.try_emplace(records[i].batch_id, groups.size());
      if (inserted) groups.emplace_back();
      groups[it->second].push_back(i);
    }
  }

  teach::NormalizationConfig cfg;
  cfg.scope = args.scope == "dataset" ? teach::NormalizationConfig::Scope::per_dataset
                                      : teach::NormalizationConfig::Scope::per_batch;
  std::vector<teach::NormalizedStats> norm(records.size());
  for (const auto& group : groups) {
    std::vector<teach::TokenStats> gs(group.size());
    std::vector<uint8_t> gv(group.size());
    for (size_t j = 0; j < group.size(); ++j) {
      gs[j] = stats[group[j]];
      gv[j] = records[group[j]].valid ? 1 : 0;
    }
    bool any_valid = false;
    for (uint8_t v : gv) any_valid |= v != 0;
    if (!any_valid) gv.assign(group.size(), 1);  // all-invalid group: degrade gracefully
    auto gn = teach::normalize_batch(gs, cfg, gv);
    for (size_t j = 0; j < group.size(); ++j) norm[group[j]] = gn[j];
  }

  auto out = open_out(args.out_path);
  io::write_scores(out, records, stats, norm);
}

// --------------------------------------------------------------- select ---

struct SelectArgs {
  std::string scores_path;
  std::string selector = "teach";
  double rho = 0.05;
  uint64_t seed = 0;
  std::string out_path;
};

void cmd_select(const SelectArgs& args) {
  const auto kind = teach::selector_from_name(args.selector);
  auto table = io::read_csv(args.scores_path);
  const int c_prompt = table.require_column("prompt_id");
  const int c_ctx = table.require_column("context_id");
  const int c_pos = table.require_column("position");
  const int c_valid = table.require_column("valid");
  int c_score = -1;
  if (kind != teach::SelectorKind::random)
    c_score = table.require_column("score_" + args.selector);

  const size_t n = table.rows.size();
  std::vector<double> scores(n, 0.0);
  std::vector<uint8_t> valid(n);
  std::vector<teach::TieKey> keys(n);
  for (size_t i = 0; i < n; ++i) {
    valid[i] = table.integer(i, c_valid) != 0 ? 1 : 0;
    keys[i] = {static_cast<int32_t>(table.integer(i, c_pos)), table.rows[i][c_ctx]};
    if (c_score >= 0) scores[i] = table.real(i, c_score);
  }
  const auto mask = teach::select(scores, valid, keys, args.rho, kind, args.seed);

  auto out = open_out(args.out_path);
  out << "prompt_id,context_id,position,keep\n";
  for (size_t i = 0; i < n; ++i)
    out << table.rows[i][c_prompt] << ',' << table.rows[i][c_ctx] << ','
        << table.rows[i][c_pos] << ',' << static_cast<int>(mask.keep[i]) << "\n";
}

// ------------------------------------------------------------- diagnose ---

struct DiagnoseArgs {
  std::string bank_path;
  std::string mode = "gain";
  int resamples = 1000;
  uint64_t seed = 0;
  std::string out_path;
  int k = 16;
  std::string before, after;
  bool q3_only = false;
  int n_buckets = 10;
  std::string score = "D_learn";
  std::string proxy;  // empty: audit all proxies
};

std::vector<TokenRecord> records_from_bank(const diag::ContextBank& bank,
                                           const std::string& ckpt) {
  const auto& snap = bank.snapshot(ckpt);
  std::vector<TokenRecord> records(bank.contexts().size());
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& ctx = bank.contexts()[i];
    records[i].prompt_id = ctx.prompt_id;
    records[i].context_id = ctx.context_id;
    records[i].position = ctx.position;
    records[i].sampled_token = ctx.sampled_token;
    records[i].student = snap.student[i];
    records[i].teacher = ctx.teacher;
  }
  return records;
}

void cmd_diagnose(const DiagnoseArgs& args) {
  auto loaded = io::load_bank(args.bank_path);
  const auto& bank = loaded.bank;
  if (bank.snapshots().empty()) throw ValidationError("bank has no checkpoint snapshots");
  const std::string before = args.before.empty() ? bank.snapshots().front().checkpoint_id
                                                 : args.before;
  const std::string after = args.after.empty() ? bank.snapshots().back().checkpoint_id
                                               : args.after;
  auto out = open_out(args.out_path);

  if (args.mode == "gain") {
    auto gains = diag::bank_gains(bank, before, after);
    std::vector<diag::ClusteredValue> cv(gains.size());
    for (size_t i = 0; i < gains.size(); ++i) cv[i] = {gains[i].cluster, gains[i].g_fix};
    const auto boot = diag::cluster_bootstrap(cv, args.resamples, args.seed);
    out << "context_index,prompt_id,context_id,position,g_fix\n";
    for (const auto& g : gains) {
      const auto& ctx = bank.contexts()[g.context_index];
      out << g.context_index << ',' << ctx.prompt_id << ',' << ctx.context_id << ','
          << ctx.position << ',' << fmt(g.g_fix) << "\n";
    }
    std::cout << "mean_gain=" << fmt(boot.mean) << " ci=[" << fmt(boot.ci_low) << ","
              << fmt(boot.ci_high) << "] contexts=" << gains.size() << "\n";
  } else if (args.mode == "regress") {
    auto rows = diag::build_diag_rows(bank, before, after, args.k, {}, {});
    diag::RegressionSpec spec;
    spec.bootstrap_resamples = args.resamples;
    spec.seed = args.seed;
    spec.q3_only = args.q3_only;
    const auto res = diag::standardized_regression(rows, spec);
    out << "term,beta,ci_low,ci_high\n";
    for (const auto& c : res.coefficients)
      out << c.name << ',' << fmt(c.beta) << ',' << fmt(c.ci_low) << ',' << fmt(c.ci_high)
          << "\n";
    if (res.has_gap)
      out << "gap_DL_minus_DI," << fmt(res.gap) << ',' << fmt(res.gap_ci_low) << ','
          << fmt(res.gap_ci_high) << "\n";
    std::cout << "n_rows=" << res.n_rows << " r2=" << fmt(res.r2);
    if (res.has_delta_r2)
      std::cout << " delta_r2=" << fmt(res.delta_r2) << " (" << fmt(res.delta_r2 * 1e3)
                << " in 1e-3 units)";
    std::cout << "\n";
  } else if (args.mode == "buckets") {
    auto rows = diag::build_diag_rows(bank, before, after, args.k, {}, {});
    std::vector<double> scores(rows.size()), gains(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
      scores[i] = diag::predictor_value(rows[i], args.score);
      gains[i] = rows[i].gain;
    }
    auto buckets = diag::bucket_trend(scores, gains, args.n_buckets);
    out << "bucket,mean_score,mean_gain,count\n";
    for (size_t b = 0; b < buckets.size(); ++b)
      out << b << ',' << fmt(buckets[b].mean_score) << ',' << fmt(buckets[b].mean_gain) << ','
          << buckets[b].count << "\n";
  } else if (args.mode == "proxies") {
    auto records = records_from_bank(bank, before);
    auto gains = diag::bank_gains(bank, before, after);
    std::vector<double> g(gains.size());
    for (size_t i = 0; i < gains.size(); ++i) g[i] = gains[i].g_fix;
    std::vector<diag::SupportProxy> proxies;
    if (args.proxy.empty()) {
      proxies = {diag::SupportProxy::c_mass, diag::SupportProxy::topk_overlap,
                 diag::SupportProxy::jaccard, diag::SupportProxy::shared_teacher_mass};
    } else {
      proxies = {diag::proxy_from_name(args.proxy)};
    }
    out << "proxy,n_q3,mean_high,mean_low,gap,ci_low,ci_high\n";
    for (auto p : proxies) {
      const auto res = diag::support_proxy_audit(records, g, p, {}, args.k, args.resamples,
                                                 args.seed);
      out << diag::proxy_name(p) << ',' << res.n_q3 << ',' << fmt(res.mean_high) << ','
          << fmt(res.mean_low) << ',' << fmt(res.gap) << ',' << fmt(res.ci_low) << ','
          << fmt(res.ci_high) << "\n";
    }
  } else if (args.mode == "intervention") {
    if (loaded.runs.empty())
      throw ValidationError("bank has no recorded selector runs; run the simulator first");
    const auto rows = diag::selector_intervention_report(bank, loaded.runs, args.resamples,
                                                         args.seed);
    out << "selector,rho,seed,actual_keep,gain,ci_low,ci_high,gain_per_kept,q3_fraction\n";
    for (const auto& r : rows)
      out << teach::selector_name(r.selector) << ',' << fmt(r.rho) << ',' << r.seed << ','
          << fmt(r.actual_keep) << ',' << fmt(r.gain) << ',' << fmt(r.gain_ci_low) << ','
          << fmt(r.gain_ci_high) << ',' << fmt(r.gain_per_kept) << ',' << fmt(r.q3_fraction)
          << "\n";
  } else {
    throw DomainError("unknown diagnose mode '" + args.mode + "'");
  }
}

// ------------------------------------------------------------- simulate ---

struct SimulateArgs {
  double aligned_fraction = 0.5;
  double neutral_fraction = 0.75;
  std::vector<std::string> selectors = {"teach"};
  std::vector<double> rhos = {0.03};
  std::vector<std::string> q3_masks;  // high_dl, low_dl, high_di
  int steps = 20;
  std::vector<uint64_t> seeds = {0};
  std::string out_dir;
  double eta = 15.0;  // per kept token this is eta / n_kept, see train_masked
  int k = 4;
  int vocab = 16;
  int order = 3;
  int rollout_len = 64;
  int rollouts_per_step = 64;
  int contexts = 600;
  int resamples = 1000;
  std::string dump_path;  // optional TokenRecord JSONL of initial rollouts
  int dump_top_k = 8;
};

sim::TrainerConfig::Restrict restrict_from_name(const std::string& name) {
  if (name == "high_dl") return sim::TrainerConfig::Restrict::q3_high_dl;
  if (name == "low_dl") return sim::TrainerConfig::Restrict::q3_low_dl;
  if (name == "high_di") return sim::TrainerConfig::Restrict::q3_high_di;
  throw DomainError("unknown q3 mask '" + name + "' (expected high_dl, low_dl, or high_di)");
}

void cmd_simulate(const SimulateArgs& args) {
  namespace fs = std::filesystem;
  fs::create_directories(args.out_dir);
  auto report = open_out((fs::path(args.out_dir) / "intervention.csv").string());
  report << "seed,selector,rho,actual_keep,gain,ci_low,ci_high,gain_per_kept,q3_fraction\n";
  auto log_out = open_out((fs::path(args.out_dir) / "train_log.csv").string());
  log_out << "seed,selector,rho,step,kept_fraction,loss,mean_d_learn,mean_d_incomp,q3_fraction\n";

  for (uint64_t seed : args.seeds) {
    auto student = sim::make_random_policy(args.vocab, args.order, derive_seed(seed, 1));
    sim::TeacherDesign design{student, args.aligned_fraction, args.k, args.neutral_fraction};
    const auto teacher = sim::design_teacher(design, derive_seed(seed, 2));
    auto bank = sim::build_design_bank(design, teacher, args.contexts, args.rollout_len,
                                       derive_seed(seed, 3));
    bank.add_snapshot("init", sim::snapshot_on_bank(student, bank));

    std::vector<diag::InterventionRun> runs;
    std::vector<std::string> labels;
    auto run_one = [&](const std::string& label, teach::SelectorKind kind,
                       sim::TrainerConfig::Restrict restrict, double rho) {
      sim::TrainerConfig cfg;
      cfg.eta = args.eta;
      cfg.steps = args.steps;
      cfg.rho = rho;
      cfg.selector = kind;
      cfg.restrict = restrict;
      cfg.rollout_len = args.rollout_len;
      cfg.rollouts_per_step = args.rollouts_per_step;
      cfg.seed = derive_seed(seed, 100 + runs.size());
      cfg.k = args.k;
      const auto trained = sim::train_masked(student, teacher.policy, cfg);
      const std::string ckpt = label + "@" + fmt(rho);
      bank.add_snapshot(ckpt, sim::snapshot_on_bank(trained.student, bank));
      diag::InterventionRun run;
      run.selector = kind;
      run.rho = rho;
      run.ckpt_before = "init";
      run.ckpt_after = ckpt;
      run.actual_keep = trained.mean_keep;
      run.q3_fraction = trained.mean_q3_fraction;
      run.seed = seed;
      runs.push_back(run);
      labels.push_back(label);
      for (const auto& l : trained.logs)
        log_out << seed << ',' << label << ',' << fmt(rho) << ',' << l.step << ','
                << fmt(l.kept_fraction) << ',' << fmt(l.loss) << ',' << fmt(l.mean_d_learn)
                << ',' << fmt(l.mean_d_incomp) << ',' << fmt(l.q3_fraction) << "\n";
    };

    for (double rho : args.rhos) {
      for (const auto& name : args.selectors)
        run_one(name, teach::selector_from_name(name), sim::TrainerConfig::Restrict::none, rho);
      for (const auto& name : args.q3_masks)
        run_one("q3_" + name, teach::SelectorKind::teach, restrict_from_name(name), rho);
    }

    io::save_bank(
        (fs::path(args.out_dir) / ("bank_seed" + std::to_string(seed) + ".json")).string(),
        bank, runs);

    const auto rows = diag::selector_intervention_report(bank, runs, args.resamples,
                                                         derive_seed(seed, 4));
    for (size_t i = 0; i < rows.size(); ++i)
      report << seed << ',' << labels[i] << ',' << fmt(rows[i].rho) << ','
             << fmt(rows[i].actual_keep) << ',' << fmt(rows[i].gain) << ','
             << fmt(rows[i].gain_ci_low) << ',' << fmt(rows[i].gain_ci_high) << ','
             << fmt(rows[i].gain_per_kept) << ',' << fmt(rows[i].q3_fraction) << "\n";

    if (!args.dump_path.empty() && seed == args.seeds.front()) {
      const auto rollouts = sim::sample_rollouts(student, args.rollouts_per_step,
                                                 args.rollout_len, derive_seed(seed, 5));
      const auto records = sim::make_token_records(student, teacher.policy, rollouts,
                                                   args.dump_top_k, "b0");
      io::DumpHeader header;
      header.vocab_size = args.vocab;
      header.k = args.k;
      header.producer = "taopd-simulate";
      header.has_teacher_on_student_support = args.dump_top_k == 0;
      io::write_dump(args.dump_path, header, records);
    }
  }
}

// ---------------------------------------------------------------- prop1 ---

struct Prop1Args {
  std::vector<uint64_t> seeds = {0};
  std::vector<double> etas = {1e-2, 1e-3, 1e-4};
  std::string out_path;
  int vocab = 16;
  int order = 2;
  int n_states = 100;
  double aligned_fraction = 0.5;
  int k = 4;
};

void cmd_prop1(const Prop1Args& args) {
  auto out = open_out(args.out_path);
  out << "seed,state,eta,gain,inner,residual,bound,ok,slope\n";
  int total = 0, ok_count = 0;
  double min_slope = std::numeric_limits<double>::infinity();
  for (uint64_t seed : args.seeds) {
    auto student = sim::make_random_policy(args.vocab, args.order, derive_seed(seed, 1));
    sim::TeacherDesign design{student, args.aligned_fraction, args.k};
    const auto teacher = sim::design_teacher(design, derive_seed(seed, 2));
    const auto bank = sim::build_design_bank(design, teacher, 300, 60, derive_seed(seed, 3));

    Rng rng(derive_seed(seed, 4));
    for (int i = 0; i < args.n_states; ++i) {
      const auto& ctx = bank.contexts()[rng.next_below(bank.contexts().size())];
      const auto res = sim::verify_prop1(student, teacher.policy, bank, ctx.state, args.etas);
      for (const auto& pt : res.points) {
        out << seed << ',' << res.state << ',' << fmt(pt.eta) << ',' << fmt(pt.gain) << ','
            << fmt(pt.inner) << ',' << fmt(pt.residual) << ',' << fmt(pt.bound) << ','
            << (pt.ok ? 1 : 0) << ',' << fmt(res.slope) << "\n";
        ++total;
        ok_count += pt.ok ? 1 : 0;
      }
      if (res.grad_norm_sq > 1e-12) min_slope = std::min(min_slope, res.slope);
    }
  }
  std::cout << "points=" << total << " bound_satisfied=" << ok_count
            << " min_slope=" << fmt(min_slope) << "\n";
  if (ok_count != total) throw NumericError("smoothness bound violated on some states");
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"teachability-aware token selection for on-policy distillation"};
  app.require_subcommand(1);

  ScoreArgs score;
  auto* s = app.add_subcommand("score", "score a TokenRecord dump into a per-token CSV");
  s->add_option("--dump", score.dump_path, "TokenRecord JSONL dump")->required();
  s->add_option("--k", score.k, "top-K support size (0: use the dump header)");
  s->add_option("--scope", score.scope, "normalization scope")
      ->check(CLI::IsMember({"batch", "dataset"}));
  s->add_option("--out", score.out_path, "output CSV")->required();

  SelectArgs select;
  auto* sel = app.add_subcommand("select", "build a budgeted keep-mask from a score CSV");
  sel->add_option("--scores", select.scores_path, "score CSV from `score`")->required();
  sel->add_option("--selector", select.selector, "selector name")->required();
  sel->add_option("--rho", select.rho, "retention ratio in (0,1]")->required();
  sel->add_option("--seed", select.seed, "seed for the random selector");
  sel->add_option("--out", select.out_path, "output mask CSV")->required();

  DiagnoseArgs diag_args;
  auto* d = app.add_subcommand("diagnose", "fixed-context diagnostics over a bank");
  d->add_option("--bank", diag_args.bank_path, "bank file")->required();
  d->add_option("--mode", diag_args.mode, "diagnostic mode")
      ->check(CLI::IsMember({"gain", "regress", "buckets", "proxies", "intervention"}))
      ->required();
  d->add_option("--resamples", diag_args.resamples, "bootstrap resamples");
  d->add_option("--seed", diag_args.seed, "bootstrap seed");
  d->add_option("--out", diag_args.out_path, "output CSV")->required();
  d->add_option("--k", diag_args.k, "top-K support size");
  d->add_option("--before", diag_args.before, "checkpoint id (default: first)");
  d->add_option("--after", diag_args.after, "checkpoint id (default: last)");
  d->add_flag("--q3-only", diag_args.q3_only, "restrict regression rows to the Q3 region");
  d->add_option("--buckets", diag_args.n_buckets, "bucket count for mode=buckets");
  d->add_option("--score", diag_args.score, "score column for mode=buckets");
  d->add_option("--proxy", diag_args.proxy, "single proxy for mode=proxies");

  SimulateArgs sim_args;
  auto* sm = app.add_subcommand("simulate", "designed-teacher OPD simulation runs");
  sm->add_option("--design", sim_args.aligned_fraction, "aligned fraction of corrected states")
      ->check(CLI::Range(0.0, 1.0));
  sm->add_option("--neutral", sim_args.neutral_fraction, "fraction of states left uncorrected")
      ->check(CLI::Range(0.0, 1.0));
  sm->add_option("--selector", sim_args.selectors, "selectors to train (repeatable)");
  sm->add_option("--rho", sim_args.rhos, "retention ratios (repeatable)");
  sm->add_option("--q3-mask", sim_args.q3_masks,
                 "Q3-restricted masks: high_dl, low_dl, high_di (repeatable)");
  sm->add_option("--steps", sim_args.steps, "training steps per run");
  sm->add_option("--seeds", sim_args.seeds, "seeds (repeatable)");
  sm->add_option("--out", sim_args.out_dir, "output directory")->required();
  sm->add_option("--eta", sim_args.eta, "learning rate");
  sm->add_option("--k", sim_args.k, "top-K support size");
  sm->add_option("--vocab", sim_args.vocab, "vocabulary size");
  sm->add_option("--order", sim_args.order, "n-gram order of the policy state");
  sm->add_option("--rollout-len", sim_args.rollout_len, "tokens per rollout");
  sm->add_option("--rollouts", sim_args.rollouts_per_step, "rollouts per step");
  sm->add_option("--contexts", sim_args.contexts, "bank contexts");
  sm->add_option("--resamples", sim_args.resamples, "bootstrap resamples for the report");
  sm->add_option("--dump", sim_args.dump_path, "also emit a TokenRecord JSONL dump");
  sm->add_option("--dump-top-k", sim_args.dump_top_k,
                 "entries kept per dist in the dump (0: full rows)");

  Prop1Args prop1;
  auto* p = app.add_subcommand("prop1", "single-token update gain expansion audit");
  p->add_option("--seeds", prop1.seeds, "seeds (repeatable)");
  p->add_option("--etas", prop1.etas, "step sizes (repeatable)");
  p->add_option("--out", prop1.out_path, "output CSV")->required();
  p->add_option("--vocab", prop1.vocab, "vocabulary size");
  p->add_option("--order", prop1.order, "n-gram order");
  p->add_option("--states", prop1.n_states, "probed states per seed");
  p->add_option("--design", prop1.aligned_fraction, "aligned fraction");
  p->add_option("--k", prop1.k, "top-K support size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);  // 0 for --help, 1 plus a message otherwise
  }

  try {
    if (s->parsed()) cmd_score(score);
    if (sel->parsed()) cmd_select(select);
    if (d->parsed()) cmd_diagnose(diag_args);
    if (sm->parsed()) cmd_simulate(sim_args);
    if (p->parsed()) cmd_prop1(prop1);
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace taopd::cli
