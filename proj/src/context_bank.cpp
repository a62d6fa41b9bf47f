#include "taopd/context_bank.hpp"

#include <algorithm>
#include <atomic>

#include "taopd/errors.hpp"

namespace taopd::diag {

void ContextBank::add_context(BankContext ctx) {
  if (frozen_) throw ValidationError("bank is frozen; contexts are immutable");
  contexts_.push_back(std::move(ctx));
}

void ContextBank::freeze() { frozen_ = true; }

void ContextBank::add_snapshot(std::string checkpoint_id,
                               std::vector<dist::SparseTokenDist> student) {
  if (student.size() != contexts_.size())
    throw ValidationError("snapshot '" + checkpoint_id + "' has " +
                          std::to_string(student.size()) + " dists for " +
                          std::to_string(contexts_.size()) + " contexts");
  if (has_snapshot(checkpoint_id))
    throw ValidationError("duplicate checkpoint id '" + checkpoint_id + "'");
  snapshots_.push_back({std::move(checkpoint_id), std::move(student)});
}

const CheckpointSnapshot& ContextBank::snapshot(const std::string& checkpoint_id) const {
  for (const auto& s : snapshots_)
    if (s.checkpoint_id == checkpoint_id) return s;
  throw ValidationError("missing checkpoint '" + checkpoint_id + "'");
}

bool ContextBank::has_snapshot(const std::string& checkpoint_id) const {
  for (const auto& s : snapshots_)
    if (s.checkpoint_id == checkpoint_id) return true;
  return false;
}

double token_gain(const dist::SparseTokenDist& teacher, const dist::SparseTokenDist& before,
                  const dist::SparseTokenDist& after, const dist::SupportSet& support) {
  return dist::kl(teacher, before, support) - dist::kl(teacher, after, support);
}

namespace {

dist::SupportSet listed_union(const dist::SparseTokenDist& a, const dist::SparseTokenDist& b,
                              const dist::SparseTokenDist& c) {
  dist::SupportSet s;
  s.token_ids.reserve(a.entries.size() + b.entries.size() + c.entries.size());
  for (const auto& e : a.entries) s.token_ids.push_back(e.token);
  for (const auto& e : b.entries) s.token_ids.push_back(e.token);
  for (const auto& e : c.entries) s.token_ids.push_back(e.token);
  std::sort(s.token_ids.begin(), s.token_ids.end());
  s.token_ids.erase(std::unique(s.token_ids.begin(), s.token_ids.end()), s.token_ids.end());
  return s;
}

GainRecord context_gain(const ContextBank& bank, const CheckpointSnapshot& before,
                        const CheckpointSnapshot& after, size_t i) {
  const BankContext& ctx = bank.contexts()[i];
  const auto support = listed_union(ctx.teacher, before.student[i], after.student[i]);
  GainRecord g;
  g.context_index = i;
  g.cluster = ctx.prompt_id;
  g.g_fix = token_gain(ctx.teacher, before.student[i], after.student[i], support);
  return g;
}

}  // namespace

std::vector<GainRecord> bank_gains(const ContextBank& bank, const std::string& ckpt_before,
                                   const std::string& ckpt_after) {
  const auto& before = bank.snapshot(ckpt_before);
  const auto& after = bank.snapshot(ckpt_after);
  std::vector<GainRecord> out(bank.contexts().size());
  const int64_t n = static_cast<int64_t>(out.size());
  std::atomic<bool> failed{false};
  std::exception_ptr err;
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    if (failed.load(std::memory_order_relaxed)) continue;
    try {
      out[i] = context_gain(bank, before, after, i);
    } catch (...) {
#pragma omp critical
      if (!failed.exchange(true)) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  return out;
}

std::vector<GainRecord> bank_gains_serial(const ContextBank& bank, const std::string& ckpt_before,
                                          const std::string& ckpt_after) {
  const auto& before = bank.snapshot(ckpt_before);
  const auto& after = bank.snapshot(ckpt_after);
  std::vector<GainRecord> out(bank.contexts().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = context_gain(bank, before, after, i);
  return out;
}

}  // namespace taopd::diag
