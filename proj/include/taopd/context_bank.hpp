#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "taopd/sparse_dist.hpp"

namespace taopd::diag {

/// One frozen on-policy prefix: its identity plus the teacher distribution
/// at that context.
struct BankContext {
  std::string prompt_id;   // cluster key
  std::string context_id;
  int32_t position = 0;
  int32_t sampled_token = 0;
  dist::SparseTokenDist teacher;
  int32_t state = -1;      // simulator state index, -1 for external banks
  int8_t aligned_label = -1;  // planted design label: 1 aligned, 0 off-support, -1 none
};

/// A named student snapshot: one distribution per bank context, aligned 1:1.
struct CheckpointSnapshot {
  std::string checkpoint_id;
  std::vector<dist::SparseTokenDist> student;
};

/// A frozen bank of contexts with teacher distributions, rescored by any
/// number of student checkpoints. Teacher entries are immutable once the
/// bank is frozen; snapshots can always be appended.
class ContextBank {
 public:
  void add_context(BankContext ctx);  // throws after freeze()
  void freeze();
  bool frozen() const { return frozen_; }

  /// Appends a snapshot; its dist list must align 1:1 with the contexts.
  void add_snapshot(std::string checkpoint_id, std::vector<dist::SparseTokenDist> student);

  const std::vector<BankContext>& contexts() const { return contexts_; }
  const std::vector<CheckpointSnapshot>& snapshots() const { return snapshots_; }
  const CheckpointSnapshot& snapshot(const std::string& checkpoint_id) const;
  bool has_snapshot(const std::string& checkpoint_id) const;

 private:
  std::vector<BankContext> contexts_;
  std::vector<CheckpointSnapshot> snapshots_;
  bool frozen_ = false;
};

struct GainRecord {
  size_t context_index = 0;
  double g_fix = 0.0;
  std::string cluster;  // prompt_id
};

/// Same-context token gain: KL(teacher||before) - KL(teacher||after) on
/// `support`. Positive means the trained student moved toward the teacher.
double token_gain(const dist::SparseTokenDist& teacher, const dist::SparseTokenDist& before,
                  const dist::SparseTokenDist& after, const dist::SupportSet& support);

/// Per-context gains between two checkpoints, one GainRecord per context.
/// The support is the union of the three distributions' listed entries
/// (the full vocabulary for dense simulator banks). OpenMP-parallel.
std::vector<GainRecord> bank_gains(const ContextBank& bank, const std::string& ckpt_before,
                                   const std::string& ckpt_after);

/// Serial reference; bit-identical to bank_gains.
std::vector<GainRecord> bank_gains_serial(const ContextBank& bank, const std::string& ckpt_before,
                                          const std::string& ckpt_after);

}  // namespace taopd::diag
