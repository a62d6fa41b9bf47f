#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "taopd/selection.hpp"
#include "taopd/stats.hpp"
#include "taopd/token_record.hpp"

namespace taopd::io {

struct NamedMask {
  std::string name;  // column suffix, e.g. "teach_0.05"
  teach::SelectionMask mask;
};

/// Per-token score CSV. Column order is fixed:
///   prompt_id,context_id,position,sampled_token,valid,k,
///   h_student,h_teacher,d,c,c_hat,raw_kl_sampled,pos_norm,
///   d_tilde,c_tilde,h_tilde,d_learn,d_incomp,
///   score_teach,score_entropy,score_kl,score_compat,score_tip,
///   score_h_teach,score_d_incomp
/// plus one keep_<name> bit column per requested mask. Reals use 12
/// significant digits. Ids must not contain commas, quotes, or newlines.
void write_scores(std::ostream& out, std::span<const TokenRecord> records,
                  std::span<const teach::TokenStats> stats,
                  std::span<const teach::NormalizedStats> norm,
                  std::span<const NamedMask> masks = {});

void write_scores_file(const std::string& path, std::span<const TokenRecord> records,
                       std::span<const teach::TokenStats> stats,
                       std::span<const teach::NormalizedStats> norm,
                       std::span<const NamedMask> masks = {});

/// Minimal CSV table for reading score files back (unquoted cells only).
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
  int require_column(const std::string& name) const;
  double real(size_t row, int col) const;
  int64_t integer(size_t row, int col) const;
};

CsvTable read_csv(const std::string& path);

}  // namespace taopd::io
