#include "taopd/score_csv.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

#include "io_detail.hpp"
#include "taopd/errors.hpp"

namespace taopd::io {

namespace {

void check_id(const std::string& s) {
  for (char c : s) {
    if (c == ',' || c == '"' || c == '\n' || c == '\r')
      throw ValidationError("id '" + s + "' contains a CSV delimiter character");
  }
}

}  // namespace

void write_scores(std::ostream& out, std::span<const TokenRecord> records,
                  std::span<const teach::TokenStats> stats,
                  std::span<const teach::NormalizedStats> norm,
                  std::span<const NamedMask> masks) {
  if (records.size() != stats.size() || records.size() != norm.size())
    throw ValidationError("write_scores: misaligned records/stats/norm lengths");
  for (const auto& m : masks) {
    if (m.mask.keep.size() != records.size())
      throw ValidationError("write_scores: mask '" + m.name + "' length mismatch");
  }

  out << "prompt_id,context_id,position,sampled_token,valid,k,"
         "h_student,h_teacher,d,c,c_hat,raw_kl_sampled,pos_norm,"
         "d_tilde,c_tilde,h_tilde,d_learn,d_incomp";
  for (teach::SelectorKind kind : teach::scored_selectors())
    out << ",score_" << teach::selector_name(kind);
  for (const auto& m : masks) out << ",keep_" << m.name;
  out << "\n";

  using detail::format_real;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    check_id(r.prompt_id);
    check_id(r.context_id);
    out << r.prompt_id << ',' << r.context_id << ',' << r.position << ',' << r.sampled_token
        << ',' << (r.valid ? 1 : 0) << ',' << stats[i].k << ',' << format_real(stats[i].h_student)
        << ',' << format_real(stats[i].h_teacher) << ',' << format_real(stats[i].d) << ','
        << format_real(stats[i].c) << ',' << format_real(stats[i].c_hat) << ','
        << format_real(stats[i].raw_kl_sampled) << ',' << format_real(stats[i].pos_norm) << ','
        << format_real(norm[i].d_tilde) << ',' << format_real(norm[i].c_tilde) << ','
        << format_real(norm[i].h_tilde) << ',' << format_real(norm[i].d_learn) << ','
        << format_real(norm[i].d_incomp);
    for (teach::SelectorKind kind : teach::scored_selectors())
      out << ',' << format_real(norm[i].score(kind));
    for (const auto& m : masks) out << ',' << static_cast<int>(m.mask.keep[i]);
    out << "\n";
  }
}

void write_scores_file(const std::string& path, std::span<const TokenRecord> records,
                       std::span<const teach::TokenStats> stats,
                       std::span<const teach::NormalizedStats> norm,
                       std::span<const NamedMask> masks) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  write_scores(out, records, stats, norm, masks);
  if (!out) throw ValidationError("write failed for '" + path + "'");
}

int CsvTable::column(const std::string& name) const {
  for (size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  return -1;
}

int CsvTable::require_column(const std::string& name) const {
  const int c = column(name);
  if (c < 0) throw ValidationError("CSV missing required column '" + name + "'");
  return c;
}

double CsvTable::real(size_t row, int col) const {
  const std::string& s = rows[row][col];
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("CSV row " + std::to_string(row + 2) + ": '" + s + "' is not a number");
  }
}

int64_t CsvTable::integer(size_t row, int col) const {
  const std::string& s = rows[row][col];
  try {
    size_t used = 0;
    const int64_t v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("CSV row " + std::to_string(row + 2) + ": '" + s + "' is not an integer");
  }
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(s);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.push_back("");
    return cells;
  };
  if (!std::getline(in, line)) throw ValidationError("empty CSV '" + path + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  table.columns = split(line);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != table.columns.size())
      throw ValidationError("CSV '" + path + "' row has " + std::to_string(cells.size()) +
                            " cells, expected " + std::to_string(table.columns.size()));
    table.rows.push_back(std::move(cells));
  }
  return table;
}

}  // namespace taopd::io
