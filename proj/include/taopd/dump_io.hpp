#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "taopd/token_record.hpp"

namespace taopd::io {

/// First line of a TokenRecord JSONL dump.
struct DumpHeader {
  int format_version = 1;
  int32_t vocab_size = 0;
  int k = 16;
  std::string producer;
  bool has_teacher_on_student_support = false;
};

/// Streaming writer: header on construction, one canonical JSON line per
/// record. Logprobs and tail masses are written with 12 significant digits;
/// rewriting a parsed dump reproduces it byte for byte.
class DumpWriter {
 public:
  DumpWriter(std::ostream& out, const DumpHeader& header);
  void write(const TokenRecord& record);

 private:
  std::ostream& out_;
  int32_t vocab_size_;
};

/// Streaming reader. Records are validated against the distribution
/// invariants; errors carry 1-based line numbers. Records of one context
/// must be contiguous, which keeps duplicate (context_id, position)
/// detection independent of the records per context.
class DumpReader {
 public:
  explicit DumpReader(std::istream& in);
  const DumpHeader& header() const { return header_; }

  /// Next record, or nullopt at end of stream.
  std::optional<TokenRecord> next();

 private:
  std::istream& in_;
  DumpHeader header_;
  int64_t line_ = 0;
  std::string current_context_;
  std::unordered_set<int32_t> current_positions_;
  std::unordered_set<uint64_t> finished_contexts_;
};

void write_dump(const std::string& path, const DumpHeader& header,
                std::span<const TokenRecord> records);

std::pair<DumpHeader, std::vector<TokenRecord>> read_dump(const std::string& path);

}  // namespace taopd::io
