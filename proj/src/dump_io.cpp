#include "taopd/dump_io.hpp"

#include <fstream>
#include <ostream>

#include "io_detail.hpp"

namespace taopd::io {

using nlohmann::json;

namespace {

uint64_t hash_str(const std::string& s) {
  // FNV-1a
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string line_tag(int64_t line) { return "line " + std::to_string(line); }

}  // namespace

DumpWriter::DumpWriter(std::ostream& out, const DumpHeader& header)
    : out_(out), vocab_size_(header.vocab_size) {
  if (header.format_version != 1) throw ValidationError("dump format_version must be 1");
  if (header.k < 1) throw ValidationError("dump header K must be >= 1");
  if (header.vocab_size < 1) throw ValidationError("dump header vocab_size must be >= 1");
  std::string line = "{\"format_version\":1,\"vocab_size\":";
  line += std::to_string(header.vocab_size);
  line += ",\"k\":";
  line += std::to_string(header.k);
  line += ",\"producer\":";
  detail::append_json_string(line, header.producer);
  line += ",\"has_teacher_on_student_support\":";
  line += header.has_teacher_on_student_support ? "true" : "false";
  line += "}\n";
  out_ << line;
}

void DumpWriter::write(const TokenRecord& record) {
  dist::validate(record.student);
  dist::validate(record.teacher);
  if (record.student.vocab_size != vocab_size_ || record.teacher.vocab_size != vocab_size_)
    throw ValidationError("record vocab_size differs from header");
  std::string line = "{\"prompt_id\":";
  detail::append_json_string(line, record.prompt_id);
  line += ",\"context_id\":";
  detail::append_json_string(line, record.context_id);
  line += ",\"position\":";
  line += std::to_string(record.position);
  line += ",\"sampled_token\":";
  line += std::to_string(record.sampled_token);
  line += ",\"valid\":";
  line += record.valid ? "true" : "false";
  if (!record.batch_id.empty()) {
    line += ",\"batch\":";
    detail::append_json_string(line, record.batch_id);
  }
  line += ",\"student\":";
  detail::append_dist(line, record.student);
  line += ",\"teacher\":";
  detail::append_dist(line, record.teacher);
  line += "}\n";
  out_ << line;
}

DumpReader::DumpReader(std::istream& in) : in_(in) {
  std::string line;
  if (!std::getline(in_, line)) throw ValidationError("empty dump: missing header line");
  ++line_;
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ValidationError("line 1: header parse error: " + std::string(e.what()));
  }
  if (!j.contains("format_version"))
    throw ValidationError("line 1: header missing format_version");
  header_.format_version = j.at("format_version").get<int>();
  if (header_.format_version != 1)
    throw ValidationError("line 1: unsupported format_version " +
                          std::to_string(header_.format_version));
  header_.vocab_size = j.at("vocab_size").get<int32_t>();
  header_.k = j.at("k").get<int>();
  if (header_.k < 1) throw ValidationError("line 1: header K must be >= 1");
  if (header_.vocab_size < 1) throw ValidationError("line 1: header vocab_size must be >= 1");
  header_.producer = j.value("producer", std::string{});
  header_.has_teacher_on_student_support = j.value("has_teacher_on_student_support", false);
}

std::optional<TokenRecord> DumpReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(line_tag(line_) + ": parse error: " + std::string(e.what()));
    }
    TokenRecord rec;
    try {
      rec.prompt_id = j.at("prompt_id").get<std::string>();
      rec.context_id = j.at("context_id").get<std::string>();
      rec.position = j.at("position").get<int32_t>();
      rec.sampled_token = j.at("sampled_token").get<int32_t>();
      rec.valid = j.value("valid", true);
      rec.batch_id = j.value("batch", std::string{});
    } catch (const json::exception& e) {
      throw ValidationError(line_tag(line_) + ": " + std::string(e.what()));
    }
    if (rec.position < 0) throw ValidationError(line_tag(line_) + ": negative position");
    rec.student = detail::parse_dist(j.at("student"), header_.vocab_size,
                                     line_tag(line_) + " student");
    rec.teacher = detail::parse_dist(j.at("teacher"), header_.vocab_size,
                                     line_tag(line_) + " teacher");

    if (rec.context_id != current_context_) {
      if (!current_context_.empty()) finished_contexts_.insert(hash_str(current_context_));
      if (finished_contexts_.count(hash_str(rec.context_id)))
        throw ValidationError(line_tag(line_) + ": context '" + rec.context_id +
                              "' reappears after other contexts; duplicate context block");
      current_context_ = rec.context_id;
      current_positions_.clear();
    }
    if (!current_positions_.insert(rec.position).second)
      throw ValidationError(line_tag(line_) + ": duplicate (context_id, position) = ('" +
                            rec.context_id + "', " + std::to_string(rec.position) + ")");
    return rec;
  }
  return std::nullopt;
}

void write_dump(const std::string& path, const DumpHeader& header,
                std::span<const TokenRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  DumpWriter writer(out, header);
  for (const auto& rec : records) writer.write(rec);
  if (!out) throw ValidationError("write failed for '" + path + "'");
}

std::pair<DumpHeader, std::vector<TokenRecord>> read_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  DumpReader reader(in);
  std::vector<TokenRecord> records;
  while (auto rec = reader.next()) records.push_back(std::move(*rec));
  return {reader.header(), std::move(records)};
}

}  // namespace taopd::io
