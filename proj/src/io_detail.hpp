#pragma once

#include <cstdio>
#include <string>

#include <json.hpp>

#include "taopd/errors.hpp"
#include "taopd/sparse_dist.hpp"

namespace taopd::io::detail {

/// Decimal with 12 significant digits; parse-then-reprint is idempotent.
inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline void append_json_string(std::string& out, const std::string& s) {
  out += '"';
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  out += '"';
}

inline void append_dist(std::string& out, const dist::SparseTokenDist& d) {
  out += "{\"tokens\":[";
  for (size_t i = 0; i < d.entries.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(d.entries[i].token);
  }
  out += "],\"logprobs\":[";
  for (size_t i = 0; i < d.entries.size(); ++i) {
    if (i) out += ',';
    out += format_real(d.entries[i].logprob);
  }
  out += ']';
  if (d.tail_mass) {
    out += ",\"tail_mass\":";
    out += format_real(*d.tail_mass);
  }
  out += '}';
}

inline dist::SparseTokenDist parse_dist(const nlohmann::json& j, int32_t vocab_size,
                                        const std::string& where) {
  if (!j.is_object() || !j.contains("tokens") || !j.contains("logprobs"))
    throw ValidationError(where + ": distribution needs tokens and logprobs arrays");
  const auto& toks = j.at("tokens");
  const auto& lps = j.at("logprobs");
  if (!toks.is_array() || !lps.is_array() || toks.size() != lps.size())
    throw ValidationError(where + ": tokens/logprobs length mismatch");
  dist::SparseTokenDist d;
  d.vocab_size = vocab_size;
  d.entries.reserve(toks.size());
  for (size_t i = 0; i < toks.size(); ++i)
    d.entries.push_back({toks[i].get<int32_t>(), lps[i].get<double>()});
  if (j.contains("tail_mass")) d.tail_mass = j.at("tail_mass").get<double>();
  dist::canonicalize(d);
  try {
    dist::validate(d);
  } catch (const ValidationError& e) {
    throw ValidationError(where + ": " + e.what());
  }
  return d;
}

}  // namespace taopd::io::detail
