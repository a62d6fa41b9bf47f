#include "taopd/bank_io.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "taopd/errors.hpp"
#include "taopd/stats.hpp"

namespace taopd::io {

using nlohmann::json;

namespace {

json dist_to_json(const dist::SparseTokenDist& d) {
  json j;
  auto& toks = j["tokens"] = json::array();
  auto& lps = j["logprobs"] = json::array();
  for (const auto& e : d.entries) {
    toks.push_back(e.token);
    lps.push_back(e.logprob);
  }
  if (d.tail_mass) j["tail_mass"] = *d.tail_mass;
  return j;
}

dist::SparseTokenDist dist_from_json(const json& j, int32_t vocab_size) {
  dist::SparseTokenDist d;
  d.vocab_size = vocab_size;
  const auto& toks = j.at("tokens");
  const auto& lps = j.at("logprobs");
  if (toks.size() != lps.size()) throw ValidationError("bank dist tokens/logprobs mismatch");
  for (size_t i = 0; i < toks.size(); ++i)
    d.entries.push_back({toks[i].get<int32_t>(), lps[i].get<double>()});
  if (j.contains("tail_mass")) d.tail_mass = j.at("tail_mass").get<double>();
  dist::canonicalize(d);
  dist::validate(d);
  return d;
}

bool dists_equal(const dist::SparseTokenDist& a, const dist::SparseTokenDist& b) {
  if (a.vocab_size != b.vocab_size || a.entries.size() != b.entries.size()) return false;
  if (a.tail_mass.has_value() != b.tail_mass.has_value()) return false;
  if (a.tail_mass && *a.tail_mass != *b.tail_mass) return false;
  for (size_t i = 0; i < a.entries.size(); ++i)
    if (a.entries[i].token != b.entries[i].token || a.entries[i].logprob != b.entries[i].logprob)
      return false;
  return true;
}

bool contexts_equal(const diag::ContextBank& a, const diag::ContextBank& b) {
  const auto& ca = a.contexts();
  const auto& cb = b.contexts();
  if (ca.size() != cb.size()) return false;
  for (size_t i = 0; i < ca.size(); ++i) {
    if (ca[i].prompt_id != cb[i].prompt_id || ca[i].context_id != cb[i].context_id ||
        ca[i].position != cb[i].position || ca[i].sampled_token != cb[i].sampled_token ||
        ca[i].state != cb[i].state || ca[i].aligned_label != cb[i].aligned_label ||
        !dists_equal(ca[i].teacher, cb[i].teacher))
      return false;
  }
  return true;
}

}  // namespace

void save_bank(const std::string& path, const diag::ContextBank& bank,
               std::span<const diag::InterventionRun> runs) {
  if (!bank.frozen()) throw ValidationError("only frozen banks can be saved");
  if (std::filesystem::exists(path)) {
    const LoadedBank existing = load_bank(path);
    if (!contexts_equal(existing.bank, bank))
      throw ValidationError("bank file '" + path +
                            "' holds different frozen contexts; teacher dists are write-once");
  }

  json j;
  j["format_version"] = 1;
  j["kind"] = "bank";
  int32_t vocab = 0;
  auto& ctxs = j["contexts"] = json::array();
  for (const auto& c : bank.contexts()) {
    json jc;
    jc["prompt_id"] = c.prompt_id;
    jc["context_id"] = c.context_id;
    jc["position"] = c.position;
    jc["sampled_token"] = c.sampled_token;
    if (c.state >= 0) jc["state"] = c.state;
    if (c.aligned_label >= 0) jc["label"] = static_cast<int>(c.aligned_label);
    jc["teacher"] = dist_to_json(c.teacher);
    vocab = c.teacher.vocab_size;
    ctxs.push_back(std::move(jc));
  }
  j["vocab_size"] = vocab;
  auto& snaps = j["snapshots"] = json::array();
  for (const auto& s : bank.snapshots()) {
    json js;
    js["checkpoint_id"] = s.checkpoint_id;
    auto& dists = js["student"] = json::array();
    for (const auto& d : s.student) dists.push_back(dist_to_json(d));
    snaps.push_back(std::move(js));
  }
  auto& jruns = j["runs"] = json::array();
  for (const auto& r : runs) {
    json jr;
    jr["selector"] = teach::selector_name(r.selector);
    jr["rho"] = r.rho;
    jr["ckpt_before"] = r.ckpt_before;
    jr["ckpt_after"] = r.ckpt_after;
    jr["actual_keep"] = r.actual_keep;
    jr["q3_fraction"] = r.q3_fraction;
    jr["seed"] = r.seed;
    jruns.push_back(std::move(jr));
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << j.dump() << "\n";
  if (!out) throw ValidationError("write failed for '" + path + "'");
}

LoadedBank load_bank(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("bank parse error in '" + path + "': " + e.what());
  }
  if (j.value("kind", std::string{}) != "bank")
    throw ValidationError("'" + path + "' is not a bank file");
  if (j.value("format_version", 0) != 1)
    throw ValidationError("unsupported bank format_version");
  const int32_t vocab = j.at("vocab_size").get<int32_t>();

  LoadedBank out;
  for (const auto& jc : j.at("contexts")) {
    diag::BankContext c;
    c.prompt_id = jc.at("prompt_id").get<std::string>();
    c.context_id = jc.at("context_id").get<std::string>();
    c.position = jc.at("position").get<int32_t>();
    c.sampled_token = jc.value("sampled_token", 0);
    c.state = jc.value("state", -1);
    c.aligned_label = static_cast<int8_t>(jc.value("label", -1));
    c.teacher = dist_from_json(jc.at("teacher"), vocab);
    out.bank.add_context(std::move(c));
  }
  out.bank.freeze();
  for (const auto& js : j.at("snapshots")) {
    std::vector<dist::SparseTokenDist> dists;
    for (const auto& jd : js.at("student")) dists.push_back(dist_from_json(jd, vocab));
    out.bank.add_snapshot(js.at("checkpoint_id").get<std::string>(), std::move(dists));
  }
  if (j.contains("runs")) {
    for (const auto& jr : j.at("runs")) {
      diag::InterventionRun r;
      r.selector = teach::selector_from_name(jr.at("selector").get<std::string>());
      r.rho = jr.at("rho").get<double>();
      r.ckpt_before = jr.at("ckpt_before").get<std::string>();
      r.ckpt_after = jr.at("ckpt_after").get<std::string>();
      r.actual_keep = jr.at("actual_keep").get<double>();
      r.q3_fraction = jr.at("q3_fraction").get<double>();
      r.seed = jr.at("seed").get<uint64_t>();
      out.runs.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace taopd::io
