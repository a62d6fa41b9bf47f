#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "taopd/errors.hpp"
#include "taopd/sparse_dist.hpp"

using namespace taopd;
using dist::SparseTokenDist;
using dist::SupportKind;
using dist::SupportSet;

namespace {

SupportSet make_support(std::vector<int32_t> ids) {
  SupportSet s;
  std::sort(ids.begin(), ids.end());
  s.token_ids = std::move(ids);
  return s;
}

}  // namespace

TEST_CASE("entropy: hand cases") {
  // uniform over 4 entries
  auto u4 = dist::from_probs(std::vector<double>{0.25, 0.25, 0.25, 0.25});
  CHECK(dist::entropy(u4) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // point mass
  auto point = dist::from_probs(std::vector<double>{0.0, 1.0, 0.0});
  CHECK(dist::entropy(point) == doctest::Approx(0.0).epsilon(1e-12));

  // {0.5, 0.25, 0.25}: frozen from the dense oracle
  std::vector<double> probs{0.5, 0.25, 0.25};
  auto d = dist::from_probs(probs);
  const double expected = oracle::entropy(probs);
  CHECK(expected == doctest::Approx(1.0397207708399179).epsilon(1e-12));
  CHECK(dist::entropy(d) == doctest::Approx(expected).epsilon(1e-12));

  SparseTokenDist empty;
  empty.vocab_size = 4;
  CHECK_THROWS_AS(dist::entropy(empty), DomainError);
}

TEST_CASE("entropy ignores tail mass (truncated entropy)") {
  auto full = dist::from_probs(std::vector<double>{0.5, 0.25, 0.25});
  auto trunc = dist::truncate_top_k(dist::from_probs(std::vector<double>{0.4, 0.2, 0.2, 0.2}), 3);
  // renormalized listed entries are {0.5, 0.25, 0.25}
  CHECK(dist::entropy(trunc) == doctest::Approx(dist::entropy(full)).epsilon(1e-12));
}

TEST_CASE("top_k: ordering, ties, clamping") {
  auto d = dist::from_probs(std::vector<double>{0.5, 0.3, 0.2});
  auto s = dist::top_k(d, 2, SupportKind::student_topk);
  CHECK(s.token_ids == std::vector<int32_t>{0, 1});
  CHECK_FALSE(s.k_clamped);

  // tie between tokens 0 and 1 resolved by ascending id
  auto tie = dist::from_probs(std::vector<double>{0.4, 0.4, 0.2});
  auto t1 = dist::top_k(tie, 1, SupportKind::student_topk);
  CHECK(t1.token_ids == std::vector<int32_t>{0});

  // K = listed entries: identity
  auto all = dist::top_k(d, 3, SupportKind::student_topk);
  CHECK(all.token_ids == std::vector<int32_t>{0, 1, 2});

  // clamped
  auto clamped = dist::top_k(d, 10, SupportKind::student_topk);
  CHECK(clamped.token_ids.size() == 3);
  CHECK(clamped.k_clamped);

  CHECK_THROWS_AS(dist::top_k(d, 0, SupportKind::student_topk), DomainError);
}

TEST_CASE("top_k is invariant to positive rescaling") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const int vocab = 4 + static_cast<int>(rng.next_below(28));
    auto probs = oracle::random_dense(rng, vocab);
    auto d = dist::from_probs(probs);
    // rescale probabilities by a random positive constant pre-log
    const double c = std::exp(rng.next_uniform(-3.0, 3.0));
    SparseTokenDist scaled = d;
    for (auto& e : scaled.entries) e.logprob += std::log(c);
    const int k = 1 + static_cast<int>(rng.next_below(vocab));
    CHECK(dist::top_k(d, k, SupportKind::student_topk).token_ids ==
          dist::top_k(scaled, k, SupportKind::student_topk).token_ids);
  }
}

TEST_CASE("union_support") {
  auto a = make_support({1, 3});
  auto b = make_support({3, 5});
  CHECK(dist::union_support(a, b).token_ids == std::vector<int32_t>{1, 3, 5});
  CHECK(dist::union_support(a, a).token_ids == a.token_ids);
  auto disj = dist::union_support(make_support({0, 1}), make_support({2, 3}));
  CHECK(disj.token_ids.size() == 4);
}

TEST_CASE("renormalize_on: hand cases") {
  auto d = dist::from_probs(std::vector<double>{0.2, 0.3, 0.5});

  // support covering all entries: unchanged probabilities
  auto full = dist::renormalize_on(d, make_support({0, 1, 2}));
  double sum = 0.0;
  for (const auto& e : full.entries) sum += std::exp(e.logprob);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::exp(full.logprob_or_floor(2)) == doctest::Approx(0.5).epsilon(1e-12));

  // restriction to {0,1}: probabilities divide by the retained mass 0.5
  auto ab = dist::renormalize_on(d, make_support({0, 1}));
  CHECK(std::exp(ab.logprob_or_floor(0)) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(std::exp(ab.logprob_or_floor(1)) == doctest::Approx(0.6).epsilon(1e-12));

  // disjoint support
  SparseTokenDist wide = d;
  wide.vocab_size = 8;
  CHECK_THROWS_AS(dist::renormalize_on(wide, make_support({5, 6})), DegenerateSupportError);
}

TEST_CASE("kl: hand cases and asymmetry") {
  // p = q
  auto p = dist::from_probs(std::vector<double>{0.7, 0.3});
  CHECK(dist::kl(p, p, make_support({0, 1})) == doctest::Approx(0.0).epsilon(1e-12));

  // point mass vs uniform on {0,1}: single-term KL = ln 2
  auto point = dist::from_probs(std::vector<double>{1.0, 0.0});
  auto unif = dist::from_probs(std::vector<double>{0.5, 0.5});
  CHECK(dist::kl(point, unif, make_support({0, 1})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));

  // asymmetry, frozen from the dense oracle
  std::vector<double> pv{0.9, 0.1}, qv{0.5, 0.5};
  auto dp = dist::from_probs(pv);
  auto dq = dist::from_probs(qv);
  std::vector<int32_t> sup{0, 1};
  const double fwd = oracle::kl_restricted(pv, qv, sup);
  const double rev = oracle::kl_restricted(qv, pv, sup);
  CHECK(fwd == doctest::Approx(0.36806420716849717).epsilon(1e-12));
  CHECK(rev == doctest::Approx(0.51082562376599050).epsilon(1e-12));
  CHECK(dist::kl(dp, dq, make_support({0, 1})) == doctest::Approx(fwd).epsilon(1e-12));
  CHECK(dist::kl(dq, dp, make_support({0, 1})) == doctest::Approx(rev).epsilon(1e-12));
  CHECK(dist::kl(dp, dq, make_support({0, 1})) != dist::kl(dq, dp, make_support({0, 1})));
}

TEST_CASE("kl/entropy agree with the dense oracle on random cases") {
  Rng rng(1234);
  for (int trial = 0; trial < 300; ++trial) {
    const int vocab = 2 + static_cast<int>(rng.next_below(31));
    auto pv = oracle::random_dense(rng, vocab);
    auto qv = oracle::random_dense(rng, vocab);
    auto dp = dist::from_probs(pv);
    auto dq = dist::from_probs(qv);

    // random support of size >= 1
    std::vector<int32_t> sup;
    for (int v = 0; v < vocab; ++v)
      if (rng.next_double() < 0.5) sup.push_back(v);
    if (sup.empty()) sup.push_back(static_cast<int32_t>(rng.next_below(vocab)));

    const double want_kl = oracle::kl_restricted(pv, qv, sup);
    const double got_kl = dist::kl(dp, dq, make_support({sup.begin(), sup.end()}));
    CHECK(std::abs(want_kl - got_kl) <= 1e-10);

    const double want_h = oracle::entropy(pv);
    CHECK(std::abs(want_h - dist::entropy(dp)) <= 1e-10);
  }
}

TEST_CASE("kl properties: self-zero and Gibbs nonnegativity") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const int vocab = 2 + static_cast<int>(rng.next_below(31));
    auto pv = oracle::random_dense(rng, vocab);
    auto qv = oracle::random_dense(rng, vocab);
    auto dp = dist::from_probs(pv);
    auto dq = dist::from_probs(qv);
    std::vector<int32_t> sup;
    for (int v = 0; v < vocab; ++v) sup.push_back(v);
    auto s = make_support({sup.begin(), sup.end()});
    CHECK(dist::kl(dp, dp, s) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(dist::kl(dp, dq, s) >= 0.0);
  }
}

TEST_CASE("renormalize_on sums to one") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int vocab = 3 + static_cast<int>(rng.next_below(30));
    auto d = dist::from_probs(oracle::random_dense(rng, vocab));
    std::vector<int32_t> sup;
    for (int v = 0; v < vocab; ++v)
      if (rng.next_double() < 0.4) sup.push_back(v);
    if (sup.empty()) sup.push_back(0);
    auto r = dist::renormalize_on(d, make_support({sup.begin(), sup.end()}));
    double sum = 0.0;
    for (const auto& e : r.entries) sum += std::exp(e.logprob);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("validate rejects invariant breaches") {
  auto ok = dist::from_probs(std::vector<double>{0.5, 0.5});
  CHECK_NOTHROW(dist::validate(ok));

  SparseTokenDist bad_mass = ok;
  bad_mass.entries[0].logprob = std::log(0.9);  // total 1.4
  CHECK_THROWS_AS(dist::validate(bad_mass), ValidationError);

  SparseTokenDist bad_id = ok;
  bad_id.entries[0].token = 7;
  CHECK_THROWS_AS(dist::validate(bad_id), ValidationError);

  SparseTokenDist dup = ok;
  dup.entries[1].token = dup.entries[0].token;
  CHECK_THROWS_AS(dist::validate(dup), ValidationError);

  SparseTokenDist unsorted = ok;
  std::swap(unsorted.entries[0], unsorted.entries[1]);
  if (unsorted.entries[0].logprob == unsorted.entries[1].logprob) {
    // equal logprobs: canonical order is by ascending token id
    CHECK_THROWS_AS(dist::validate(unsorted), ValidationError);
  }
}

TEST_CASE("truncate_top_k records tail mass") {
  auto d = dist::from_probs(std::vector<double>{0.4, 0.3, 0.2, 0.1});
  auto t = dist::truncate_top_k(d, 2);
  CHECK(t.entries.size() == 2);
  REQUIRE(t.tail_mass.has_value());
  CHECK(*t.tail_mass == doctest::Approx(0.3).epsilon(1e-12));
  CHECK_NOTHROW(dist::validate(t));
}
