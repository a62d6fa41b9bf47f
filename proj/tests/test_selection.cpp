#include <doctest.h>

#include <cmath>

#include "taopd/errors.hpp"
#include "taopd/selection.hpp"
#include "test_support.hpp"

using namespace taopd;
using teach::SelectionMask;
using teach::SelectorKind;
using teach::TieKey;

namespace {

std::vector<TieKey> index_keys(size_t n) {
  std::vector<TieKey> keys(n);
  for (size_t i = 0; i < n; ++i) keys[i] = {static_cast<int32_t>(i), "c"};
  return keys;
}

}  // namespace

TEST_CASE("select: exact budget arithmetic") {
  Rng rng(5);
  for (double rho : {0.01, 0.03, 0.05, 0.10, 0.30, 0.50, 1.0}) {
    const size_t n = 37 + rng.next_below(400);
    std::vector<double> scores(n);
    std::vector<uint8_t> valid(n, 1);
    for (auto& s : scores) s = rng.next_double();
    auto mask = teach::select(scores, valid, index_keys(n), rho, SelectorKind::raw_kl);
    const int64_t expected = static_cast<int64_t>(std::ceil(rho * static_cast<double>(n)));
    CHECK(mask.n_kept == expected);
    int64_t bits = 0;
    for (uint8_t b : mask.keep) bits += b;
    CHECK(bits == expected);
  }
}

TEST_CASE("select: rho=1 keeps every valid position and only those") {
  std::vector<double> scores{0.1, 0.9, 0.5, 0.7};
  std::vector<uint8_t> valid{1, 0, 1, 1};
  auto mask = teach::select(scores, valid, index_keys(4), 1.0, SelectorKind::teach);
  CHECK(mask.n_kept == 3);
  CHECK(mask.keep == std::vector<uint8_t>{1, 0, 1, 1});
}

TEST_CASE("select: tie at the cut resolved by ascending position") {
  // equal top scores at positions 7 and 3; budget of one
  std::vector<double> scores(10, 0.0);
  scores[7] = 1.0;
  scores[3] = 1.0;
  std::vector<uint8_t> valid(10, 1);
  auto mask = teach::select(scores, valid, index_keys(10), 0.1, SelectorKind::teach);
  CHECK(mask.n_kept == 1);
  CHECK(mask.keep[3] == 1);
  CHECK(mask.keep[7] == 0);
}

TEST_CASE("select: context_id breaks remaining ties") {
  std::vector<double> scores{1.0, 1.0};
  std::vector<uint8_t> valid{1, 1};
  std::vector<TieKey> keys{{5, "zebra"}, {5, "aardvark"}};
  auto mask = teach::select(scores, valid, keys, 0.5, SelectorKind::teach);
  CHECK(mask.keep[1] == 1);  // same position, lexicographically smaller context
  CHECK(mask.keep[0] == 0);
}

TEST_CASE("select: rank invariance under monotone transforms") {
  Rng rng(606);
  for (int trial = 0; trial < 30; ++trial) {
    const size_t n = 50 + rng.next_below(200);
    std::vector<double> scores(n);
    std::vector<uint8_t> valid(n, 1);
    for (size_t i = 0; i < n; ++i) {
      scores[i] = rng.next_double();
      valid[i] = rng.next_double() < 0.8 ? 1 : 0;
    }
    if (std::count(valid.begin(), valid.end(), 1) == 0) valid[0] = 1;
    const double rho = 0.05 + 0.4 * rng.next_double();
    auto keys = index_keys(n);
    auto base = teach::select(scores, valid, keys, rho, SelectorKind::teach);

    std::vector<double> affine(n), expd(n);
    for (size_t i = 0; i < n; ++i) {
      affine[i] = 3.5 * scores[i] + 11.0;
      expd[i] = std::exp(scores[i]);
    }
    CHECK(teach::select(affine, valid, keys, rho, SelectorKind::teach).keep == base.keep);
    CHECK(teach::select(expd, valid, keys, rho, SelectorKind::teach).keep == base.keep);
  }
}

TEST_CASE("select: random selector reproducible and uniform-ish") {
  std::vector<double> scores(200, 0.0);
  std::vector<uint8_t> valid(200, 1);
  auto keys = index_keys(200);
  auto a = teach::select(scores, valid, keys, 0.1, SelectorKind::random, 99);
  auto b = teach::select(scores, valid, keys, 0.1, SelectorKind::random, 99);
  CHECK(a.keep == b.keep);
  auto c = teach::select(scores, valid, keys, 0.1, SelectorKind::random, 100);
  CHECK(a.keep != c.keep);
  CHECK(a.n_kept == 20);
}

TEST_CASE("select: errors") {
  std::vector<double> scores{1.0};
  std::vector<uint8_t> valid{0};
  CHECK_THROWS_AS(teach::select(scores, valid, {}, 0.5, SelectorKind::teach), ValidationError);
  std::vector<uint8_t> ok{1};
  CHECK_THROWS_AS(teach::select(scores, ok, {}, 0.0, SelectorKind::teach), DomainError);
  CHECK_THROWS_AS(teach::select(scores, ok, {}, 1.5, SelectorKind::teach), DomainError);
}

TEST_CASE("masked_opd_loss: hand cases") {
  Rng rng(4242);
  auto records = testutil::random_records(rng, 3, 4, 8);

  SelectionMask all;
  all.keep.assign(records.size(), 1);
  all.n_kept = static_cast<int64_t>(records.size());

  // student == teacher everywhere: full KL loss is zero
  auto mirrored = records;
  for (auto& r : mirrored) r.teacher = r.student;
  auto res = teach::masked_opd_loss(mirrored, all, teach::LossEstimator::full_kl);
  CHECK(res.loss == doctest::Approx(0.0).epsilon(1e-12));

  // masked mean over a known subset: hand-build sampled-token losses
  std::vector<TokenRecord> three;
  for (double lp_gap : {0.2, 0.4, 0.9}) {
    TokenRecord r;
    r.prompt_id = "p";
    r.context_id = "c";
    r.position = static_cast<int32_t>(three.size());
    r.sampled_token = 0;
    // student prob e^{-0.1}/Z vs teacher shifted so the sampled-token gap is lp_gap
    r.student = dist::from_probs(std::vector<double>{0.6, 0.4});
    std::vector<double> tv{0.6 * std::exp(-lp_gap), 0.0};
    tv[1] = 1.0 - tv[0];
    r.teacher = dist::from_probs(tv);
    three.push_back(std::move(r));
  }
  SelectionMask first_two;
  first_two.keep = {1, 1, 0};
  first_two.n_kept = 2;
  auto mean2 = teach::masked_opd_loss(three, first_two, teach::LossEstimator::sampled_token);
  CHECK(mean2.loss == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(mean2.floored == 0);

  SelectionMask none;
  none.keep.assign(3, 0);
  none.n_kept = 0;
  CHECK_THROWS_AS(teach::masked_opd_loss(three, none, teach::LossEstimator::full_kl),
                  ValidationError);
}

TEST_CASE("masked_opd_loss: rho=1 equals the unmasked mean") {
  Rng rng(11);
  auto records = testutil::random_records(rng, 4, 8, 10);
  SelectionMask all;
  all.keep.assign(records.size(), 1);
  all.n_kept = static_cast<int64_t>(records.size());
  auto res = teach::masked_opd_loss(records, all, teach::LossEstimator::full_kl);

  double acc = 0.0;
  for (const auto& r : records) {
    auto support = dist::top_k(r.student, static_cast<int>(r.student.entries.size()),
                               dist::SupportKind::student_topk);
    acc += dist::kl(r.student, r.teacher, support);
  }
  CHECK(res.loss == doctest::Approx(acc / records.size()).epsilon(1e-12));
}

TEST_CASE("masked_opd_loss: missing sampled token is floored and counted") {
  TokenRecord r;
  r.prompt_id = "p";
  r.context_id = "c";
  r.position = 0;
  r.sampled_token = 3;  // unlisted in both dists (prob zero dropped)
  r.student = dist::from_probs(std::vector<double>{0.5, 0.5, 0.0, 0.0});
  r.teacher = dist::from_probs(std::vector<double>{0.5, 0.5, 0.0, 0.0});
  std::vector<TokenRecord> v{r};
  SelectionMask m;
  m.keep = {1};
  m.n_kept = 1;
  auto res = teach::masked_opd_loss(v, m, teach::LossEstimator::sampled_token);
  CHECK(res.floored == 1);
  CHECK(res.loss == doctest::Approx(0.0).epsilon(1e-12));  // floor minus floor
}

TEST_CASE("q3_membership: corners and quadrant counting") {
  // synthetic grid of (H~, D~) values via planted raw stats
  std::vector<teach::NormalizedStats> norm;
  for (int hi = 0; hi < 10; ++hi) {
    for (int di = 0; di < 10; ++di) {
      teach::NormalizedStats n;
      n.h_tilde = hi / 9.0;
      n.d_tilde = di / 9.0;
      norm.push_back(n);
    }
  }
  auto q3 = teach::q3_membership(norm, {});
  int count = 0;
  for (size_t i = 0; i < norm.size(); ++i) {
    if (q3[i]) {
      ++count;
      CHECK(norm[i].h_tilde < 0.5);
      CHECK(norm[i].d_tilde > 0.5);
    }
  }
  CHECK(count == 25);  // exactly the lower-right quadrant of the 10x10 grid

  // extreme corners (thresholds from the same grid batch)
  teach::NormalizedStats corner;
  corner.h_tilde = 0.0;
  corner.d_tilde = 1.0;
  norm.push_back(corner);
  corner.h_tilde = 1.0;
  corner.d_tilde = 0.0;
  norm.push_back(corner);
  auto q3b = teach::q3_membership(norm, {});
  CHECK(q3b[norm.size() - 2] == 1);
  CHECK(q3b[norm.size() - 1] == 0);
}
