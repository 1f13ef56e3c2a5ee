#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "adherence/dataset.hpp"
#include "adherence/error.hpp"
#include "adherence/text.hpp"

using namespace adherence;

namespace {

const std::filesystem::path kData = ADHERENCE_TEST_DATA;

PatientRecord make_record(const std::string& id, int static_dim, int score_dim, std::array<int, kIntervals> y) {
  PatientRecord r;
  r.id = id;
  r.s = Vector::Zero(static_dim);
  r.x = Matrix::Zero(kSteps, score_dim);
  r.y = y;
  r.a = y;
  r.mask.fill(true);
  return r;
}

Cohort random_cohort(int n, unsigned seed) {
  Cohort c;
  c.schema = CohortSchema::release();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::uniform_int_distribution<int> w(1, kIntervals);
  for (int i = 0; i < n; ++i) {
    std::array<int, kIntervals> y{};
    const int stop = w(rng);
    for (int t = 0; t < kIntervals; ++t) y[static_cast<size_t>(t)] = t < stop ? 1 : 0;
    PatientRecord r = make_record("P" + std::to_string(1000 + i), kStaticDim, kScoreDim, y);
    for (Eigen::Index k = 0; k < r.s.size(); ++k) r.s[k] = 100.0 * u(rng);
    for (Eigen::Index k = 0; k < r.x.size(); ++k) r.x.data()[k] = u(rng);
    c.records.push_back(r);
  }
  return c;
}

}  // namespace

TEST_CASE("load the three-record fixture") {
  Cohort c = load_cohort(kData / "cohort3.csv");
  REQUIRE(c.size() == 3);
  CHECK(c.schema.static_dim() == 14);
  CHECK(c.schema.score_dim() == 11);
  const PatientRecord& p2 = c.by_id("P002");
  CHECK(p2.y == std::array<int, kIntervals>{1, 0, 0, 0, 0});
  CHECK(p2.a == p2.y);
  CHECK(p2.mask == std::array<bool, kSteps>{true, true, true, false, false, false});
  CHECK(p2.withdrawal_reason.value() == "no clinical improvement, moved");
  CHECK(p2.withdrawal_interval() == 1);
  CHECK(c.by_id("P001").withdrawal_interval() == kIntervals);
}

TEST_CASE("absorbing violation is rejected with the record id") {
  try {
    load_cohort(kData / "absorbing_violation.csv");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("B001") != std::string::npos);
    CHECK(std::string(e.what()).find("absorbing") != std::string::npos);
  }
}

TEST_CASE("schema errors name the missing column") {
  std::string text = read_file(kData / "cohort3.csv");
  text.replace(text.find("s07"), 3, "zz7");
  try {
    parse_cohort_csv(text);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("s07") != std::string::npos);
  }
}

TEST_CASE("non-binary labels and out-of-range scores are rejected") {
  std::string text = read_file(kData / "cohort3.csv");
  std::string nonbinary = text;
  const auto row = nonbinary.find("P003");
  const auto eol = nonbinary.find('\n', row);
  // y5 sits before the reason cell at the end of the row.
  const auto reason = nonbinary.rfind(',', eol);
  const auto y5 = nonbinary.rfind(',', reason - 1);
  nonbinary.replace(y5 + 1, reason - y5 - 1, "2");
  CHECK_THROWS_AS(parse_cohort_csv(nonbinary), ValidationError);

  Cohort c = load_cohort(kData / "cohort3.csv");
  c.records[0].x(2, 3) = 11.0;
  CHECK_THROWS_AS(validate_cohort(c), ValidationError);
  c.records[0].x(2, 3) = 5.0;
  c.records[0].x(2, 10) = 25.0;  // medication score is unbounded above
  CHECK_NOTHROW(validate_cohort(c));
  c.records[1].y[0] = 0;
  c.records[1].a[0] = 0;
  CHECK_THROWS_AS(validate_cohort(c), ValidationError);
}

TEST_CASE("column mapping renames source columns") {
  Cohort c = load_cohort(kData / "cohort_source.csv", ColumnMapping::load(kData / "cohort_source.map"));
  REQUIRE(c.size() == 1);
  CHECK(c.records[0].id == "P001");
  Cohort direct = load_cohort(kData / "cohort3.csv");
  CHECK(c.records[0].s == direct.records[0].s);
}

TEST_CASE("canonical csv round trip is byte identical") {
  Cohort c = load_cohort(kData / "cohort3.csv");
  const std::string once = canonical_csv(c);
  const std::string twice = canonical_csv(parse_cohort_csv(once));
  CHECK(once == twice);
  Cohort big = random_cohort(40, 8);
  CHECK(canonical_csv(parse_cohort_csv(canonical_csv(big))) == canonical_csv(big));
}

TEST_CASE("normalization statistics") {
  Cohort c;
  c.schema = CohortSchema::generic(2, 1);
  PatientRecord a = make_record("a", 2, 1, {1, 1, 1, 1, 1});
  PatientRecord b = make_record("b", 2, 1, {1, 1, 1, 1, 1});
  a.s << 7.0, 0.0;
  b.s << 7.0, 10.0;
  for (int t = 0; t < kSteps; ++t) {
    a.x(t, 0) = t;        // 0..5
    b.x(t, 0) = 10 + t;   // 10..15
  }
  b.mask[5] = false;  // 15 is not observed
  c.records = {a, b};
  NormalizationStats st = fit_normalization(c, {"a", "b"});
  CHECK(st.static_mean[0] == 7.0);
  CHECK(st.static_std[0] == kStdEpsilon);
  CHECK(st.static_mean[1] == doctest::Approx(5.0));
  CHECK(st.static_std[1] == doctest::Approx(5.0));
  // Observed scores: 0,1,2,3,4,5,10,11,12,13,14 -> mean 75/11.
  const double mean = 75.0 / 11.0;
  double var = 0.0;
  for (double v : {0, 1, 2, 3, 4, 5, 10, 11, 12, 13, 14}) var += (v - mean) * (v - mean);
  var /= 11.0;
  CHECK(st.score_mean[0] == doctest::Approx(mean));
  CHECK(st.score_std[0] == doctest::Approx(std::sqrt(var)));

  // Hand z-scores for record b: s = (7, 10) -> (0, 1); x_0 = 10 -> (10 - 6.8181818) / 4.9875879
  PatientRecord nb = normalize(b, st);
  CHECK(nb.s[0] == 0.0);
  CHECK(nb.s[1] == doctest::Approx(1.0));
  CHECK(nb.x(0, 0) == doctest::Approx(0.6379472895044279).epsilon(1e-12));
  CHECK(nb.x(5, 0) == 0.0);  // masked cell

  CHECK_THROWS_AS(fit_normalization(c, {}), ValidationError);
}

TEST_CASE("normalize then denormalize is the identity") {
  Cohort c = random_cohort(30, 4);
  std::set<std::string> ids;
  for (const auto& r : c.records) ids.insert(r.id);
  NormalizationStats st = fit_normalization(c, ids);
  for (const PatientRecord& r : c.records) {
    PatientRecord back = denormalize(normalize(r, st), st);
    CHECK((back.s - r.s).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((back.x - r.x).cwiseAbs().maxCoeff() < 1e-9);
  }
  Vector mean_scores = st.score_mean;
  CHECK(Vector(st.normalize_scores(mean_scores)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((st.normalize_scores(st.score_mean + st.score_std).array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS((void)st.normalize_scores(Vector::Zero(3)), DimensionError);
}

TEST_CASE("splits partition the cohort") {
  Cohort c = random_cohort(205, 1);
  SplitSpec s = make_splits(c, 17);
  CHECK(s.test_ids().size() == 41);
  std::set<std::string> seen;
  size_t min_fold = 1000, max_fold = 0;
  for (const auto& id : s.test_ids()) seen.insert(id);
  for (int f = 0; f < 5; ++f) {
    auto ids = s.fold_ids(f);
    min_fold = std::min(min_fold, ids.size());
    max_fold = std::max(max_fold, ids.size());
    for (const auto& id : ids) CHECK(seen.insert(id).second);
  }
  CHECK(seen.size() == 205);
  CHECK(max_fold - min_fold <= 1);
  CHECK(make_splits(c, 17).assignments == s.assignments);
  CHECK(make_splits(c, 18).assignments != s.assignments);

  // Record order does not matter.
  Cohort shuffled = c;
  std::reverse(shuffled.records.begin(), shuffled.records.end());
  CHECK(make_splits(shuffled, 17).assignments == s.assignments);
}

TEST_CASE("ten records into five folds of two") {
  Cohort c = random_cohort(13, 2);
  SplitSpec s = make_splits(c, 3, 0.2, 5);  // 3 test, 10 train
  for (int f = 0; f < 5; ++f) CHECK(s.fold_ids(f).size() == 2);
  CHECK_THROWS_AS(make_splits(random_cohort(5, 1), 3, 0.2, 5), ValidationError);
  CHECK_THROWS_AS(make_splits(c, 3, 0.0, 5), ValidationError);
  CHECK_THROWS_AS(make_splits(c, 3, 0.2, 1), ValidationError);
}

TEST_CASE("splits sidecar round trip") {
  Cohort c = random_cohort(20, 5);
  SplitSpec s = make_splits(c, 9, 0.2, 4);
  auto path = std::filesystem::temp_directory_path() / "adherence_splits_test.csv";
  write_splits(s, path);
  SplitSpec back = read_splits(path);
  CHECK(back.assignments == s.assignments);
  CHECK(back.k == 4);
  std::filesystem::remove(path);
}

TEST_CASE("mixup endpoints and midpoint") {
  Cohort c = random_cohort(4, 6);
  std::vector<const PatientRecord*> ptrs;
  for (const auto& r : c.records) ptrs.push_back(&r);
  SequenceBatch b = make_batch(ptrs);
  SequenceBatch same = mixup_with(b, {1.0, 1.0, 1.0, 1.0}, {1, 2, 3, 0});
  CHECK(same.s == b.s);
  CHECK(same.x[3] == b.x[3]);

  SequenceBatch tiny = b;
  tiny.s.setZero();
  tiny.s(1, 0) = 2.0;
  SequenceBatch half = mixup_with(tiny, {0.5, 0.5, 0.5, 0.5}, {1, 0, 3, 2});
  CHECK(half.s(0, 0) == doctest::Approx(1.0));

  Rng rng(1);
  SequenceBatch one = make_batch({ptrs[0]});
  CHECK(mixup_batch(one, 0.2, rng).s == one.s);
}

TEST_CASE("mixup outputs stay between the parents") {
  Cohort c = random_cohort(16, 7);
  std::vector<const PatientRecord*> ptrs;
  for (const auto& r : c.records) ptrs.push_back(&r);
  SequenceBatch b = make_batch(ptrs);
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    SequenceBatch m = mixup_batch(b, 0.4, rng);
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      // Some parent pair (i, j) must bracket every dim of row i.
      bool found = false;
      for (Eigen::Index j = 0; j < b.size() && !found; ++j) {
        auto between = [&](const Matrix& mix, const Matrix& src) {
          for (Eigen::Index k = 0; k < src.cols(); ++k) {
            const double lo = std::min(src(i, k), src(j, k)) - 1e-12;
            const double hi = std::max(src(i, k), src(j, k)) + 1e-12;
            if (mix(i, k) < lo || mix(i, k) > hi) return false;
          }
          return true;
        };
        bool ok = between(m.s, b.s) && between(m.y, b.y) && between(m.a, b.a);
        for (int t = 0; t < kSteps && ok; ++t) ok = between(m.x[static_cast<size_t>(t)], b.x[static_cast<size_t>(t)]);
        found = ok;
      }
      CHECK(found);
    }
  }
}

TEST_CASE("beta(alpha, alpha) mean is one half") {
  Rng rng(123);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += sample_beta(0.2, 0.2, rng);
  CHECK(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("withdrawal policy masks later visits") {
  Cohort c = load_cohort(kData / "cohort3.csv");
  Cohort masked = apply_withdrawal_policy(c, false);
  // P003 stops in interval 4 (y4 = 0): visits 4 and 5 become unobserved.
  const auto& p = masked.by_id("P003");
  CHECK(p.mask == std::array<bool, kSteps>{true, true, true, true, false, false});
  CHECK(apply_withdrawal_policy(c, true).by_id("P003").mask == c.by_id("P003").mask);
}
