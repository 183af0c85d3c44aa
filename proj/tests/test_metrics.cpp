#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pointveil/metrics.hpp"
#include "pointveil/rng.hpp"
#include "test_util.hpp"

using namespace pointveil;

namespace {

Mat cloud(std::size_t n, Rng& rng, double scale = 1.0) {
  Mat m(n, 3);
  for (double& v : m.data) v = scale * rng.gaussian();
  return m;
}

Mat single(double x, double y, double z) {
  Mat m(1, 3);
  m(0, 0) = x;
  m(0, 1) = y;
  m(0, 2) = z;
  return m;
}

// independent oracle: literal transcription of the definition
double chamfer_oracle(const Mat& a, const Mat& b) {
  double s1 = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    double best = 1e300;
    for (std::size_t j = 0; j < b.rows; ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        double d = a(i, c) - b(j, c);
        d2 += d * d;
      }
      best = std::min(best, d2);
    }
    s1 += best;
  }
  double s2 = 0.0;
  for (std::size_t j = 0; j < b.rows; ++j) {
    double best = 1e300;
    for (std::size_t i = 0; i < a.rows; ++i) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        double d = a(i, c) - b(j, c);
        d2 += d * d;
      }
      best = std::min(best, d2);
    }
    s2 += best;
  }
  return s1 / double(a.rows) + s2 / double(b.rows);
}

// exhaustive minimum over all bijections
double emd_brute(const Mat& a, const Mat& b) {
  std::vector<std::size_t> perm(a.rows);
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        double d = a(i, c) - b(perm[i], c);
        d2 += d * d;
      }
      total += std::sqrt(d2);
    }
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / double(a.rows);
}

}  // namespace

TEST_CASE("chamfer basics", "[metrics]") {
  Rng rng(1);
  Mat a = cloud(12, rng);
  CHECK(chamfer(a, a) == 0.0);
  CHECK(std::abs(chamfer(single(0, 0, 0), single(1, 0, 0)) - 2.0) < 1e-15);
  CHECK_THROWS_WITH_CODE(chamfer(Mat(0, 3), a), errc::input);
  CHECK_THROWS_WITH_CODE(chamfer(a, Mat(0, 3)), errc::input);
}

TEST_CASE("chamfer equals the exhaustive double loop", "[metrics]") {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    Mat a = cloud(10, rng);
    Mat b = cloud(10 + trial % 4, rng);
    double got = chamfer(a, b);
    CHECK(std::abs(got - chamfer_oracle(a, b)) < 1e-12);
    CHECK(std::abs(got - chamfer(b, a)) < 1e-15);  // symmetric
    CHECK(got >= 0.0);
  }
}

TEST_CASE("chamfer is blind to multiset multiplicity, emd is not", "[metrics]") {
  Mat a(2, 3, 0.0);
  a(1, 0) = 1.0;  // {(0,0,0), (1,0,0)}
  Mat b(3, 3, 0.0);
  b(0, 0) = 1.0;  // {(1,0,0), (0,0,0), (0,0,0)}
  CHECK(chamfer(a, b) == 0.0);  // every point has a zero-distance neighbor

  Mat dup(2, 3, 0.0);  // {(0,0,0), (0,0,0)}
  CHECK(std::abs(emd_exact(a, dup) - 0.5) < 1e-12);  // must move one point
}

TEST_CASE("emd basics", "[metrics]") {
  Rng rng(3);
  Mat a = cloud(9, rng);
  CHECK(emd_exact(a, a) == 0.0);
  CHECK(std::abs(emd_exact(single(0, 0, 0), single(1, 0, 0)) - 1.0) < 1e-15);

  // permuted copy: a true bijection at zero cost exists
  Mat p(9, 3);
  for (std::size_t i = 0; i < 9; ++i)
    for (int j = 0; j < 3; ++j) p(i, j) = a((i + 4) % 9, j);
  CHECK(emd_exact(a, p) < 1e-12);
}

TEST_CASE("emd matches the 720-permutation brute force", "[metrics]") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Mat a = cloud(6, rng);
    Mat b = cloud(6, rng);
    double got = emd_exact(a, b);
    CHECK(std::abs(got - emd_brute(a, b)) < 1e-10);
    CHECK(std::abs(got - emd_exact(b, a)) < 1e-12);
  }
}

TEST_CASE("emd is invariant under a common rigid motion", "[metrics]") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Mat a = cloud(8, rng);
    Mat b = cloud(8, rng);
    Mat r = random_orthogonal(3, 700 + std::uint64_t(trial));
    double tx = rng.gaussian(), ty = rng.gaussian(), tz = rng.gaussian();
    auto move = [&](const Mat& src) {
      Mat out(src.rows, 3);
      for (std::size_t i = 0; i < src.rows; ++i)
        for (int j = 0; j < 3; ++j) {
          double v = j == 0 ? tx : (j == 1 ? ty : tz);
          for (int c = 0; c < 3; ++c) v += src(i, c) * r(c, j);
          out(i, j) = v;
        }
      return out;
    };
    CHECK(std::abs(emd_exact(a, b) - emd_exact(move(a), move(b))) < 1e-10);
  }
}

TEST_CASE("emd respects the mean-transport lower bound", "[metrics]") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Mat a = cloud(7, rng);
    Mat b = cloud(7, rng, 2.0);
    double mean_gap2 = 0.0;
    for (int j = 0; j < 3; ++j) {
      double ma = 0.0, mb = 0.0;
      for (std::size_t i = 0; i < 7; ++i) {
        ma += a(i, j) / 7.0;
        mb += b(i, j) / 7.0;
      }
      mean_gap2 += (ma - mb) * (ma - mb);
    }
    CHECK(emd_exact(a, b) >= std::sqrt(mean_gap2) - 1e-12);
  }
}

TEST_CASE("emd input guards point to the entropic fallback", "[metrics]") {
  Rng rng(7);
  Mat a = cloud(4, rng);
  Mat b = cloud(5, rng);
  try {
    emd_exact(a, b);
    FAIL("expected an input error");
  } catch (const error& e) {
    CHECK(e.code() == errc::input);
    CHECK(std::string(e.what()).find("entropic") != std::string::npos);
  }
  Mat big_a = cloud(513, rng);
  Mat big_b = cloud(513, rng);
  CHECK_THROWS_WITH_CODE(emd_exact(big_a, big_b), errc::input);
}

TEST_CASE("entropic self-transport stays under reg * ln n", "[metrics]") {
  Rng rng(8);
  Mat a = cloud(8, rng);
  for (double reg : {0.5, 0.1, 0.01}) {
    EntropicResult r = emd_entropic(a, a, reg, 1000);
    CHECK(r.converged);
    CHECK(r.value >= 0.0);
    CHECK(r.value < reg * std::log(8.0));
  }
}

TEST_CASE("entropic emd approaches the exact solver", "[metrics]") {
  Rng rng(9);
  Mat a = cloud(6, rng);
  Mat b = cloud(6, rng);
  double exact = emd_exact(a, b);

  // at reg this small the marginals never hit the strict tolerance, but the
  // transport cost is already far inside the 2% band
  EntropicResult tight = emd_entropic(a, b, 1e-3, 20000);
  CHECK(tight.iterations == 20000);
  CHECK(std::abs(tight.value - exact) <= 0.02 * exact);

  // the entropic plan is feasible, so its cost can only exceed the optimum;
  // shrinking reg tightens it monotonically
  double prev_gap = 1e300;
  for (double reg : {0.5, 0.1, 0.02, 0.004}) {
    EntropicResult r = emd_entropic(a, b, reg, 20000);
    double gap = r.value - exact;
    CHECK(gap > -1e-6);
    CHECK(gap <= prev_gap + 1e-9);
    prev_gap = gap;
  }
}

TEST_CASE("entropic emd handles unequal sizes and reports convergence", "[metrics]") {
  Rng rng(10);
  Mat a = cloud(6, rng);
  Mat b = cloud(9, rng, 1.5);
  EntropicResult r = emd_entropic(a, b, 0.01, 2000);
  CHECK(std::isfinite(r.value));
  CHECK(r.value > 0.0);

  EntropicResult starved = emd_entropic(a, b, 0.005, 1);
  CHECK_FALSE(starved.converged);
  CHECK(starved.iterations == 1);
  CHECK(std::isfinite(starved.value));

  CHECK_THROWS_WITH_CODE(emd_entropic(a, b, 0.0, 10), errc::config);
  CHECK_THROWS_WITH_CODE(emd_entropic(Mat(0, 3), b, 0.1, 10), errc::input);
}

TEST_CASE("accuracy basics", "[metrics]") {
  std::vector<int> labels{0, 1, 2, 1, 0};
  Accuracy perfect = accuracy(labels, labels, 3);
  CHECK(perfect.overall == 1.0);
  CHECK(perfect.avg_class == 1.0);

  // 90/10 split, classifier stuck on the majority class
  std::vector<int> skewed(100, 0), stuck(100, 0);
  for (int i = 90; i < 100; ++i) skewed[std::size_t(i)] = 1;
  Accuracy s = accuracy(stuck, skewed, 2);
  CHECK(s.overall == 0.9);
  CHECK(s.avg_class == 0.5);

  CHECK_THROWS_WITH_CODE(accuracy({}, {}, 2), errc::input);
  CHECK_THROWS_WITH_CODE(accuracy({0}, {0, 1}, 2), errc::input);
  CHECK_THROWS_WITH_CODE(accuracy({0, 0}, {0, 5}, 2), errc::input);
}

TEST_CASE("accuracy equals the confusion-matrix oracle", "[metrics]") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 5, n = 200;
    std::vector<int> labels(n), preds(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = int(rng.uniform() * double(k));
      preds[i] = int(rng.uniform() * double(k));
    }
    Accuracy got = accuracy(preds, labels, k);

    std::vector<std::vector<std::size_t>> confusion(k, std::vector<std::size_t>(k, 0));
    for (std::size_t i = 0; i < n; ++i)
      ++confusion[std::size_t(labels[i])][std::size_t(preds[i])];
    std::size_t diag = 0;
    double recall_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < k; ++c) {
      std::size_t row = 0;
      for (std::size_t d = 0; d < k; ++d) row += confusion[c][d];
      diag += confusion[c][c];
      if (row > 0) {
        recall_sum += double(confusion[c][c]) / double(row);
        ++present;
      }
    }
    CHECK(std::abs(got.overall - double(diag) / double(n)) < 1e-15);
    CHECK(std::abs(got.avg_class - recall_sum / double(present)) < 1e-15);
  }
}

TEST_CASE("absent classes are excluded from the class average", "[metrics]") {
  // labels only use classes 0 and 2 out of K=4
  std::vector<int> labels{0, 0, 2, 2};
  std::vector<int> preds{0, 1, 2, 2};
  Accuracy a = accuracy(preds, labels, 4);
  CHECK(a.overall == 0.75);
  CHECK(a.avg_class == (0.5 + 1.0) / 2.0);
}

TEST_CASE("metric reports serialize as csv with a fixed header", "[metrics]") {
  MetricReport r;
  r.name = "protected";
  r.cd = 1.25;
  r.emd = 0.5;
  r.emd_method = "entropic";
  r.accuracy_overall = 0.875;
  r.accuracy_avg_class = 0.75;
  std::ostringstream out;
  write_reports(out, {r});
  std::istringstream in(out.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "name,cd,emd,emd_method,accuracy_overall,accuracy_avg_class");
  CHECK(row == "protected,1.25,0.5,entropic,0.875,0.75");
}
