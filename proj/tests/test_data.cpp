#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "pointveil/data.hpp"
#include "test_util.hpp"

using namespace pointveil;

namespace {

double squared_dist(const Mat& pts, std::size_t a, std::size_t b) {
  double d2 = 0.0;
  for (int j = 0; j < 3; ++j) {
    double d = pts(a, j) - pts(b, j);
    d2 += d * d;
  }
  return d2;
}

double min_pairwise(const Mat& pts, const std::vector<std::size_t>& idx) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = a + 1; b < idx.size(); ++b)
      best = std::min(best, squared_dist(pts, idx[a], idx[b]));
  return best;
}

}  // namespace

// ---------------------------------------------------------------- normalize

TEST_CASE("normalize centers and scales to the unit ball") {
  Rng rng(1);
  PointCloud c;
  c.points = pvtest::random_mat(40, 3, rng, 3.0);
  for (std::size_t i = 0; i < c.size(); ++i) c.points(i, 1) += 10.0;
  PointCloud n = normalize(c);
  double cen[3];
  centroid_of(n.points, cen);
  for (int j = 0; j < 3; ++j) CHECK(std::fabs(cen[j]) < 1e-9);
  CHECK(max_radius_of(n.points) == Catch::Approx(1.0).margin(1e-9));
  CHECK(n.normalized);

  // offset/scale record maps back to the source frame
  for (std::size_t i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(n.points(i, j) * n.scale + n.offset[j] ==
            Catch::Approx(c.points(i, j)).margin(1e-9));
}

TEST_CASE("normalize is idempotent and similarity invariant") {
  Rng rng(2);
  PointCloud c;
  c.points = pvtest::random_mat(30, 3, rng);
  PointCloud n1 = normalize(c);
  PointCloud n2 = normalize(n1);
  CHECK(max_abs_diff(n1.points, n2.points) < 1e-12);

  PointCloud scaled = c;
  for (std::size_t i = 0; i < scaled.size(); ++i)
    for (int j = 0; j < 3; ++j) scaled.points(i, j) = 7.0 * c.points(i, j) + double(j) - 1.0;
  PointCloud n3 = normalize(scaled);
  CHECK(max_abs_diff(n1.points, n3.points) < 1e-12);
}

TEST_CASE("normalize on the unit cube corners") {
  PointCloud c;
  c.points = Mat(8, 3);
  for (int i = 0; i < 8; ++i) {
    c.points(i, 0) = i & 1 ? 1.0 : 0.0;
    c.points(i, 1) = i & 2 ? 1.0 : 0.0;
    c.points(i, 2) = i & 4 ? 1.0 : 0.0;
  }
  PointCloud n = normalize(c);
  CHECK(max_radius_of(n.points) == Catch::Approx(1.0).margin(1e-12));
  // all corners are equidistant from the center, so every radius is 1
  for (int i = 0; i < 8; ++i) {
    double r = std::sqrt(n.points(i, 0) * n.points(i, 0) + n.points(i, 1) * n.points(i, 1) +
                         n.points(i, 2) * n.points(i, 2));
    CHECK(r == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("normalize rejects degenerate input") {
  PointCloud empty;
  empty.points = Mat(0, 3);
  CHECK_THROWS_AS(normalize(empty), error);
  PointCloud same;
  same.points = Mat(5, 3, 2.5);
  CHECK_THROWS_AS(normalize(same), error);
}

// ---------------------------------------------------------------- fps

TEST_CASE("fps on collinear points picks the extremes") {
  Mat pts(4, 3);
  pts(0, 0) = 0.0;
  pts(1, 0) = 1.0;
  pts(2, 0) = 2.0;
  pts(3, 0) = 10.0;
  auto picked = farthest_point_sample(pts, 2, 0);
  REQUIRE(picked.size() == 2);
  CHECK(picked[0] == 0);
  CHECK(picked[1] == 3);
}

TEST_CASE("fps returns everything when n equals the input size") {
  Rng rng(3);
  Mat pts = pvtest::random_mat(9, 3, rng);
  auto picked = farthest_point_sample(pts, 9, 2);
  CHECK(picked.size() == 9);
  CHECK(picked[0] == 2);
  std::set<std::size_t> unique(picked.begin(), picked.end());
  CHECK(unique.size() == 9);
}

TEST_CASE("fps matches an independent greedy recomputation") {
  Rng rng(4);
  Mat pts = pvtest::random_mat(6, 3, rng);
  auto picked = farthest_point_sample(pts, 3, 0);

  // brute-force greedy oracle
  std::vector<std::size_t> oracle{0};
  while (oracle.size() < 3) {
    double best_d = -1.0;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < pts.rows; ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t s : oracle) d = std::min(d, squared_dist(pts, i, s));
      if (d > best_d) {
        best_d = d;
        best_i = i;
      }
    }
    oracle.push_back(best_i);
  }
  CHECK(picked == oracle);
}

TEST_CASE("fps spreads better than random subsets") {
  Rng rng(5);
  Mat pts = pvtest::random_mat(64, 3, rng);
  auto picked = farthest_point_sample(pts, 8, 0);
  double fps_quality = min_pairwise(pts, picked);
  int beaten = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    std::vector<std::size_t> all(64);
    for (std::size_t i = 0; i < 64; ++i) all[i] = i;
    for (std::size_t k = 64; k > 1; --k) std::swap(all[k - 1], all[rng.uniform_index(k)]);
    all.resize(8);
    if (min_pairwise(pts, all) <= fps_quality) ++beaten;
  }
  CHECK(beaten >= 95);
}

TEST_CASE("fps validates its arguments") {
  Mat pts(3, 3);
  CHECK_THROWS_AS(farthest_point_sample(pts, 4, 0), error);
  CHECK_THROWS_AS(farthest_point_sample(pts, 2, 5), error);
  CHECK_THROWS_AS(farthest_point_sample(Mat(0, 3), 0, 0), error);
}

TEST_CASE("subset carries labels and metadata") {
  PointCloud c;
  c.points = Mat(4, 3);
  for (int i = 0; i < 4; ++i) c.points(i, 0) = double(i);
  c.part_labels = {0, 1, 1, 2};
  c.shape_label = 3;
  c.id = "probe";
  PointCloud s = subset(c, {2, 0});
  CHECK(s.size() == 2);
  CHECK(s.points(0, 0) == 2.0);
  CHECK(s.points(1, 0) == 0.0);
  CHECK(s.part_labels == std::vector<int>{1, 0});
  CHECK(s.shape_label == 3);
  CHECK(s.id == "probe");
}

// ---------------------------------------------------------------- synthesis

TEST_CASE("sphere radii stay within the jitter envelope") {
  SynthSpec spec;
  spec.classes = {"sphere"};
  spec.clouds_per_class = 3;
  spec.jitter = 0.02;
  Dataset ds = generate(spec);
  for (const PointCloud& c : ds.clouds)
    for (std::size_t i = 0; i < c.size(); ++i) {
      double r = std::sqrt(c.points(i, 0) * c.points(i, 0) + c.points(i, 1) * c.points(i, 1) +
                           c.points(i, 2) * c.points(i, 2));
      CHECK(std::fabs(r - 1.0) < 3.0 * spec.jitter);
    }
}

TEST_CASE("composite classes carry their part labels") {
  SynthSpec spec;
  spec.classes = {"dumbbell", "rocket"};
  spec.clouds_per_class = 2;
  Dataset ds = generate(spec);
  for (const PointCloud& c : ds.clouds) {
    REQUIRE(c.has_parts());
    std::set<int> parts(c.part_labels.begin(), c.part_labels.end());
    if (ds.class_names[std::size_t(c.shape_label)] == "dumbbell")
      CHECK(parts == std::set<int>{0, 1});
    else
      CHECK(parts == std::set<int>{0, 1, 2});
  }
  SynthSpec simple;
  simple.classes = {"cube"};
  simple.clouds_per_class = 1;
  CHECK_FALSE(generate(simple).clouds[0].has_parts());
}

TEST_CASE("generation is deterministic and seed-sensitive") {
  SynthSpec spec;
  spec.clouds_per_class = 2;
  spec.seed = 31;
  Dataset a = generate(spec), b = generate(spec);
  REQUIRE(a.clouds.size() == b.clouds.size());
  for (std::size_t i = 0; i < a.clouds.size(); ++i)
    CHECK(max_abs_diff(a.clouds[i].points, b.clouds[i].points) == 0.0);
  CHECK(a.train_idx == b.train_idx);

  spec.seed = 32;
  Dataset c = generate(spec);
  CHECK(max_abs_diff(a.clouds[0].points, c.clouds[0].points) > 1e-6);
}

TEST_CASE("generate rejects bad specs") {
  SynthSpec tiny;
  tiny.points = 4;
  CHECK_THROWS_AS(generate(tiny), error);
  SynthSpec unknown;
  unknown.classes = {"banana"};
  CHECK_THROWS_AS(generate(unknown), error);
}

TEST_CASE("splits are 80/20 per class") {
  SynthSpec spec;
  spec.classes = {"sphere", "cube"};
  spec.clouds_per_class = 50;
  Dataset ds = generate(spec);
  CHECK(ds.train_idx.size() == 80);
  CHECK(ds.test_idx.size() == 20);
  int per_class_test[2] = {0, 0};
  for (std::size_t i : ds.test_idx) ++per_class_test[ds.clouds[i].shape_label];
  CHECK(per_class_test[0] == 10);
  CHECK(per_class_test[1] == 10);
  // disjoint and exhaustive
  std::set<std::size_t> all(ds.train_idx.begin(), ds.train_idx.end());
  all.insert(ds.test_idx.begin(), ds.test_idx.end());
  CHECK(all.size() == 100);
}

// ---------------------------------------------------------------- laplace

TEST_CASE("laplace noise vanishes at huge epsilon") {
  SynthSpec spec;
  spec.classes = {"sphere"};
  spec.clouds_per_class = 1;
  Dataset ds = generate(spec);
  PointCloud noisy = laplace_perturb(ds.clouds[0], 1e9, 7);
  CHECK(max_abs_diff(noisy.points, ds.clouds[0].points) < 1e-7);
}

TEST_CASE("laplace noise statistics match b = 2/epsilon") {
  PointCloud big;
  big.points = Mat(40000, 3);  // 120k coordinates
  big.normalized = true;
  PointCloud noisy = laplace_perturb(big, 10.0, 99);
  double sum = 0.0, sum2 = 0.0;
  for (double v : noisy.points.data) {
    sum += v;
    sum2 += v * v;
  }
  double n = double(noisy.points.size());
  double mean = sum / n;
  double stddev = std::sqrt(sum2 / n - mean * mean);
  const double b = 2.0 / 10.0;
  CHECK(std::fabs(stddev - b * std::sqrt(2.0)) / (b * std::sqrt(2.0)) < 0.05);
  CHECK(std::fabs(mean) < 3.0 * (b * std::sqrt(2.0)) / std::sqrt(n));
}

TEST_CASE("laplace perturb requires a normalized cloud and positive epsilon") {
  PointCloud raw;
  raw.points = Mat(4, 3);
  CHECK_THROWS_AS(laplace_perturb(raw, 1.0, 0), error);
  raw.normalized = true;
  CHECK_THROWS_AS(laplace_perturb(raw, 0.0, 0), error);
}

// ---------------------------------------------------------------- text io

TEST_CASE("xyz round trip preserves coordinates and labels") {
  Rng rng(8);
  PointCloud c;
  c.points = pvtest::random_mat(20, 3, rng);
  c.part_labels.assign(20, 0);
  for (std::size_t i = 0; i < 20; ++i) c.part_labels[i] = int(i % 3);
  save_xyz(c, "tmp_cloud.xyz");
  PointCloud back = load_xyz("tmp_cloud.xyz");
  CHECK(max_abs_diff(back.points, c.points) < 1e-9);
  CHECK(back.part_labels == c.part_labels);
  std::filesystem::remove("tmp_cloud.xyz");
}

TEST_CASE("xyz loader reports malformed lines by number") {
  {
    std::ofstream f("tmp_bad.xyz");
    f << "1 2\n";
  }
  bool threw = false;
  try {
    load_xyz("tmp_bad.xyz");
  } catch (const error& e) {
    threw = true;
    CHECK(e.code() == errc::format);
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
  CHECK(threw);

  {
    std::ofstream f("tmp_bad.xyz");
    f << "0 0 0\n1 1 1\nnot a point\n";
  }
  threw = false;
  try {
    load_xyz("tmp_bad.xyz");
  } catch (const error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK(threw);
  std::filesystem::remove("tmp_bad.xyz");
}

TEST_CASE("off and ply vertex lists load") {
  {
    std::ofstream f("tmp_mesh.off");
    f << "OFF\n# a comment\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
  }
  PointCloud off = load_off("tmp_mesh.off");
  REQUIRE(off.size() == 3);
  CHECK(off.points(1, 0) == 1.0);
  CHECK(off.points(2, 1) == 1.0);
  std::filesystem::remove("tmp_mesh.off");

  {
    std::ofstream f("tmp_mesh.ply");
    f << "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
         "property float z\nend_header\n0.5 0 0\n0 0.25 0\n";
  }
  PointCloud ply = load_ply("tmp_mesh.ply");
  REQUIRE(ply.size() == 2);
  CHECK(ply.points(0, 0) == 0.5);
  CHECK(ply.points(1, 1) == 0.25);
  std::filesystem::remove("tmp_mesh.ply");

  {
    std::ofstream f("tmp_mesh.ply");
    f << "ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n";
  }
  CHECK_THROWS_AS(load_ply("tmp_mesh.ply"), error);
  std::filesystem::remove("tmp_mesh.ply");
}

// ---------------------------------------------------------------- corpus io

TEST_CASE("dataset save/load round trip") {
  SynthSpec spec;
  spec.classes = {"sphere", "rocket"};
  spec.clouds_per_class = 5;
  spec.points = 32;
  Dataset ds = generate(spec);
  const std::string root = "tmp_corpus";
  save_dataset(ds, root);
  Dataset back = load_dataset(root);
  CHECK(back.class_names == ds.class_names);
  CHECK(back.clouds.size() == ds.clouds.size());
  CHECK(back.train_idx.size() == ds.train_idx.size());
  CHECK(back.test_idx.size() == ds.test_idx.size());

  // match clouds by id: coordinates survive the text round trip
  for (const PointCloud& orig : ds.clouds) {
    bool found = false;
    for (const PointCloud& loaded : back.clouds)
      if (loaded.id == orig.id) {
        found = true;
        CHECK(loaded.shape_label == orig.shape_label);
        CHECK(max_abs_diff(loaded.points, orig.points) < 1e-9);
        CHECK(loaded.part_labels == orig.part_labels);
      }
    CHECK(found);
  }
  std::filesystem::remove_all(root);
}

TEST_CASE("dataset loader rejects broken manifests") {
  namespace fs = std::filesystem;
  const std::string root = "tmp_badcorpus";
  fs::create_directories(root);
  {
    std::ofstream f(fs::path(root) / "manifest.txt");
    f << "not_a_classes_line\n";
  }
  CHECK_THROWS_AS(load_dataset(root), error);
  {
    std::ofstream f(fs::path(root) / "manifest.txt");
    f << "classes sphere\nvalidation sphere/x.xyz\n";
  }
  CHECK_THROWS_AS(load_dataset(root), error);
  fs::remove_all(root);
  CHECK_THROWS_AS(load_dataset("no_such_dir_anywhere"), error);
}
