#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pointveil/training.hpp"
#include "test_util.hpp"

using namespace pointveil;

namespace {

ModelConfig tiny_cfg(Task task = Task::classification) {
  ModelConfig cfg;
  cfg.task = task;
  cfg.K = 2;
  cfg.K_z = 2;
  cfg.m = 4;
  cfg.hidden = 6;
  cfg.enc_pw1 = 6;
  cfg.enc_pw2 = 8;
  cfg.enc_head = 6;
  cfg.mean_candidates = 60;
  cfg.seed = 3;
  return cfg;
}

PointCloud labeled_cloud(std::size_t n, std::uint64_t seed, int label = 0) {
  Rng rng(seed);
  PointCloud cloud;
  cloud.points = Mat(n, 3);
  for (double& v : cloud.points.data) v = 0.4 * rng.gaussian();
  cloud.normalized = true;
  cloud.shape_label = label;
  cloud.id = "cloud_" + std::to_string(seed);
  return cloud;
}

Dataset tiny_dataset(std::uint64_t seed) {
  SynthSpec spec;
  spec.classes = {"sphere", "cube"};
  spec.points = 32;
  spec.clouds_per_class = 6;
  spec.seed = seed;
  return generate(spec);
}

}  // namespace

TEST_CASE("shape loss at the mean is the pure normalizing constant", "[training]") {
  ModelConfig cfg;  // default m = 32
  cfg.mean_candidates = 60;
  ModelBundle b = ModelBundle::create(cfg);  // zero-init: G is the identity

  Vec w(32);
  for (std::size_t j = 0; j < 32; ++j) w[j] = b.gmm_e.means(1, j);
  double at_mean = loss_src(b.store, b.g, b.gmm_e, w, 1);
  CHECK(std::abs(at_mean - 16.0 * kLog2Pi) < 1e-12);
  CHECK(std::abs(at_mean - 29.406) < 5e-4);

  w[0] += 2.0;  // squared distance 4 adds exactly 2 nats
  double shifted = loss_src(b.store, b.g, b.gmm_e, w, 1);
  CHECK(std::abs(shifted - (at_mean + 2.0)) < 1e-12);

  CHECK_THROWS_WITH_CODE(loss_src(b.store, b.g, b.gmm_e, w, 5), errc::input);
}

TEST_CASE("point loss at the mean matches the 3-D normalizing constant", "[training]") {
  ModelBundle b = ModelBundle::create(tiny_cfg());
  Vec e(4, 0.0);
  Vec x(3);
  for (int j = 0; j < 3; ++j) x[j] = b.gmm_z.means(0, j);
  double at_mean = loss_ptc(b.store, b.f, b.gmm_z, x, e, 0);
  CHECK(std::abs(at_mean - 1.5 * kLog2Pi) < 1e-12);
  CHECK(std::abs(at_mean - 2.7568) < 5e-4);

  x[2] += 2.0;
  double shifted = loss_ptc(b.store, b.f, b.gmm_z, x, e, 0);
  CHECK(std::abs(shifted - (at_mean + 2.0)) < 1e-12);
}

TEST_CASE("angular loss hand values", "[training]") {
  Vec zero(3, 0.0);
  SECTION("aligned vectors with beta 1") {
    Vec v{0.3, -0.2, 0.9};
    CHECK(loss_angular(v, v, zero, zero, 1.0) < 1e-12);
  }
  SECTION("perpendicular vectors with beta 0") {
    Vec a{1.0, 0.0, 0.0}, p{0.0, 2.0, 0.0};
    CHECK(loss_angular(a, p, zero, zero, 0.0) < 1e-12);
  }
  SECTION("analytic cosine") {
    Vec a{1.0, 0.0, 0.0}, d{1.0, 1.0, 0.0};
    double want = std::abs(1.0 / std::sqrt(2.0) - 0.5);
    CHECK(std::abs(loss_angular(a, d, zero, zero, 0.5) - want) < 1e-12);
    CHECK(std::abs(want - 0.2071) < 1e-4);
  }
  SECTION("degenerate centers contribute zero") {
    Vec a{1.0, 0.0, 0.0};
    CHECK(loss_angular(zero, a, zero, zero, 0.9) == 0.0);
    CHECK(loss_angular(a, zero, zero, zero, -0.4) == 0.0);
    CHECK(loss_angular(a, a, a, zero, 0.7) == 0.0);  // x at its own centroid
  }
  SECTION("dimension mismatch") {
    Vec a{1.0, 0.0};
    CHECK_THROWS_WITH_CODE(loss_angular(a, zero, zero, zero, 0.0), errc::input);
  }
}

TEST_CASE("beta targets are stable, bounded, and uniform", "[training]") {
  BetaAssignment betas{derive_seed(7, 302)};
  BetaAssignment again{derive_seed(7, 302)};
  BetaAssignment other{derive_seed(8, 302)};

  CHECK(betas.beta("shape_000", 17) == again.beta("shape_000", 17));
  CHECK(betas.beta("shape_000", 17) != other.beta("shape_000", 17));
  CHECK(betas.beta("shape_000", 17) != betas.beta("shape_000", 18));
  CHECK(betas.beta("shape_000", 17) != betas.beta("shape_001", 17));

  // Kolmogorov-Smirnov sanity over 1e5 draws
  std::vector<double> draws;
  draws.reserve(100000);
  for (int c = 0; c < 1000; ++c)
    for (std::size_t i = 0; i < 100; ++i) {
      double v = betas.beta("c" + std::to_string(c), i);
      REQUIRE(v >= -1.0);
      REQUIRE(v <= 1.0);
      draws.push_back(v);
    }
  std::sort(draws.begin(), draws.end());
  double d_stat = 0.0;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    double cdf = (draws[i] + 1.0) / 2.0;
    double hi = double(i + 1) / double(draws.size());
    double lo = double(i) / double(draws.size());
    d_stat = std::max(d_stat, std::max(std::abs(hi - cdf), std::abs(cdf - lo)));
  }
  CHECK(d_stat < 0.01);
}

TEST_CASE("group centroids", "[training]") {
  Mat pts(4, 3, 0.0);
  pts(0, 0) = 1.0;
  pts(1, 0) = 3.0;
  pts(2, 1) = 4.0;
  pts(3, 1) = 6.0;
  Mat mu = group_centroids(pts, {0, 0, 1, 1}, 3);
  CHECK(mu(0, 0) == 2.0);
  CHECK(mu(0, 1) == 0.0);
  CHECK(mu(1, 1) == 5.0);
  CHECK(mu(2, 0) == 0.0);  // empty group stays at the origin
}

TEST_CASE("zero-init total loss equals the analytic GMM objective", "[training]") {
  ModelBundle b = ModelBundle::create(tiny_cfg());
  PointCloud cloud = labeled_cloud(12, 5, 1);
  BetaAssignment betas{99};
  TrainConfig cfg;

  LossBreakdown got = total_loss(b, cloud, betas, cfg);

  // flows are the identity: L_s and L_p are plain Gaussian NLLs of raw data
  double l_s = 0.5 * 4.0 * kLog2Pi;
  for (std::size_t j = 0; j < 4; ++j) l_s += 0.5 * b.gmm_e.means(1, j) * b.gmm_e.means(1, j);
  CHECK(std::abs(got.l_s - l_s) < 1e-10);

  double l_p = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    double ssd = 0.0;
    for (int j = 0; j < 3; ++j) {
      double d = cloud.points(i, j) - b.gmm_z.means(1, j);
      ssd += d * d;
    }
    l_p += 1.5 * kLog2Pi + 0.5 * ssd;
  }
  l_p /= double(cloud.size());
  CHECK(std::abs(got.l_p - l_p) < 1e-10);

  // angular oracle straight from the pointwise definition
  double l_as = 0.0;
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    c0 += cloud.points(i, 0);
    c1 += cloud.points(i, 1);
    c2 += cloud.points(i, 2);
  }
  Vec mu_x{c0 / 12.0, c1 / 12.0, c2 / 12.0};
  Vec mu_z{b.gmm_z.means(1, 0), b.gmm_z.means(1, 1), b.gmm_z.means(1, 2)};
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Vec x{cloud.points(i, 0), cloud.points(i, 1), cloud.points(i, 2)};
    l_as += loss_angular(x, x, mu_x, mu_z, BetaAssignment{99}.beta(cloud.id, i));
  }
  l_as /= double(cloud.size());
  CHECK(std::abs(got.l_as - l_as) < 1e-10);

  CHECK(std::abs(got.total - (got.l_s + got.l_p + got.l_as)) < 1e-12);
}

TEST_CASE("loss weights gate their terms", "[training]") {
  ModelBundle b = ModelBundle::create(tiny_cfg());
  PointCloud cloud = labeled_cloud(9, 6, 0);
  BetaAssignment betas{1};

  TrainConfig flow_only;
  flow_only.lambda_as = 0.0;
  LossBreakdown fo = total_loss(b, cloud, betas, flow_only);
  CHECK(std::abs(fo.total - (fo.l_s + fo.l_p)) < 1e-12);

  TrainConfig off;
  off.lambda_s = off.lambda_p = off.lambda_as = 0.0;
  CHECK(total_loss(b, cloud, betas, off).total == 0.0);

  TrainConfig scaled;
  scaled.lambda_s = 2.0;
  scaled.lambda_p = 0.5;
  scaled.lambda_as = 3.0;
  LossBreakdown sc = total_loss(b, cloud, betas, scaled);
  CHECK(std::abs(sc.total - (2.0 * sc.l_s + 0.5 * sc.l_p + 3.0 * sc.l_as)) < 1e-12);
}

TEST_CASE("loss preconditions", "[training]") {
  ModelBundle b = ModelBundle::create(tiny_cfg());
  BetaAssignment betas{1};
  TrainConfig cfg;

  PointCloud unlabeled = labeled_cloud(5, 7);
  unlabeled.shape_label = -1;
  CHECK_THROWS_WITH_CODE(total_loss(b, unlabeled, betas, cfg), errc::input);

  PointCloud out_of_range = labeled_cloud(5, 7, 2);
  CHECK_THROWS_WITH_CODE(total_loss(b, out_of_range, betas, cfg), errc::input);

  ModelBundle seg = ModelBundle::create(tiny_cfg(Task::segmentation));
  PointCloud no_parts = labeled_cloud(5, 7, 0);
  CHECK_THROWS_WITH_CODE(total_loss(seg, no_parts, betas, cfg), errc::input);

  TrainConfig bad;
  bad.lambda_p = -0.5;
  CHECK_THROWS_WITH_CODE(validate(bad), errc::config);
  bad = TrainConfig{};
  bad.epochs = 0;
  CHECK_THROWS_WITH_CODE(validate(bad), errc::config);
}

TEST_CASE("total gradient matches finite differences", "[training][slow]") {
  BetaAssignment betas{42};
  TrainConfig cfg;
  PointCloud cloud = labeled_cloud(6, 11, 1);

  SECTION("at random initialization") {
    ModelBundle b = ModelBundle::create(tiny_cfg());
    b.randomize();
    pvtest::param_fd_check(
        b.store,
        [&](Tape& t) {
          LossNodes nodes = build_cloud_loss(t, b, cloud, betas, cfg);
          t.backward(nodes.total);
          return t.val(nodes.total)(0, 0);
        },
        1e-4);
  }
  SECTION("at a mid-training-like checkpoint") {
    ModelBundle b = ModelBundle::create(tiny_cfg());
    b.randomize();
    Rng rng(17);
    for (double& v : b.store.values) v += 0.1 * rng.gaussian();
    pvtest::param_fd_check(
        b.store,
        [&](Tape& t) {
          LossNodes nodes = build_cloud_loss(t, b, cloud, betas, cfg);
          t.backward(nodes.total);
          return t.val(nodes.total)(0, 0);
        },
        1e-4);
  }
  SECTION("segmentation path with part labels") {
    ModelBundle b = ModelBundle::create(tiny_cfg(Task::segmentation));
    b.randomize();
    Rng rng(19);
    for (double& v : b.store.values) v += 0.1 * rng.gaussian();
    PointCloud seg = labeled_cloud(6, 12, 0);
    seg.part_labels = {0, 1, 0, 1, 0, 1};
    pvtest::param_fd_check(
        b.store,
        [&](Tape& t) {
          LossNodes nodes = build_cloud_loss(t, b, seg, betas, cfg);
          t.backward(nodes.total);
          return t.val(nodes.total)(0, 0);
        },
        1e-4);
  }
}

TEST_CASE("training reduces the loss and is deterministic", "[training][slow]") {
  Dataset data = tiny_dataset(21);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_clouds = 4;
  cfg.m = 6;
  cfg.hidden = 8;
  cfg.mean_candidates = 60;
  cfg.lr = 2e-3;
  cfg.seed = 9;

  TrainResult a = train(data, Task::classification, cfg);
  REQUIRE_FALSE(a.diverged);
  REQUIRE(a.trace.size() == 4);
  CHECK(a.completed_epochs == 4);
  CHECK(a.trace.back().total < a.trace.front().total);
  for (const TraceRow& row : a.trace) {
    CHECK(std::isfinite(row.total));
    CHECK(std::abs(row.total - (row.l_s + row.l_p + row.l_as)) < 1e-9);
  }

  TrainResult b = train(data, Task::classification, cfg);
  CHECK(a.bundle.store.values == b.bundle.store.values);  // bit-identical

  cfg.seed = 10;
  TrainResult c = train(data, Task::classification, cfg);
  CHECK(a.bundle.store.values != c.bundle.store.values);
}

TEST_CASE("loss trace file is append-only csv", "[training]") {
  const std::string path = "/tmp/pv_trace_test.csv";
  std::remove(path.c_str());
  Dataset data = tiny_dataset(22);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_clouds = 6;
  cfg.m = 4;
  cfg.hidden = 6;
  cfg.mean_candidates = 60;
  cfg.trace_path = path;

  train(data, Task::classification, cfg);
  train(data, Task::classification, cfg);  // appends, never truncates

  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  REQUIRE(lines.size() == 5);  // one header + 2 epochs x 2 runs
  CHECK(lines[0] == "epoch,L_s,L_p,L_as,total");
  int epoch;
  double ls, lp, las, total;
  REQUIRE(std::sscanf(lines[1].c_str(), "%d,%lf,%lf,%lf,%lf", &epoch, &ls, &lp, &las,
                      &total) == 5);
  CHECK(epoch == 1);
  CHECK(std::abs(total - (ls + lp + las)) < 1e-4);
  std::remove(path.c_str());
}

TEST_CASE("divergence rolls back to the last good checkpoint", "[training]") {
  Dataset data = tiny_dataset(23);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.m = 4;
  cfg.hidden = 6;
  cfg.mean_candidates = 60;
  cfg.seed = 4;
  cfg.divergence_threshold = 0.0;  // any positive loss trips the guard

  TrainResult r = train(data, Task::classification, cfg);
  CHECK(r.diverged);
  CHECK(r.completed_epochs == 0);
  CHECK(r.trace.empty());

  // the returned parameters are the untouched initialization
  ModelConfig mc;
  mc.K = 2;
  mc.K_z = 2;
  mc.m = 4;
  mc.hidden = 6;
  mc.mean_candidates = 60;
  mc.seed = 4;
  ModelBundle fresh = ModelBundle::create(mc);
  fresh.randomize();
  CHECK(r.bundle.store.values == fresh.store.values);
}

TEST_CASE("training validates its dataset", "[training]") {
  Dataset data = tiny_dataset(24);
  TrainConfig cfg;
  cfg.m = 4;
  cfg.hidden = 6;
  cfg.mean_candidates = 60;

  Dataset empty = data;
  empty.train_idx.clear();
  CHECK_THROWS_WITH_CODE(train(empty, Task::classification, cfg), errc::input);

  // segmentation demands part labels somewhere in the data
  CHECK_THROWS_WITH_CODE(train(data, Task::segmentation, cfg), errc::input);
}

TEST_CASE("segmentation training runs on part-labeled synthetic data", "[training][slow]") {
  SynthSpec spec;
  spec.classes = {"dumbbell", "rocket"};
  spec.points = 32;
  spec.clouds_per_class = 4;
  spec.seed = 31;
  Dataset data = generate(spec);

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_clouds = 4;
  cfg.m = 4;
  cfg.hidden = 6;
  cfg.mean_candidates = 60;
  TrainResult r = train(data, Task::segmentation, cfg);
  REQUIRE_FALSE(r.diverged);
  CHECK(r.bundle.cfg.task == Task::segmentation);
  CHECK(r.bundle.cfg.K_z == 3);  // rocket carries parts {0,1,2}
  CHECK(r.trace.size() == 2);
}

TEST_CASE("cosine profile on the identity chain is exactly one", "[training]") {
  ModelBundle b = ModelBundle::create(tiny_cfg());
  Dataset data = tiny_dataset(25);
  CosineProfile prof = cosine_profile(b, data, data.train_idx);
  REQUIRE_FALSE(prof.cosines.empty());
  CHECK(prof.mean > 1.0 - 1e-9);
  CHECK(prof.lo > 1.0 - 1e-9);
  CHECK(prof.hi <= 1.0 + 1e-12);
  CHECK(prof.cloud_means.size() == data.train_idx.size());
}
