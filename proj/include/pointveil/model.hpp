#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pointveil/common.hpp"
#include "pointveil/data.hpp"
#include "pointveil/encoder.hpp"
#include "pointveil/flow.hpp"
#include "pointveil/io.hpp"

namespace pointveil {

enum class Task : std::uint8_t { classification = 0, segmentation = 1 };

inline const char* task_name(Task t) {
  return t == Task::classification ? "classification" : "segmentation";
}

struct ModelConfig {
  Task task = Task::classification;
  std::size_t K = 4;    // shape classes (gmm_e components)
  std::size_t K_z = 4;  // latent point components: classes, or parts for segmentation
  std::size_t m = 32;   // shape latent dimension
  std::size_t hidden = 64;    // coupling net hidden width (512 at full scale)
  std::size_t f_blocks = 1;   // one block = two couplings with complementary masks
  bool faithful_single_coupling = false;  // literal single-coupling F
  std::size_t g_couplings = 2;
  std::size_t enc_pw1 = 64, enc_pw2 = 128, enc_head = 64;
  double mean_radius = 5.0;
  std::size_t mean_candidates = 1000;
  std::uint64_t seed = 0;

  std::size_t f_couplings() const { return faithful_single_coupling ? 1 : 2 * f_blocks; }
};

struct LatentCloud {
  Mat z;  // n x 3
  Vec e;  // m
  std::vector<int> assignments;  // per-point component k_p
  std::string id;

  std::size_t size() const { return z.rows; }
};

// Everything needed to run the pipeline: encoder h, shape flow G,
// conditional point flow F, and both mixture specs, over one ParamStore.
struct ModelBundle {
  ModelConfig cfg;
  ParamStore store;
  ShapeEncoder h;
  FlowStack g;  // m-dim, unconditional
  FlowStack f;  // 3-dim, conditioned on e
  GmmSpec gmm_e;
  GmmSpec gmm_z;

  static ModelBundle create(const ModelConfig& cfg) {
    require(cfg.K >= 1 && cfg.K_z >= 1, errc::config, "model: K and K_z must be >= 1");
    require(cfg.m >= 2, errc::config, "model: m must be >= 2 (coupling flows need both partitions)");
    if (cfg.task == Task::classification)
      require(cfg.K == cfg.K_z, errc::config, "classification requires K_z == K");
    ModelBundle b;
    b.cfg = cfg;
    b.h = ShapeEncoder::create(b.store, "h", cfg.m, cfg.enc_pw1, cfg.enc_pw2, cfg.enc_head);
    b.g = FlowStack::create(b.store, "g", cfg.m, 0, cfg.g_couplings, cfg.hidden);
    b.f = FlowStack::create(b.store, "f", 3, cfg.m, cfg.f_couplings(), cfg.hidden);
    b.gmm_e = gmm_means_init(cfg.K, cfg.m, cfg.mean_radius, cfg.mean_candidates,
                             derive_seed(cfg.seed, 101));
    b.gmm_z = gmm_means_init(cfg.K_z, 3, cfg.mean_radius, cfg.mean_candidates,
                             derive_seed(cfg.seed, 102));
    return b;
  }

  // fresh weight draw; flows keep zero final layers (identity at start)
  void randomize() {
    Rng rng(derive_seed(cfg.seed, 103));
    h.randomize(store, rng);
    g.randomize(store, rng);
    f.randomize(store, rng);
  }

  // ---- projection ----

  Vec encode(const Mat& points) const {
    Mat w = h.eval(store, points);
    Mat e = g.forward(store, w, nullptr).first;
    return e.data;
  }

  LatentCloud project(const PointCloud& cloud) const {
    require(cloud.size() >= 1, errc::input, "project: empty cloud");
    require(cloud.normalized, errc::input, "project: cloud must be normalized");
    LatentCloud out;
    out.e = encode(cloud.points);
    Mat cond = Mat::row(out.e);
    out.z = f.forward(store, cloud.points, &cond).first;
    out.id = cloud.id;
    out.assignments = assign_components(cloud, out.z);
    return out;
  }

  PointCloud unproject(const LatentCloud& latent) const {
    require(latent.size() >= 1, errc::input, "unproject: empty latent cloud");
    require(latent.e.size() == cfg.m, errc::input, "unproject: e has the wrong dimension");
    for (double v : latent.e)
      require(std::isfinite(v), errc::input, "unproject: non-finite shape latent");
    PointCloud out;
    Mat cond = Mat::row(latent.e);
    out.points = f.inverse(store, latent.z, &cond);
    out.normalized = true;
    out.id = latent.id;
    if (cfg.task == Task::segmentation) out.part_labels = latent.assignments;
    return out;
  }

  // ---- component assignment ----

  // classification: one component per cloud (label, or max-likelihood under
  // gmm_z); segmentation: per-point labels, or per-point nearest mean
  std::vector<int> assign_components(const PointCloud& cloud, const Mat& z) const {
    std::vector<int> out(z.rows);
    if (cfg.task == Task::segmentation && cloud.has_parts()) {
      for (std::size_t i = 0; i < z.rows; ++i) {
        int k = cloud.part_labels[i];
        require(k >= 0 && std::size_t(k) < cfg.K_z, errc::input,
                "project: part label " + std::to_string(k) + " out of range");
        out[i] = k;
      }
      return out;
    }
    if (cfg.task == Task::segmentation) {
      for (std::size_t i = 0; i < z.rows; ++i)
        out[i] = int(gmm_z.nearest(z.data.data() + 3 * i));
      return out;
    }
    int k;
    if (cloud.shape_label >= 0) {
      require(std::size_t(cloud.shape_label) < cfg.K_z, errc::input,
              "project: shape label " + std::to_string(cloud.shape_label) + " out of range");
      k = cloud.shape_label;
    } else {
      // nearest mean in total squared distance = max joint likelihood
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t cand = 0; cand < cfg.K_z; ++cand) {
        double total = 0.0;
        for (std::size_t i = 0; i < z.rows; ++i)
          for (int j = 0; j < 3; ++j) {
            double d = z(i, j) - gmm_z.means(cand, j);
            total += d * d;
          }
        if (total < bd) {
          bd = total;
          best = cand;
        }
      }
      k = int(best);
    }
    std::fill(out.begin(), out.end(), k);
    return out;
  }

  // ---- parameter accounting ----

  std::size_t param_count_encoder_g() const { return h.param_count() + g.param_count(); }

  // F-parameters for a hypothetical block count at these widths. The two
  // couplings of a block differ in size (complementary partitions), so count
  // both phases.
  std::size_t param_count_f(std::size_t blocks) const {
    require(blocks >= 1, errc::config, "param_count_f: blocks must be >= 1");
    auto phase = [&](std::size_t a_count) {
      std::size_t b_count = 3 - a_count;
      std::size_t in = a_count + cfg.m;
      std::size_t net = (in * cfg.hidden + cfg.hidden) +
                        (cfg.hidden * cfg.hidden + cfg.hidden) +
                        (cfg.hidden * b_count + b_count);
      return 2 * net + 1;  // s net, t net, scale bound
    };
    std::size_t a0 = std::max<std::size_t>(1, 3 / 2);
    return blocks * (phase(a0) + phase(3 - a0));
  }

  std::size_t param_count_total(std::size_t blocks) const {
    return param_count_encoder_g() + param_count_f(blocks);
  }
};

// ---------------------------------------------------------------- files

inline constexpr std::uint16_t kModelFormatVersion = 1;

inline void save_model(const ModelBundle& b, const std::string& path) {
  ByteWriter w;
  w.magic("PFM1");
  w.u16(kModelFormatVersion);
  w.u8(std::uint8_t(b.cfg.task));
  w.u32(std::uint32_t(b.cfg.K));
  w.u32(std::uint32_t(b.cfg.K_z));
  w.u32(std::uint32_t(b.cfg.m));
  w.u32(std::uint32_t(b.cfg.hidden));
  w.u32(std::uint32_t(b.cfg.f_blocks));
  w.u8(b.cfg.faithful_single_coupling ? 1 : 0);
  w.u32(std::uint32_t(b.cfg.g_couplings));
  w.u32(std::uint32_t(b.cfg.enc_pw1));
  w.u32(std::uint32_t(b.cfg.enc_pw2));
  w.u32(std::uint32_t(b.cfg.enc_head));
  w.f64(b.cfg.mean_radius);
  w.u32(std::uint32_t(b.cfg.mean_candidates));
  w.u64(b.cfg.seed);
  for (double v : b.gmm_e.means.data) w.f64(v);
  for (double v : b.gmm_z.means.data) w.f64(v);
  w.u64(b.store.size());
  for (double v : b.store.values) w.f64(v);
  w.finish(path);
}

inline ModelBundle load_model(const std::string& path) {
  ByteReader r(path);
  r.expect_magic("PFM1", "model");
  std::uint16_t version = r.u16();
  require(version == kModelFormatVersion, errc::version,
          "unsupported model format version " + std::to_string(version));
  ModelConfig cfg;
  std::uint8_t task = r.u8();
  require(task <= 1, errc::format, "model: invalid task byte");
  cfg.task = Task(task);
  cfg.K = r.u32();
  cfg.K_z = r.u32();
  cfg.m = r.u32();
  cfg.hidden = r.u32();
  cfg.f_blocks = r.u32();
  cfg.faithful_single_coupling = r.u8() != 0;
  cfg.g_couplings = r.u32();
  cfg.enc_pw1 = r.u32();
  cfg.enc_pw2 = r.u32();
  cfg.enc_head = r.u32();
  cfg.mean_radius = r.f64();
  cfg.mean_candidates = r.u32();
  cfg.seed = r.u64();
  ModelBundle b = ModelBundle::create(cfg);
  for (double& v : b.gmm_e.means.data) v = r.f64();
  for (double& v : b.gmm_z.means.data) v = r.f64();
  std::uint64_t n = r.u64();
  require(n == b.store.size(), errc::format,
          "model: parameter count mismatch (file " + std::to_string(n) + ", architecture " +
              std::to_string(b.store.size()) + ")");
  for (double& v : b.store.values) v = r.f64();
  for (double v : b.store.values)
    require(std::isfinite(v), errc::validation, "model: non-finite parameter in file");
  return b;
}

}  // namespace pointveil
