#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "pointveil/common.hpp"
#include "pointveil/data.hpp"
#include "pointveil/model.hpp"
#include "pointveil/optimizer.hpp"
#include "pointveil/tape.hpp"

namespace pointveil {

struct TrainConfig {
  double lambda_s = 1.0, lambda_p = 1.0, lambda_as = 1.0;
  std::size_t epochs = 30;
  std::size_t batch_clouds = 8;
  double lr = 1e-3;
  std::size_t hidden = 64;
  std::size_t f_blocks = 1;
  bool faithful_single_coupling = false;
  std::size_t m = 32;
  double mean_radius = 5.0;
  std::size_t mean_candidates = 1000;
  double grad_clip = 10.0;
  double divergence_threshold = 1e6;
  std::uint64_t seed = 0;
  std::string trace_path;  // empty: no loss trace file
};

inline void validate(const TrainConfig& cfg) {
  require(cfg.lambda_s >= 0.0 && cfg.lambda_p >= 0.0 && cfg.lambda_as >= 0.0, errc::config,
          "train: loss weights must be >= 0");
  require(cfg.epochs >= 1, errc::config, "train: epochs must be >= 1");
  require(cfg.batch_clouds >= 1, errc::config, "train: batch size must be >= 1");
  require(cfg.lr > 0.0, errc::config, "train: learning rate must be > 0");
}

// Deterministic per-(cloud, point) angular target in [-1, 1]. Fixed across
// epochs and restarts: resampling each step would collapse the optimum to
// cos = 0 instead of a randomized target.
struct BetaAssignment {
  std::uint64_t seed = 0;

  double beta(const std::string& cloud_id, std::size_t point) const {
    std::uint64_t h = seed;
    for (char c : cloud_id) {
      h ^= std::uint64_t(std::uint8_t(c));
      h = splitmix64(h);
    }
    h ^= std::uint64_t(point);
    h = splitmix64(h);
    double u = double(h >> 11) * 0x1.0p-53;
    return 2.0 * u - 1.0;
  }
};

// ---------------------------------------------------------------- losses

// -log N(G(w) | mu_{k_s}, I) - logdet G
inline double loss_src(const ParamStore& store, const FlowStack& g, const GmmSpec& gmm_e,
                       const Vec& w, std::size_t k_s) {
  auto [e, logdet] = g.forward(store, Mat::row(w), nullptr);
  double value = -gmm_logpdf(e.data.data(), gmm_e, k_s) - logdet[0];
  require(std::isfinite(value), errc::training,
          "loss_src: non-finite loss (|w| may be out of the flow's stable range)");
  return value;
}

// -log N(F(x, e) | mu_{k_p}, I) - logdet F
inline double loss_ptc(const ParamStore& store, const FlowStack& f, const GmmSpec& gmm_z,
                       const Vec& x, const Vec& e, std::size_t k_p) {
  Mat cond = Mat::row(e);
  auto [z, logdet] = f.forward(store, Mat::row(x), &cond);
  double value = -gmm_logpdf(z.data.data(), gmm_z, k_p) - logdet[0];
  require(std::isfinite(value), errc::training, "loss_ptc: non-finite loss");
  return value;
}

// | cos(x - mu_x, z - mu_z) - beta |, zero when either vector degenerates
inline double loss_angular(const Vec& x, const Vec& z, const Vec& mu_x, const Vec& mu_z,
                           double beta) {
  require(x.size() == mu_x.size() && z.size() == mu_z.size() && x.size() == z.size(),
          errc::input, "loss_angular: dimension mismatch");
  double dot = 0.0, no = 0.0, nl = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    double vo = x[j] - mu_x[j];
    double vl = z[j] - mu_z[j];
    dot += vo * vl;
    no += vo * vo;
    nl += vl * vl;
  }
  no = std::sqrt(no);
  nl = std::sqrt(nl);
  if (no <= 1e-12 || nl <= 1e-12) return 0.0;
  return std::abs(dot / (no * nl) - beta);
}

// per-group centroids of rows of pts; groups indexed by assignment
inline Mat group_centroids(const Mat& pts, const std::vector<int>& assign, std::size_t groups) {
  Mat mu(groups, pts.cols, 0.0);
  std::vector<std::size_t> count(groups, 0);
  for (std::size_t i = 0; i < pts.rows; ++i) {
    std::size_t k = std::size_t(assign[i]);
    ++count[k];
    for (std::size_t j = 0; j < pts.cols; ++j) mu(k, j) += pts(i, j);
  }
  for (std::size_t k = 0; k < groups; ++k)
    if (count[k] > 0)
      for (std::size_t j = 0; j < pts.cols; ++j) mu(k, j) /= double(count[k]);
  return mu;
}

struct LossNodes {
  Tape::Id total, l_s, l_p, l_as;
};

namespace detail {

inline std::vector<int> training_assignments(const ModelBundle& b, const PointCloud& cloud) {
  std::vector<int> assign(cloud.size());
  if (b.cfg.task == Task::segmentation) {
    require(cloud.has_parts(), errc::input,
            "train: segmentation needs per-point part labels (" + cloud.id + ")");
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      int k = cloud.part_labels[i];
      require(k >= 0 && std::size_t(k) < b.cfg.K_z, errc::input,
              "train: part label out of range in " + cloud.id);
      assign[i] = k;
    }
  } else {
    require(cloud.shape_label >= 0, errc::input, "train: unlabeled cloud " + cloud.id);
    require(std::size_t(cloud.shape_label) < b.cfg.K_z, errc::input,
            "train: shape label out of range in " + cloud.id);
    std::fill(assign.begin(), assign.end(), cloud.shape_label);
  }
  return assign;
}

}  // namespace detail

// Builds the full per-cloud objective on the tape:
//   lambda_s * L_s + lambda_p * mean_i L_p + lambda_as * mean_i L_as
// Per-point sums become means so the gradient scale is independent of n.
inline LossNodes build_cloud_loss(Tape& t, const ModelBundle& b, const PointCloud& cloud,
                                  const BetaAssignment& betas, const TrainConfig& cfg) {
  require(cloud.size() >= 1, errc::input, "train: empty cloud " + cloud.id);
  require(cloud.shape_label >= 0 && std::size_t(cloud.shape_label) < b.cfg.K, errc::input,
          "train: cloud " + cloud.id + " needs a shape label in range");
  const std::size_t n = cloud.size();
  const std::vector<int> assign = detail::training_assignments(b, cloud);

  Tape::Id x = t.input(cloud.points);
  Tape::Id w = b.h.forward(t, x);
  CouplingLayer::TapeOut ge = b.g.forward(t, w, std::nullopt);

  // L_s: shape latent against its class mean
  Mat mu_e(1, b.cfg.m);
  for (std::size_t j = 0; j < b.cfg.m; ++j)
    mu_e(0, j) = b.gmm_e.means(std::size_t(cloud.shape_label), j);
  Tape::Id de = t.sub(ge.y, t.constant(mu_e));
  Tape::Id l_s = t.sub(t.offset(t.scale(t.sum_all(t.mul(de, de)), 0.5),
                                0.5 * double(b.cfg.m) * kLog2Pi),
                       t.sum_all(ge.logdet_rows));

  CouplingLayer::TapeOut fz = b.f.forward(t, x, ge.y);

  // L_p: each latent point against its assigned component mean
  Mat mu_rows(n, 3);
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) mu_rows(i, j) = b.gmm_z.means(std::size_t(assign[i]), j);
  Tape::Id dz = t.sub(fz.y, t.constant(mu_rows));
  Tape::Id lp_rows = t.sub(t.offset(t.scale(t.row_sum(t.mul(dz, dz)), 0.5), 1.5 * kLog2Pi),
                           fz.logdet_rows);
  Tape::Id l_p = t.mean_all(lp_rows);

  // L_as: cosine between offsets from the original part centroid and from the
  // assigned latent mean, pushed toward the fixed per-point target beta
  Mat centroids = group_centroids(cloud.points, assign, b.cfg.K_z);
  Mat vo(n, 3);
  Mat no_rows(n, 1), beta_rows(n, 1), mask(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double norm2 = 0.0;
    for (int j = 0; j < 3; ++j) {
      vo(i, j) = cloud.points(i, j) - centroids(std::size_t(assign[i]), j);
      norm2 += vo(i, j) * vo(i, j);
    }
    no_rows(i, 0) = std::max(std::sqrt(norm2), 1e-12);
    beta_rows(i, 0) = betas.beta(cloud.id, i);
    mask(i, 0) = norm2 > 1e-24 ? 1.0 : 0.0;
  }
  Tape::Id vl = t.sub(fz.y, t.constant(mu_rows));
  // the tape is eager, so the latent values are already known: fold the
  // degenerate-V_l rows into the same mask
  {
    const Mat& vl_val = t.val(vl);
    for (std::size_t i = 0; i < n; ++i) {
      double norm2 = 0.0;
      for (int j = 0; j < 3; ++j) norm2 += vl_val(i, j) * vl_val(i, j);
      if (norm2 <= 1e-24) mask(i, 0) = 0.0;
    }
  }
  Tape::Id num = t.row_sum(t.mul(t.constant(vo), vl));
  Tape::Id nl = t.sqrt_(t.clamp_min(t.row_sum(t.mul(vl, vl)), 1e-24));
  Tape::Id cosine = t.div(num, t.mul(t.constant(no_rows), nl));
  Tape::Id dev = t.abs_(t.sub(cosine, t.constant(beta_rows)));
  Tape::Id l_as = t.mean_all(t.mul(dev, t.constant(mask)));

  LossNodes out;
  out.l_s = l_s;
  out.l_p = l_p;
  out.l_as = l_as;
  out.total = t.add(t.scale(l_s, cfg.lambda_s),
                    t.add(t.scale(l_p, cfg.lambda_p), t.scale(l_as, cfg.lambda_as)));
  return out;
}

struct LossBreakdown {
  double l_s = 0.0, l_p = 0.0, l_as = 0.0, total = 0.0;
};

inline LossBreakdown total_loss(const ModelBundle& b, const PointCloud& cloud,
                                const BetaAssignment& betas, const TrainConfig& cfg) {
  Tape t(&b.store);
  LossNodes nodes = build_cloud_loss(t, b, cloud, betas, cfg);
  LossBreakdown out;
  out.l_s = t.val(nodes.l_s)(0, 0);
  out.l_p = t.val(nodes.l_p)(0, 0);
  out.l_as = t.val(nodes.l_as)(0, 0);
  out.total = t.val(nodes.total)(0, 0);
  return out;
}

// ---------------------------------------------------------------- loop

struct TraceRow {
  std::size_t epoch;
  double l_s, l_p, l_as, total;
};

struct TrainResult {
  ModelBundle bundle;
  std::vector<TraceRow> trace;
  bool diverged = false;
  std::size_t completed_epochs = 0;
};

namespace detail {

inline std::size_t infer_parts(const Dataset& data) {
  int hi = -1;
  for (const PointCloud& c : data.clouds)
    for (int k : c.part_labels) hi = std::max(hi, k);
  require(hi >= 0, errc::input, "train: segmentation dataset has no part labels");
  return std::size_t(hi) + 1;
}

inline void append_trace(const std::string& path, const TraceRow& row) {
  if (path.empty()) return;
  bool fresh = true;
  {
    std::ifstream probe(path);
    fresh = !probe.good() || probe.peek() == std::ifstream::traits_type::eof();
  }
  std::ofstream out(path, std::ios::app);
  require(out.good(), errc::io, "cannot append loss trace to " + path);
  if (fresh) out << "epoch,L_s,L_p,L_as,total\n";
  out << std::setprecision(10) << row.epoch << ',' << row.l_s << ',' << row.l_p << ','
      << row.l_as << ',' << row.total << '\n';
}

}  // namespace detail

inline TrainResult train(const Dataset& data, Task task, const TrainConfig& cfg) {
  validate(cfg);
  require(!data.train_idx.empty(), errc::input, "train: empty training split");
  require(!data.class_names.empty(), errc::input, "train: dataset lists no classes");

  ModelConfig mc;
  mc.task = task;
  mc.K = data.class_names.size();
  mc.K_z = task == Task::segmentation ? detail::infer_parts(data) : mc.K;
  mc.m = cfg.m;
  mc.hidden = cfg.hidden;
  mc.f_blocks = cfg.f_blocks;
  mc.faithful_single_coupling = cfg.faithful_single_coupling;
  mc.mean_radius = cfg.mean_radius;
  mc.mean_candidates = cfg.mean_candidates;
  mc.seed = cfg.seed;

  TrainResult result;
  result.bundle = ModelBundle::create(mc);
  ModelBundle& b = result.bundle;
  b.randomize();

  Adam::Config oc;
  oc.lr = cfg.lr;
  Adam opt(b.store.size(), oc);
  BetaAssignment betas{derive_seed(cfg.seed, 302)};
  Rng shuffle_rng(derive_seed(cfg.seed, 301));

  Vec checkpoint = b.store.values;  // last epoch known good
  std::vector<std::size_t> order = data.train_idx;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[std::size_t(shuffle_rng.uniform() * double(i))]);

    TraceRow row{epoch, 0.0, 0.0, 0.0, 0.0};
    std::size_t clouds_seen = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_clouds) {
      std::size_t stop = std::min(order.size(), start + cfg.batch_clouds);
      Vec grad(b.store.size(), 0.0);
      bool bad = false;
      for (std::size_t i = start; i < stop && !bad; ++i) {
        const PointCloud& cloud = data.clouds[order[i]];
        try {
          Tape t(&b.store);
          LossNodes nodes = build_cloud_loss(t, b, cloud, betas, cfg);
          double total = t.val(nodes.total)(0, 0);
          if (!std::isfinite(total) || total > cfg.divergence_threshold) {
            bad = true;
            break;
          }
          t.backward(nodes.total);
          const Vec& g = t.param_grad();
          for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += g[j];
          row.l_s += t.val(nodes.l_s)(0, 0);
          row.l_p += t.val(nodes.l_p)(0, 0);
          row.l_as += t.val(nodes.l_as)(0, 0);
          row.total += total;
          ++clouds_seen;
        } catch (const error& e) {
          if (e.code() != errc::training) throw;
          bad = true;
        }
      }
      if (bad) {
        b.store.values = checkpoint;  // roll back to the last good epoch
        result.diverged = true;
        result.completed_epochs = epoch - 1;
        return result;
      }
      double inv = 1.0 / double(stop - start);
      double norm2 = 0.0;
      for (double& v : grad) {
        v *= inv;
        norm2 += v * v;
      }
      double norm = std::sqrt(norm2);
      if (norm > cfg.grad_clip)
        for (double& v : grad) v *= cfg.grad_clip / norm;
      opt.step(b.store.values, grad);
    }

    row.l_s /= double(clouds_seen);
    row.l_p /= double(clouds_seen);
    row.l_as /= double(clouds_seen);
    row.total /= double(clouds_seen);
    result.trace.push_back(row);
    detail::append_trace(cfg.trace_path, row);
    checkpoint = b.store.values;
    result.completed_epochs = epoch;
  }
  return result;
}

// ---------------------------------------------------------------- analysis

// Per-point cosines between original and latent offsets, measured against
// empirical group centroids on both sides (placement-independent, unlike the
// training target which uses the fixed latent means).
struct CosineProfile {
  std::vector<double> cosines;        // every non-degenerate point
  std::vector<double> cloud_means;    // one entry per cloud
  double mean = 0.0;                  // signed mean over all points
  double lo = 0.0, hi = 0.0;
};

inline CosineProfile cosine_profile(const ModelBundle& b, const Dataset& data,
                                    const std::vector<std::size_t>& idx) {
  CosineProfile out;
  out.lo = 1.0;
  out.hi = -1.0;
  for (std::size_t ci : idx) {
    const PointCloud& cloud = data.clouds[ci];
    LatentCloud latent = b.project(cloud);
    std::vector<int> assign = detail::training_assignments(b, cloud);
    Mat mu_x = group_centroids(cloud.points, assign, b.cfg.K_z);
    Mat mu_z = group_centroids(latent.z, assign, b.cfg.K_z);
    double cloud_sum = 0.0;
    std::size_t cloud_n = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      std::size_t k = std::size_t(assign[i]);
      double dot = 0.0, no = 0.0, nl = 0.0;
      for (int j = 0; j < 3; ++j) {
        double vo = cloud.points(i, j) - mu_x(k, j);
        double vl = latent.z(i, j) - mu_z(k, j);
        dot += vo * vl;
        no += vo * vo;
        nl += vl * vl;
      }
      if (no <= 1e-24 || nl <= 1e-24) continue;
      double c = dot / (std::sqrt(no) * std::sqrt(nl));
      out.cosines.push_back(c);
      out.lo = std::min(out.lo, c);
      out.hi = std::max(out.hi, c);
      cloud_sum += c;
      ++cloud_n;
    }
    if (cloud_n > 0) out.cloud_means.push_back(cloud_sum / double(cloud_n));
  }
  if (!out.cosines.empty()) {
    double s = 0.0;
    for (double c : out.cosines) s += c;
    out.mean = s / double(out.cosines.size());
  }
  return out;
}

}  // namespace pointveil
