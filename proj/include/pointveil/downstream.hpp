#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "pointveil/common.hpp"
#include "pointveil/crypto.hpp"
#include "pointveil/data.hpp"
#include "pointveil/encoder.hpp"
#include "pointveil/metrics.hpp"
#include "pointveil/model.hpp"
#include "pointveil/optimizer.hpp"
#include "pointveil/tape.hpp"

namespace pointveil {

struct ClassifierConfig {
  std::size_t hidden = 64;
  std::size_t epochs = 20;
  std::size_t batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

// Per-coordinate shift and a shared scale fitted on the training corpus.
// Protected coordinates live around the latent means (magnitude ~ mean radius),
// far outside tanh's linear range; both classifier families standardize.
struct Standardizer {
  double shift[3] = {0.0, 0.0, 0.0};
  double scale = 1.0;

  static Standardizer fit(const std::vector<const Mat*>& clouds) {
    Standardizer s;
    std::size_t total = 0;
    for (const Mat* m : clouds) total += m->rows;
    require(total > 0, errc::input, "standardizer: no points");
    for (const Mat* m : clouds)
      for (std::size_t i = 0; i < m->rows; ++i)
        for (int j = 0; j < 3; ++j) s.shift[j] += (*m)(i, j);
    for (int j = 0; j < 3; ++j) s.shift[j] /= double(total);
    double var = 0.0;
    for (const Mat* m : clouds)
      for (std::size_t i = 0; i < m->rows; ++i)
        for (int j = 0; j < 3; ++j) {
          double d = (*m)(i, j) - s.shift[j];
          var += d * d;
        }
    s.scale = std::max(std::sqrt(var / double(3 * total)), 1e-12);
    return s;
  }

  Mat apply(const Mat& pts) const {
    Mat out = pts;
    for (std::size_t i = 0; i < out.rows; ++i)
      for (int j = 0; j < 3; ++j) out(i, j) = (out(i, j) - shift[j]) / scale;
    return out;
  }
};

namespace detail {

// column means accumulated in sorted order, so any permutation of the rows
// produces bit-identical pooled features
inline Mat sorted_mean_rows(const Mat& x) {
  Mat out(1, x.cols);
  std::vector<double> col(x.rows);
  for (std::size_t j = 0; j < x.cols; ++j) {
    for (std::size_t i = 0; i < x.rows; ++i) col[i] = x(i, j);
    std::sort(col.begin(), col.end());
    double s = 0.0;
    for (double v : col) s += v;
    out(0, j) = s / double(x.rows);
  }
  return out;
}

}  // namespace detail

// Pointwise dense stack, mean-pool, linear head to K logits. Operates on
// protected clouds only; the original coordinates never reach this interface.
class ProtectedClassifier {
public:
  static ProtectedClassifier train(const std::vector<ProtectedCloud>& clouds,
                                   const std::vector<int>& labels, std::size_t k,
                                   const ClassifierConfig& cfg = ClassifierConfig()) {
    require(!clouds.empty(), errc::input, "classifier: empty training set");
    require(clouds.size() == labels.size(), errc::input,
            "classifier: cloud/label count mismatch");
    require(k >= 1, errc::config, "classifier: K must be >= 1");
    for (int y : labels)
      require(y >= 0 && std::size_t(y) < k, errc::input, "classifier: label out of range");

    ProtectedClassifier c;
    c.k_ = k;
    c.pw_ = DenseStack::create(c.store_, "cls.pw", {3, cfg.hidden, cfg.hidden}, false);
    c.head_ = DenseStack::create(c.store_, "cls.head", {cfg.hidden, k}, false);
    Rng rng(derive_seed(cfg.seed, 401));
    c.pw_.randomize(c.store_, rng);
    c.head_.randomize(c.store_, rng);

    std::vector<const Mat*> mats;
    for (const ProtectedCloud& p : clouds) mats.push_back(&p.z_hat);
    c.std_ = Standardizer::fit(mats);

    Adam::Config oc;
    oc.lr = cfg.lr;
    Adam opt(c.store_.size(), oc);
    Rng shuffle(derive_seed(cfg.seed, 402));
    std::vector<std::size_t> order(clouds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[std::size_t(shuffle.uniform() * double(i))]);
      for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
        std::size_t stop = std::min(order.size(), start + cfg.batch);
        Vec grad(c.store_.size(), 0.0);
        for (std::size_t i = start; i < stop; ++i) {
          const ProtectedCloud& cloud = clouds[order[i]];
          Tape t(&c.store_);
          Tape::Id x = t.input(c.std_.apply(cloud.z_hat));
          Tape::Id feats = t.tanh_(c.pw_.forward(t, x));
          Tape::Id logits = c.head_.forward(t, t.mean_rows(feats));
          Tape::Id loss = t.mean_all(t.softmax_ce_rows(logits, {labels[order[i]]}));
          t.backward(loss);
          const Vec& g = t.param_grad();
          for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += g[j];
        }
        for (double& v : grad) v /= double(stop - start);
        opt.step(c.store_.values, grad);
      }
    }
    return c;
  }

  Vec logits(const ProtectedCloud& cloud) const {
    require(cloud.size() >= 1, errc::input, "classifier: empty cloud");
    Mat feats = pw_.eval(store_, std_.apply(cloud.z_hat));
    for (double& v : feats.data) v = std::tanh(v);
    Mat logits = head_.eval(store_, detail::sorted_mean_rows(feats));
    return logits.data;
  }

  int predict(const ProtectedCloud& cloud) const {
    Vec l = logits(cloud);
    return int(std::max_element(l.begin(), l.end()) - l.begin());
  }

  std::size_t k() const { return k_; }

private:
  ParamStore store_;
  DenseStack pw_, head_;
  std::size_t k_ = 0;
  Standardizer std_;
};

// Per-point dense stack to K_z logits; every prediction depends on its own
// point only. Protected-cloud interface, like the classifier.
class PointSegmenter {
public:
  static PointSegmenter train(const std::vector<ProtectedCloud>& clouds,
                              const std::vector<std::vector<int>>& part_labels,
                              std::size_t k_z,
                              const ClassifierConfig& cfg = ClassifierConfig()) {
    require(!clouds.empty(), errc::input, "segmenter: empty training set");
    require(clouds.size() == part_labels.size(), errc::input,
            "segmenter: cloud/label count mismatch");
    require(k_z >= 1, errc::config, "segmenter: K_z must be >= 1");
    for (std::size_t i = 0; i < clouds.size(); ++i) {
      require(part_labels[i].size() == clouds[i].size(), errc::input,
              "segmenter: per-point label count mismatch");
      for (int y : part_labels[i])
        require(y >= 0 && std::size_t(y) < k_z, errc::input,
                "segmenter: part label out of range");
    }

    PointSegmenter s;
    s.k_z_ = k_z;
    s.net_ = DenseStack::create(s.store_, "seg.net", {3, cfg.hidden, k_z}, false);
    Rng rng(derive_seed(cfg.seed, 411));
    s.net_.randomize(s.store_, rng);

    std::vector<const Mat*> mats;
    for (const ProtectedCloud& p : clouds) mats.push_back(&p.z_hat);
    s.std_ = Standardizer::fit(mats);

    Adam::Config oc;
    oc.lr = cfg.lr;
    Adam opt(s.store_.size(), oc);
    Rng shuffle(derive_seed(cfg.seed, 412));
    std::vector<std::size_t> order(clouds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[std::size_t(shuffle.uniform() * double(i))]);
      for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
        std::size_t stop = std::min(order.size(), start + cfg.batch);
        Vec grad(s.store_.size(), 0.0);
        for (std::size_t i = start; i < stop; ++i) {
          const ProtectedCloud& cloud = clouds[order[i]];
          Tape t(&s.store_);
          Tape::Id x = t.input(s.std_.apply(cloud.z_hat));
          Tape::Id logits = s.net_.forward(t, x);
          Tape::Id loss = t.mean_all(t.softmax_ce_rows(logits, part_labels[order[i]]));
          t.backward(loss);
          const Vec& g = t.param_grad();
          for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += g[j];
        }
        for (double& v : grad) v /= double(stop - start);
        opt.step(s.store_.values, grad);
      }
    }
    return s;
  }

  std::vector<int> predict(const ProtectedCloud& cloud) const {
    require(cloud.size() >= 1, errc::input, "segmenter: empty cloud");
    Mat logits = net_.eval(store_, std_.apply(cloud.z_hat));
    std::vector<int> out(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k_z_; ++j)
        if (logits(i, j) > logits(i, best)) best = j;
      out[i] = int(best);
    }
    return out;
  }

  std::size_t k_z() const { return k_z_; }

private:
  ParamStore store_;
  DenseStack net_;
  std::size_t k_z_ = 0;
  Standardizer std_;
};

// The adversary: a permutation-invariant classifier trained on original
// (unprotected) clouds, later pointed at protected coordinates. Reuses the
// shape-encoder backbone with K output logits.
class AttackClassifier {
public:
  static AttackClassifier train(const Dataset& data,
                                const ClassifierConfig& cfg = ClassifierConfig()) {
    require(!data.train_idx.empty(), errc::input, "attack: empty training split");
    std::size_t k = data.class_names.size();
    require(k >= 1, errc::config, "attack: dataset lists no classes");

    AttackClassifier a;
    a.k_ = k;
    a.enc_ = ShapeEncoder::create(a.store_, "atk", k, cfg.hidden, 2 * cfg.hidden, cfg.hidden);
    Rng rng(derive_seed(cfg.seed, 421));
    a.enc_.randomize(a.store_, rng);

    std::vector<const Mat*> mats;
    for (std::size_t i : data.train_idx) mats.push_back(&data.clouds[i].points);
    a.std_ = Standardizer::fit(mats);

    Adam::Config oc;
    oc.lr = cfg.lr;
    Adam opt(a.store_.size(), oc);
    Rng shuffle(derive_seed(cfg.seed, 422));
    std::vector<std::size_t> order = data.train_idx;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[std::size_t(shuffle.uniform() * double(i))]);
      for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
        std::size_t stop = std::min(order.size(), start + cfg.batch);
        Vec grad(a.store_.size(), 0.0);
        for (std::size_t i = start; i < stop; ++i) {
          const PointCloud& cloud = data.clouds[order[i]];
          require(cloud.shape_label >= 0 && std::size_t(cloud.shape_label) < k, errc::input,
                  "attack: unlabeled training cloud " + cloud.id);
          Tape t(&a.store_);
          Tape::Id x = t.input(a.std_.apply(cloud.points));
          Tape::Id logits = a.enc_.forward(t, x);
          Tape::Id loss = t.mean_all(t.softmax_ce_rows(logits, {cloud.shape_label}));
          t.backward(loss);
          const Vec& g = t.param_grad();
          for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += g[j];
        }
        for (double& v : grad) v /= double(stop - start);
        opt.step(a.store_.values, grad);
      }
    }
    return a;
  }

  // works on any n x 3 coordinates: originals, or protected latents
  int predict(const Mat& pts) const {
    require(pts.rows >= 1, errc::input, "attack: empty cloud");
    Mat logits = enc_.eval(store_, std_.apply(pts));
    std::size_t best = 0;
    for (std::size_t j = 1; j < k_; ++j)
      if (logits(0, j) > logits(0, best)) best = j;
    return int(best);
  }

  std::size_t k() const { return k_; }

private:
  ParamStore store_;
  ShapeEncoder enc_;
  std::size_t k_ = 0;
  Standardizer std_;
};

inline Accuracy attack_eval(const AttackClassifier& attacker,
                            const std::vector<ProtectedCloud>& clouds,
                            const std::vector<int>& labels) {
  require(clouds.size() == labels.size(), errc::input,
          "attack_eval: cloud/label count mismatch");
  std::vector<int> preds(clouds.size());
  for (std::size_t i = 0; i < clouds.size(); ++i) preds[i] = attacker.predict(clouds[i].z_hat);
  return accuracy(preds, labels, attacker.k());
}

// CD between the original and the cloud recovered with each candidate key
inline std::vector<double> reconstruct_eval(const ModelBundle& bundle,
                                            const ProtectedCloud& protected_cloud,
                                            const PointCloud& original,
                                            const std::vector<RotationKey>& keys,
                                            const std::vector<int>& assignments = {}) {
  std::vector<double> out;
  out.reserve(keys.size());
  for (const RotationKey& key : keys) {
    LatentCloud latent = decrypt(protected_cloud, key, assignments);
    PointCloud rec = bundle.unproject(latent);
    out.push_back(chamfer(rec.points, original.points));
  }
  return out;
}

inline void write_confusion(std::ostream& out, const std::vector<int>& predictions,
                            const std::vector<int>& labels, std::size_t k) {
  require(predictions.size() == labels.size(), errc::input,
          "confusion: prediction/label count mismatch");
  std::vector<std::vector<std::size_t>> m(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && std::size_t(labels[i]) < k, errc::input,
            "confusion: label out of range");
    if (predictions[i] >= 0 && std::size_t(predictions[i]) < k)
      ++m[std::size_t(labels[i])][std::size_t(predictions[i])];
  }
  out << "label";
  for (std::size_t j = 0; j < k; ++j) out << ",pred_" << j;
  out << '\n';
  for (std::size_t i = 0; i < k; ++i) {
    out << i;
    for (std::size_t j = 0; j < k; ++j) out << ',' << m[i][j];
    out << '\n';
  }
}

}  // namespace pointveil
