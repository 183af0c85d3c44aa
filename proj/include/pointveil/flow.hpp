#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pointveil/common.hpp"
#include "pointveil/mat.hpp"
#include "pointveil/params.hpp"
#include "pointveil/rng.hpp"
#include "pointveil/tape.hpp"

namespace pointveil {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// ---------------------------------------------------------------- GmmSpec

// Mixture of K identity-covariance Gaussians with fixed means.
struct GmmSpec {
  std::size_t K = 0;
  std::size_t dim = 0;
  Mat means;  // K x dim

  const double* mean(std::size_t k) const { return means.data.data() + k * dim; }

  double min_pairwise_distance() const {
    if (K < 2) return std::numeric_limits<double>::infinity();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < K; ++a)
      for (std::size_t b = a + 1; b < K; ++b) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          double d = means(a, j) - means(b, j);
          d2 += d * d;
        }
        best = std::min(best, std::sqrt(d2));
      }
    return best;
  }

  std::size_t nearest(const double* z) const {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        double d = z[j] - means(k, j);
        d2 += d * d;
      }
      if (d2 < bd) {
        bd = d2;
        best = k;
      }
    }
    return best;
  }
};

// log N(z | mu_k, I)
inline double gmm_logpdf(const double* z, const GmmSpec& gmm, std::size_t component) {
  require(component < gmm.K, errc::input, "gmm_logpdf: component out of range");
  double q = 0.0;
  const double* mu = gmm.mean(component);
  for (std::size_t j = 0; j < gmm.dim; ++j) {
    double d = z[j] - mu[j];
    q += d * d;
  }
  return -0.5 * double(gmm.dim) * kLog2Pi - 0.5 * q;
}

inline double gmm_logpdf(const Vec& z, const GmmSpec& gmm, std::size_t component) {
  require(z.size() == gmm.dim, errc::config, "gmm_logpdf: dimension mismatch");
  return gmm_logpdf(z.data(), gmm, component);
}

// Best-of-candidates mean placement: draws `candidates` mean sets from
// N(0, radius^2 I) and keeps the one with the largest minimum pairwise
// distance.
inline GmmSpec gmm_means_init(std::size_t K, std::size_t dim, double radius,
                              std::size_t candidates, std::uint64_t seed) {
  require(K >= 1 && dim >= 1, errc::config, "gmm_means_init: K and dim must be >= 1");
  require(radius > 0.0, errc::config, "gmm_means_init: radius must be positive");
  require(candidates >= 1, errc::config, "gmm_means_init: need at least one candidate");
  Rng rng(seed);
  GmmSpec best;
  double best_score = -1.0;
  for (std::size_t c = 0; c < candidates; ++c) {
    GmmSpec cand{K, dim, Mat(K, dim)};
    for (double& v : cand.means.data) v = radius * rng.gaussian();
    double score = cand.min_pairwise_distance();
    if (score > best_score) {
      best_score = score;
      best = std::move(cand);
    }
  }
  return best;
}

// ---------------------------------------------------------------- DenseStack

// A stack of dense layers (tanh hidden, identity output) whose parameters
// live in a ParamStore. Output layers of flow nets are zero-initialized so
// the flow starts as the identity.
class DenseStack {
public:
  struct Layer {
    ParamStore::Segment w;  // out x in
    ParamStore::Segment b;  // 1 x out
    Activation act = Activation::identity;
  };

  static DenseStack create(ParamStore& store, const std::string& prefix,
                           const std::vector<std::size_t>& dims, bool zero_final) {
    require(dims.size() >= 2, errc::config, "DenseStack: need at least one layer");
    DenseStack s;
    s.zero_final_ = zero_final;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      bool last = l + 2 == dims.size();
      Layer layer;
      layer.w = store.alloc(prefix + ".w" + std::to_string(l), dims[l + 1], dims[l]);
      layer.b = store.alloc(prefix + ".b" + std::to_string(l), 1, dims[l + 1]);
      layer.act = last ? Activation::identity : Activation::tanh;
      s.layers_.push_back(layer);
    }
    return s;
  }

  void randomize(ParamStore& store, Rng& rng) const {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      bool last = l + 1 == layers_.size();
      const Layer& layer = layers_[l];
      Mat w(layer.w.rows, layer.w.cols);
      if (!(last && zero_final_)) {
        double s = 1.0 / std::sqrt(double(layer.w.cols));
        for (double& v : w.data) v = s * rng.gaussian();
      }
      store.set(layer.w, w);
      store.set(layer.b, Mat(1, layer.b.cols));
    }
  }

  Tape::Id forward(Tape& t, Tape::Id x) const {
    Tape::Id h = x;
    for (const Layer& layer : layers_)
      h = t.dense_forward(h, t.param(layer.w), t.param(layer.b), layer.act);
    return h;
  }

  Mat eval(const ParamStore& store, const Mat& x) const {
    Mat h = x;
    for (const Layer& layer : layers_) {
      Mat w = store.get(layer.w);
      Mat b = store.get(layer.b);
      Mat y = matmul_nt(h, w);
      for (std::size_t i = 0; i < y.rows; ++i)
        for (std::size_t j = 0; j < y.cols; ++j) y(i, j) += b(0, j);
      if (layer.act == Activation::tanh)
        for (double& v : y.data) v = std::tanh(v);
      h = std::move(y);
    }
    return h;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers_) n += l.w.size() + l.b.size();
    return n;
  }

  const std::vector<Layer>& layers() const { return layers_; }

private:
  std::vector<Layer> layers_;
  bool zero_final_ = false;
};

// ---------------------------------------------------------------- coupling

// RealNVP-style affine coupling. Partition A (mask true) passes through;
// partition B is scaled by exp(s) and shifted by t, with s and t computed
// from (x_A, cond). s is bounded by a learnable factor through a final tanh
// so exp cannot overflow at initialization.
class CouplingLayer {
public:
  struct TapeOut {
    Tape::Id y;
    Tape::Id logdet_rows;  // n x 1
  };

  static CouplingLayer create(ParamStore& store, const std::string& prefix,
                              std::vector<bool> mask, std::size_t cond_dim,
                              std::size_t hidden) {
    CouplingLayer c;
    c.mask_ = std::move(mask);
    c.cond_dim_ = cond_dim;
    for (std::size_t j = 0; j < c.mask_.size(); ++j)
      (c.mask_[j] ? c.idx_a_ : c.idx_b_).push_back(j);
    require(!c.idx_a_.empty() && !c.idx_b_.empty(), errc::config,
            "coupling mask must keep and transform at least one coordinate each");
    std::size_t in = c.idx_a_.size() + cond_dim;
    std::size_t out = c.idx_b_.size();
    c.s_net_ = DenseStack::create(store, prefix + ".s", {in, hidden, hidden, out}, true);
    c.t_net_ = DenseStack::create(store, prefix + ".t", {in, hidden, hidden, out}, true);
    c.s_bound_ = store.alloc(prefix + ".sbound", 1, 1);
    c.name_ = prefix;
    return c;
  }

  void randomize(ParamStore& store, Rng& rng) const {
    s_net_.randomize(store, rng);
    t_net_.randomize(store, rng);
    Mat bound(1, 1);
    bound(0, 0) = kDefaultScaleBound;
    store.set(s_bound_, bound);
  }

  TapeOut forward(Tape& t, Tape::Id x, std::optional<Tape::Id> cond) const {
    check_cond(cond.has_value());
    const std::size_t n = t.val(x).rows;
    Tape::Id xa = t.select_cols(x, idx_a_);
    Tape::Id xb = t.select_cols(x, idx_b_);
    Tape::Id in = xa;
    if (cond) {
      Tape::Id c = *cond;
      if (t.val(c).rows == 1 && n > 1) c = t.broadcast_rows(c, n);
      in = t.concat_cols(xa, c);
    }
    Tape::Id s = t.scale_by(t.tanh_(s_net_.forward(t, in)), t.param(s_bound_));
    Tape::Id shift = t_net_.forward(t, in);
    Tape::Id es = t.exp_(s);
    require(t.val(es).all_finite(), errc::training,
            "coupling " + name_ + ": exp(s) overflowed; scale bound = " +
                std::to_string(t.val(t.param(s_bound_))(0, 0)));
    Tape::Id yb = t.add(t.mul(xb, es), shift);
    TapeOut out;
    out.y = t.merge_cols(xa, idx_a_, yb, idx_b_);
    out.logdet_rows = t.row_sum(s);
    return out;
  }

  // value-mode forward; logdet returned per row
  std::pair<Mat, Vec> forward(const ParamStore& store, const Mat& x, const Mat* cond) const {
    check_cond(cond != nullptr);
    Mat s, shift;
    nets(store, gather(x, idx_a_), cond, s, shift);
    Mat y = x;
    Vec logdet(x.rows, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t j = 0; j < idx_b_.size(); ++j) {
        double sv = s(i, j);
        double scale = std::exp(sv);
        require(std::isfinite(scale), errc::training,
                "coupling " + name_ + ": exp(s) overflowed; scale bound = " +
                    std::to_string(store.values[s_bound_.offset]));
        y(i, idx_b_[j]) = x(i, idx_b_[j]) * scale + shift(i, j);
        logdet[i] += sv;
      }
    return {std::move(y), std::move(logdet)};
  }

  Mat inverse(const ParamStore& store, const Mat& y, const Mat* cond) const {
    check_cond(cond != nullptr);
    Mat s, shift;
    nets(store, gather(y, idx_a_), cond, s, shift);
    Mat x = y;
    for (std::size_t i = 0; i < y.rows; ++i)
      for (std::size_t j = 0; j < idx_b_.size(); ++j)
        x(i, idx_b_[j]) = (y(i, idx_b_[j]) - shift(i, j)) * std::exp(-s(i, j));
    return x;
  }

  std::size_t dim() const { return mask_.size(); }
  std::size_t cond_dim() const { return cond_dim_; }
  const std::vector<bool>& mask() const { return mask_; }
  std::size_t param_count() const { return s_net_.param_count() + t_net_.param_count() + 1; }
  const DenseStack& s_net() const { return s_net_; }
  const DenseStack& t_net() const { return t_net_; }
  const ParamStore::Segment& s_bound() const { return s_bound_; }

  static constexpr double kDefaultScaleBound = 2.0;

private:
  void check_cond(bool have) const {
    require((cond_dim_ > 0) == have, errc::config,
            "coupling " + name_ + ": condition presence does not match cond_dim");
  }

  static Mat gather(const Mat& x, const std::vector<std::size_t>& idx) {
    Mat out(x.rows, idx.size());
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t j = 0; j < idx.size(); ++j) out(i, j) = x(i, idx[j]);
    return out;
  }

  void nets(const ParamStore& store, Mat xa, const Mat* cond, Mat& s, Mat& shift) const {
    Mat in = std::move(xa);
    if (cond_dim_ > 0) {
      Mat full(in.rows, in.cols + cond_dim_);
      for (std::size_t i = 0; i < in.rows; ++i) {
        for (std::size_t j = 0; j < in.cols; ++j) full(i, j) = in(i, j);
        const std::size_t crow = cond->rows == 1 ? 0 : i;
        for (std::size_t j = 0; j < cond_dim_; ++j) full(i, in.cols + j) = (*cond)(crow, j);
      }
      in = std::move(full);
    }
    double bound = store.values[s_bound_.offset];
    s = s_net_.eval(store, in);
    for (double& v : s.data) v = bound * std::tanh(v);
    shift = t_net_.eval(store, in);
  }

  std::vector<bool> mask_;
  std::vector<std::size_t> idx_a_, idx_b_;
  std::size_t cond_dim_ = 0;
  DenseStack s_net_, t_net_;
  ParamStore::Segment s_bound_;
  std::string name_;
};

// ---------------------------------------------------------------- FlowStack

// Composition of coupling layers with alternating complementary masks.
class FlowStack {
public:
  // default mask passes the first dim/2 coordinates (one coordinate for
  // dim 3, so a single coupling leaves exactly one axis untouched)
  static std::vector<bool> base_mask(std::size_t dim) {
    require(dim >= 2, errc::config, "coupling flows need dim >= 2");
    std::vector<bool> m(dim, false);
    for (std::size_t j = 0; j < std::max<std::size_t>(1, dim / 2); ++j) m[j] = true;
    return m;
  }

  static FlowStack create(ParamStore& store, const std::string& prefix, std::size_t dim,
                          std::size_t cond_dim, std::size_t n_couplings, std::size_t hidden) {
    FlowStack f;
    f.dim_ = dim;
    f.cond_dim_ = cond_dim;
    std::vector<bool> mask = base_mask(dim);
    for (std::size_t l = 0; l < n_couplings; ++l) {
      f.layers_.push_back(
          CouplingLayer::create(store, prefix + ".c" + std::to_string(l), mask, cond_dim, hidden));
      mask.flip();
    }
    return f;
  }

  void randomize(ParamStore& store, Rng& rng) const {
    for (const CouplingLayer& c : layers_) c.randomize(store, rng);
  }

  CouplingLayer::TapeOut forward(Tape& t, Tape::Id x, std::optional<Tape::Id> cond) const {
    Tape::Id h = x;
    Tape::Id logdet = t.constant(Mat(t.val(x).rows, 1));
    for (const CouplingLayer& c : layers_) {
      CouplingLayer::TapeOut out = c.forward(t, h, cond);
      h = out.y;
      logdet = t.add(logdet, out.logdet_rows);
    }
    return {h, logdet};
  }

  std::pair<Mat, Vec> forward(const ParamStore& store, const Mat& x, const Mat* cond) const {
    Mat h = x;
    Vec logdet(x.rows, 0.0);
    for (const CouplingLayer& c : layers_) {
      auto [y, ld] = c.forward(store, h, cond);
      h = std::move(y);
      for (std::size_t i = 0; i < logdet.size(); ++i) logdet[i] += ld[i];
    }
    return {std::move(h), std::move(logdet)};
  }

  Mat inverse(const ParamStore& store, const Mat& y, const Mat* cond) const {
    Mat h = y;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) h = it->inverse(store, h, cond);
    return h;
  }

  std::size_t dim() const { return dim_; }
  std::size_t cond_dim() const { return cond_dim_; }
  std::size_t depth() const { return layers_.size(); }
  const std::vector<CouplingLayer>& layers() const { return layers_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const CouplingLayer& c : layers_) n += c.param_count();
    return n;
  }

private:
  std::vector<CouplingLayer> layers_;
  std::size_t dim_ = 0;
  std::size_t cond_dim_ = 0;
};

}  // namespace pointveil
