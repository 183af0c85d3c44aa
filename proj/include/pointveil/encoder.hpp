#pragma once

#include <string>

#include "pointveil/common.hpp"
#include "pointveil/flow.hpp"
#include "pointveil/mat.hpp"
#include "pointveil/params.hpp"
#include "pointveil/tape.hpp"

namespace pointveil {

// Permutation-invariant shape encoder h: pointwise dense stack (tanh
// throughout), max-pool over points, dense head to the m-dim feature w.
class ShapeEncoder {
public:
  static ShapeEncoder create(ParamStore& store, const std::string& prefix, std::size_t m,
                             std::size_t pw1 = 64, std::size_t pw2 = 128,
                             std::size_t head_hidden = 64) {
    require(m >= 1, errc::config, "ShapeEncoder: m must be >= 1");
    ShapeEncoder e;
    e.m_ = m;
    e.pointwise_ = DenseStack::create(store, prefix + ".pw", {3, pw1, pw2}, false);
    e.head_ = DenseStack::create(store, prefix + ".head", {pw2, head_hidden, m}, false);
    return e;
  }

  void randomize(ParamStore& store, Rng& rng) const {
    pointwise_.randomize(store, rng);
    head_.randomize(store, rng);
  }

  // points n x 3 -> w 1 x m
  Tape::Id forward(Tape& t, Tape::Id points) const {
    require(t.val(points).rows >= 1, errc::input, "encode_shape: empty cloud");
    require(t.val(points).cols == 3, errc::config, "encode_shape: points must be n x 3");
    Tape::Id feat = t.tanh_(pointwise_.forward(t, points));  // bounded pre-pool features
    Tape::Id pooled = t.max_pool_rows(feat);
    return head_.forward(t, pooled);
  }

  Mat eval(const ParamStore& store, const Mat& points) const {
    require(points.rows >= 1, errc::input, "encode_shape: empty cloud");
    require(points.cols == 3, errc::config, "encode_shape: points must be n x 3");
    Mat feat = pointwise_.eval(store, points);
    for (double& v : feat.data) v = std::tanh(v);
    Mat pooled(1, feat.cols);
    for (std::size_t j = 0; j < feat.cols; ++j) {
      double best = feat(0, j);
      for (std::size_t i = 1; i < feat.rows; ++i) best = std::max(best, feat(i, j));
      pooled(0, j) = best;
    }
    return head_.eval(store, pooled);
  }

  std::size_t m() const { return m_; }
  std::size_t param_count() const { return pointwise_.param_count() + head_.param_count(); }

private:
  std::size_t m_ = 0;
  DenseStack pointwise_, head_;
};

}  // namespace pointveil
