#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "pointveil/common.hpp"
#include "pointveil/mat.hpp"
#include "pointveil/params.hpp"

namespace pointveil {

enum class Activation { identity, tanh };

// Reverse-mode tape over a fixed primitive set. Values are row-batched
// matrices (a 1xN value is a plain vector); forward evaluation is eager and
// each primitive records a closure that scatters its output gradient back to
// its operands. Parameter nodes accumulate into one flat gradient aligned
// with the ParamStore.
//
// A Tape is single-owner: one forward pass, one backward pass. Independent
// tapes may run concurrently.
class Tape {
public:
  using Id = std::int32_t;

  explicit Tape(const ParamStore* store = nullptr) : store_(store) {
    if (store_) param_grad_.assign(store_->size(), 0.0);
  }

  // ---- leaves ----

  // tracked leaf; backward produces a gradient readable via grad()
  Id input(Mat v) { return push(std::move(v), true, nullptr); }

  // untracked leaf (targets, masks, labels)
  Id constant(Mat v) { return push(std::move(v), false, nullptr); }

  Id param(const ParamStore::Segment& seg) {
    require(store_ != nullptr, errc::usage, "Tape::param: tape has no parameter store");
    std::size_t off = seg.offset;
    return push(store_->get(seg), true, [off](Tape& t, Id self) {
      const Mat& g = t.nodes_[std::size_t(self)].grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) t.param_grad_[off + i] += g.data[i];
    });
  }

  // ---- primitives ----

  // y = x * W^T + b, batched over rows of x. W is out x in; b is 1 x out.
  Id affine(Id x, Id w, Id b) {
    const Mat& xv = val(x);
    const Mat& wv = val(w);
    const Mat& bv = val(b);
    require(wv.cols == xv.cols, errc::config, "affine: weight cols != input length");
    require(bv.rows == 1 && bv.cols == wv.rows, errc::config, "affine: bias length != output length");
    Mat y = matmul_nt(xv, wv);
    for (std::size_t i = 0; i < y.rows; ++i)
      for (std::size_t j = 0; j < y.cols; ++j) y(i, j) += bv(0, j);
    return push(std::move(y), needs(x) || needs(w) || needs(b), [x, w, b](Tape& t, Id out) {
      const Mat& g = t.nodes_[std::size_t(out)].grad;
      if (t.needs(x)) t.accum(x, matmul(g, t.val(w)));
      if (t.needs(w)) t.accum(w, matmul_tn(g, t.val(x)));
      if (t.needs(b)) {
        Mat gb(1, g.cols);
        for (std::size_t i = 0; i < g.rows; ++i)
          for (std::size_t j = 0; j < g.cols; ++j) gb(0, j) += g(i, j);
        t.accum(b, std::move(gb));
      }
    });
  }

  Id tanh_(Id x) {
    Mat y = val(x);
    for (double& v : y.data) v = std::tanh(v);
    return unary(x, std::move(y), [](double yv, double) { return 1.0 - yv * yv; });
  }

  Id exp_(Id x) {
    Mat y = val(x);
    for (double& v : y.data) v = std::exp(v);
    return unary(x, std::move(y), [](double yv, double) { return yv; });
  }

  Id log_(Id x) {
    Mat y = val(x);
    for (double& v : y.data) v = std::log(v);
    return unary(x, std::move(y), [](double, double xv) { return 1.0 / xv; });
  }

  Id sqrt_(Id x) {
    Mat y = val(x);
    for (double& v : y.data) v = std::sqrt(v);
    return unary(x, std::move(y), [](double yv, double) { return yv > 0.0 ? 0.5 / yv : 0.0; });
  }

  Id abs_(Id x) {
    Mat y = val(x);
    for (double& v : y.data) v = std::fabs(v);
    return unary(x, std::move(y),
                 [](double, double xv) { return xv > 0.0 ? 1.0 : (xv < 0.0 ? -1.0 : 0.0); });
  }

  // elementwise max(x, c); subgradient 0 on the clamped side
  Id clamp_min(Id x, double c) {
    Mat y = val(x);
    for (double& v : y.data) v = std::max(v, c);
    return unary(x, std::move(y), [c](double, double xv) { return xv > c ? 1.0 : 0.0; });
  }

  Id add(Id a, Id b) { return binary(a, b, [](double x, double y) { return x + y; },
                                     [](double, double, double g, double& ga, double& gb) { ga += g; gb += g; }); }
  Id sub(Id a, Id b) { return binary(a, b, [](double x, double y) { return x - y; },
                                     [](double, double, double g, double& ga, double& gb) { ga += g; gb -= g; }); }
  Id mul(Id a, Id b) { return binary(a, b, [](double x, double y) { return x * y; },
                                     [](double x, double y, double g, double& ga, double& gb) { ga += g * y; gb += g * x; }); }
  Id div(Id a, Id b) { return binary(a, b, [](double x, double y) { return x / y; },
                                     [](double x, double y, double g, double& ga, double& gb) {
                                       ga += g / y;
                                       gb -= g * x / (y * y);
                                     }); }

  Id scale(Id x, double c) {
    Mat y = val(x);
    for (double& v : y.data) v *= c;
    return unary(x, std::move(y), [c](double, double) { return c; });
  }

  Id offset(Id x, double c) {
    Mat y = val(x);
    for (double& v : y.data) v += c;
    return unary(x, std::move(y), [](double, double) { return 1.0; });
  }

  // y = x * s with s a 1x1 node
  Id scale_by(Id x, Id s) {
    const Mat& xv = val(x);
    const Mat& sv = val(s);
    require(sv.rows == 1 && sv.cols == 1, errc::config, "scale_by: scale must be 1x1");
    Mat y = xv;
    for (double& v : y.data) v *= sv(0, 0);
    return push(std::move(y), needs(x) || needs(s), [x, s](Tape& t, Id out) {
      const Mat& g = t.nodes_[std::size_t(out)].grad;
      double sc = t.val(s)(0, 0);
      if (t.needs(x)) {
        Mat gx = g;
        for (double& v : gx.data) v *= sc;
        t.accum(x, std::move(gx));
      }
      if (t.needs(s)) {
        double acc = 0.0;
        const Mat& xv2 = t.val(x);
        for (std::size_t i = 0; i < g.data.size(); ++i) acc += g.data[i] * xv2.data[i];
        Mat gs(1, 1);
        gs(0, 0) = acc;
        t.accum(s, std::move(gs));
      }
    });
  }

  Id concat_cols(Id a, Id b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    require(av.rows == bv.rows, errc::config, "concat_cols: row counts differ");
    Mat y(av.rows, av.cols + bv.cols);
    for (std::size_t i = 0; i < av.rows; ++i) {
      for (std::size_t j = 0; j < av.cols; ++j) y(i, j) = av(i, j);
      for (std::size_t j = 0; j < bv.cols; ++j) y(i, av.cols + j) = bv(i, j);
    }
    std::size_t ac = av.cols;
    return push(std::move(y), needs(a) || needs(b), [a, b, ac](Tape& t, Id out) {
      const Mat& g = t.nodes_[std::size_t(out)].grad;
      if (t.needs(a)) {
        Mat ga(g.rows, ac);
        for (std::size_t i = 0; i < g.rows; ++i)
          for (std::size_t j = 0; j < ac; ++j) ga(i, j) = g(i, j);
        t.accum(a, std::move(ga));
      }
      if (t.needs(b)) {
        Mat gb(g.rows, g.cols - ac);
        for (std::size_t i = 0; i < g.rows; ++i)
          for (std::size_t j = ac; j < g.cols; ++j) gb(i, j - ac) = g(i, j);
        t.accum(b, std::move(gb));
      }
    });
  }

  Id select_cols(Id x, std::vector<std::size_t> idx) {
    const Mat& xv = val(x);
    for (std::size_t j : idx) require(j < xv.cols, errc::config, "select_cols: index out of range");
    Mat y(xv.rows, idx.size());
    for (std::size_t i = 0; i < xv.rows; ++i)
      for (std::size_t j = 0; j < idx.size(); ++j) y(i, j) = xv(i, idx[j]);
    return push(std::move(y), needs(x), [x, idx = std::move(idx)](Tape& t, Id out) {
      if (!t.needs(x)) return;
      const Mat& g = t.nodes_[std::size_t(out)].grad;
      Mat gx(t.val(x).rows, t.val(x).cols);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < idx.size(); ++j) gx(i, idx[j]) += g(i, j);
      t.accum(x, std::move(gx));
    });
  }

  // rebuilds a full-width matrix from two column subsets
  Id merge_cols(Id a, std::vector<std::size_t> ia, Id b, std::vector<std::size_t> ib) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    require(av.rows == bv.rows, errc::config, "merge_cols: row counts differ");
    require(av.cols == ia.size() && bv.cols == ib.size(), errc::config, "merge_cols: index sizes");
    Mat y(av.rows, ia.size() + ib.size());
    for (std::size_t i = 0; i < av.rows; ++i) {
      for (std::size_t j = 0; j < ia.size(); ++j) y(i, ia[j]) = av(i, j);
      for (std::size_t j = 0; j < ib.size(); ++j) y(i, ib[j]) = bv(i, j);
    }
    return push(std::move(y), needs(a) || needs(b),
                [a, b, ia = std::move(ia), ib = std::move(ib)](Tape& t, Id out) {
                  const Mat& g = t.nodes_[std::size_t(out)].grad;
                  if (t.needs(a)) {
                    Mat ga(g.rows, ia.size());
                    for (std::size_t i = 0; i < g.rows; ++i)
                      for (std::size_t j = 0; j < ia.size(); ++j) ga(i, j) = g(i, ia[j]);
                    t.accum(a, std::move(ga));
                  }
                  if (t.needs(b)) {
                    Mat gb(g.rows, ib.size());
                    for (std::size_t i = 0; i < g.rows; ++i)
                      for (std::size_t j = 0; j < ib.size(); ++j) gb(i, j) = g(i, ib[j]);
                    t.accum(b, std::move(gb));
                  }
                });
  }

  // same data, new dims; gradient passes through unchanged
  Id reshape(Id x, std::size_t rows, std::size_t cols) {
    const Mat& xv = val(x);
    require(rows * cols == xv.size(), errc::config, "reshape: element count mismatch");
    Mat y(rows, cols);
    y.data = xv.data;
    return push(std::move(y), needs(x), [x](Tape& t, Id out) {
      if (!t.needs(x)) return;
      const Mat& xv2 = t.val(x);
      Mat gx(xv2.rows, xv2.cols);
      gx.data = t.nodes_[std::size_t(out)].grad.data;
      t.accum(x, std::move(gx));
    });
  }

  Id broadcast_rows(Id x, std::size_t n) {
    const Mat& xv = val(x);
    require(xv.rows == 1, errc::config, "broadcast_rows: source must be a single row");
    Mat y(n, xv.cols);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < xv.cols; ++j) y(i, j) = xv(0, j);
    return push(std::move(y), needs(x), [x](Tape& t, Id out) {
      if (!t.needs(x)) return;
      const Mat& g = t.nodes_[std::size_t(out)].grad;
      Mat gx(1, g.cols);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) gx(0, j) += g(i, j);
      t.accum(x, std::move(gx));
    });
  }

  // n x d -> n x 1
  Id row_sum(Id x) {
    const Mat& xv = val(x);
    Mat y(xv.rows, 1);
    for (std::size_t i = 0; i < xv.rows; ++i)
      for (std::size_t j = 0; j < xv.cols; ++j) y(i, 0) += xv(i, j);
    return push(std::move(y), needs(x), [x](Tape& t, Id out) {
      if (!t.needs(x)) return;
      const Mat& g = t.nodes_[std::size_t(out)].grad;
      const Mat& xv2 = t.val(x);
      Mat gx(xv2.rows, xv2.cols);
      for (std::size_t i = 0; i < xv2.rows; ++i)
        for (std::size_t j = 0; j < xv2.cols; ++j) gx(i, j) = g(i, 0);
      t.accum(x, std::move(gx));
    });
  }

  // n x d -> 1 x d, mean over rows
  Id mean_rows(Id x) {
    const Mat& xv = val(x);
    Mat y(1, xv.cols);
    for (std::size_t i = 0; i < xv.rows; ++i)
      for (std::size_t j = 0; j < xv.cols; ++j) y(0, j) += xv(i, j);
    for (double& v : y.data) v /= double(xv.rows);
    return push(std::move(y), needs(x), [x](Tape& t, Id out) {
      if (!t.needs(x)) return;
      const Mat& g = t.nodes_[std::size_t(out)].grad;
      const Mat& xv2 = t.val(x);
      double inv = 1.0 / double(xv2.rows);
      Mat gx(xv2.rows, xv2.cols);
      for (std::size_t i = 0; i < xv2.rows; ++i)
        for (std::size_t j = 0; j < xv2.cols; ++j) gx(i, j) = g(0, j) * inv;
      t.accum(x, std::move(gx));
    });
  }

  Id sum_all(Id x) {
    const Mat& xv = val(x);
    Mat y(1, 1);
    for (double v : xv.data) y(0, 0) += v;
    return push(std::move(y), needs(x), [x](Tape& t, Id out) {
      if (!t.needs(x)) return;
      double g = t.nodes_[std::size_t(out)].grad(0, 0);
      const Mat& xv2 = t.val(x);
      Mat gx(xv2.rows, xv2.cols, g);
      t.accum(x, std::move(gx));
    });
  }

  Id mean_all(Id x) { return scale(sum_all(x), 1.0 / double(val(x).size())); }

  // column-wise max over rows; ties go to the lowest row index
  Id max_pool_rows(Id x) {
    const Mat& xv = val(x);
    require(xv.rows >= 1, errc::input, "max_pool_rows: empty input");
    Mat y(1, xv.cols);
    std::vector<std::size_t> arg(xv.cols, 0);
    for (std::size_t j = 0; j < xv.cols; ++j) {
      double best = xv(0, j);
      for (std::size_t i = 1; i < xv.rows; ++i)
        if (xv(i, j) > best) {
          best = xv(i, j);
          arg[j] = i;
        }
      y(0, j) = best;
    }
    return push(std::move(y), needs(x), [x, arg = std::move(arg)](Tape& t, Id out) {
      if (!t.needs(x)) return;
      const Mat& g = t.nodes_[std::size_t(out)].grad;
      const Mat& xv2 = t.val(x);
      Mat gx(xv2.rows, xv2.cols);
      for (std::size_t j = 0; j < xv2.cols; ++j) gx(arg[j], j) = g(0, j);
      t.accum(x, std::move(gx));
    });
  }

  // flattened inner product -> 1x1
  Id dot(Id a, Id b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    require(av.same_shape(bv), errc::config, "dot: shape mismatch");
    Mat y(1, 1);
    for (std::size_t i = 0; i < av.data.size(); ++i) y(0, 0) += av.data[i] * bv.data[i];
    return push(std::move(y), needs(a) || needs(b), [a, b](Tape& t, Id out) {
      double g = t.nodes_[std::size_t(out)].grad(0, 0);
      if (t.needs(a)) {
        Mat ga = t.val(b);
        for (double& v : ga.data) v *= g;
        t.accum(a, std::move(ga));
      }
      if (t.needs(b)) {
        Mat gb = t.val(a);
        for (double& v : gb.data) v *= g;
        t.accum(b, std::move(gb));
      }
    });
  }

  // Euclidean norm of the flattened value -> 1x1. Gradient is a/|a|; the
  // zero-norm subgradient is taken as 0 to keep backward finite.
  Id norm(Id a) {
    const Mat& av = val(a);
    double s = 0.0;
    for (double v : av.data) s += v * v;
    Mat y(1, 1);
    y(0, 0) = std::sqrt(s);
    return push(std::move(y), needs(a), [a](Tape& t, Id out) {
      if (!t.needs(a)) return;
      double g = t.nodes_[std::size_t(out)].grad(0, 0);
      double n = t.nodes_[std::size_t(out)].value(0, 0);
      if (n <= 0.0) return;
      Mat ga = t.val(a);
      for (double& v : ga.data) v *= g / n;
      t.accum(a, std::move(ga));
    });
  }

  // per-row softmax cross-entropy against integer labels -> n x 1
  Id softmax_ce_rows(Id logits, std::vector<int> labels) {
    const Mat& lv = val(logits);
    require(labels.size() == lv.rows, errc::config, "softmax_ce_rows: label count != rows");
    for (std::size_t i = 0; i < labels.size(); ++i)
      require(labels[i] >= 0 && std::size_t(labels[i]) < lv.cols, errc::input,
              "softmax_ce_rows: label out of range");
    Mat y(lv.rows, 1);
    for (std::size_t i = 0; i < lv.rows; ++i) {
      double m = lv(i, 0);
      for (std::size_t j = 1; j < lv.cols; ++j) m = std::max(m, lv(i, j));
      double z = 0.0;
      for (std::size_t j = 0; j < lv.cols; ++j) z += std::exp(lv(i, j) - m);
      y(i, 0) = m + std::log(z) - lv(i, std::size_t(labels[i]));
    }
    return push(std::move(y), needs(logits), [logits, labels = std::move(labels)](Tape& t, Id out) {
      if (!t.needs(logits)) return;
      const Mat& g = t.nodes_[std::size_t(out)].grad;
      const Mat& lv2 = t.val(logits);
      Mat gl(lv2.rows, lv2.cols);
      for (std::size_t i = 0; i < lv2.rows; ++i) {
        double m = lv2(i, 0);
        for (std::size_t j = 1; j < lv2.cols; ++j) m = std::max(m, lv2(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < lv2.cols; ++j) z += std::exp(lv2(i, j) - m);
        for (std::size_t j = 0; j < lv2.cols; ++j) {
          double p = std::exp(lv2(i, j) - m) / z;
          gl(i, j) = g(i, 0) * (p - (std::size_t(labels[i]) == j ? 1.0 : 0.0));
        }
      }
      t.accum(logits, std::move(gl));
    });
  }

  // convenience: the dense layer of the coupling and encoder stacks
  Id dense_forward(Id x, Id w, Id b, Activation act) {
    Id y = affine(x, w, b);
    return act == Activation::tanh ? tanh_(y) : y;
  }

  // ---- access / backward ----

  const Mat& val(Id id) const { return nodes_.at(std::size_t(id)).value; }

  // gradient of the last backward() w.r.t. an input node; zero if unused
  Mat grad(Id id) const {
    const Node& n = nodes_.at(std::size_t(id));
    if (n.grad.empty()) return Mat(n.value.rows, n.value.cols);
    return n.grad;
  }

  const Vec& param_grad() const { return param_grad_; }

  void backward(Id loss) {
    require(!nodes_.empty(), errc::usage, "backward before any forward pass");
    require(loss >= 0 && std::size_t(loss) < nodes_.size(), errc::usage, "backward: unknown node");
    const Mat& lv = nodes_[std::size_t(loss)].value;
    require(lv.rows == 1 && lv.cols == 1, errc::usage, "backward: loss must be scalar");
    for (Node& n : nodes_) n.grad = Mat();
    if (store_) param_grad_.assign(store_->size(), 0.0);
    Mat seed(1, 1);
    seed(0, 0) = 1.0;
    nodes_[std::size_t(loss)].grad = std::move(seed);
    for (Id i = loss; i >= 0; --i) {
      Node& n = nodes_[std::size_t(i)];
      if (n.grad.empty() || !n.back) continue;
      n.back(*this, i);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void(Tape&, Id)> back;
  };

  bool needs(Id id) const { return nodes_[std::size_t(id)].needs_grad; }

  void accum(Id id, Mat g) {
    Node& n = nodes_[std::size_t(id)];
    require(g.rows == n.value.rows && g.cols == n.value.cols, errc::config,
            "gradient shape mismatch");
    if (n.grad.empty()) {
      n.grad = std::move(g);
    } else {
      for (std::size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
    }
  }

  Id push(Mat v, bool needs_grad, std::function<void(Tape&, Id)> back) {
    nodes_.push_back(Node{std::move(v), Mat(), needs_grad, std::move(back)});
    return Id(nodes_.size() - 1);
  }

  template <typename DY>
  Id unary(Id x, Mat y, DY dy) {
    return push(std::move(y), needs(x), [x, dy](Tape& t, Id out) {
      if (!t.needs(x)) return;
      const Node& o = t.nodes_[std::size_t(out)];
      const Mat& xv = t.val(x);
      Mat gx(xv.rows, xv.cols);
      for (std::size_t i = 0; i < xv.data.size(); ++i)
        gx.data[i] = o.grad.data[i] * dy(o.value.data[i], xv.data[i]);
      t.accum(x, std::move(gx));
    });
  }

  template <typename F, typename B>
  Id binary(Id a, Id b, F f, B back) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    require(av.same_shape(bv), errc::config, "elementwise op: shape mismatch");
    Mat y(av.rows, av.cols);
    for (std::size_t i = 0; i < av.data.size(); ++i) y.data[i] = f(av.data[i], bv.data[i]);
    return push(std::move(y), needs(a) || needs(b), [a, b, back](Tape& t, Id out) {
      const Node& o = t.nodes_[std::size_t(out)];
      const Mat& av2 = t.val(a);
      const Mat& bv2 = t.val(b);
      Mat ga(av2.rows, av2.cols), gb(bv2.rows, bv2.cols);
      for (std::size_t i = 0; i < av2.data.size(); ++i)
        back(av2.data[i], bv2.data[i], o.grad.data[i], ga.data[i], gb.data[i]);
      if (t.needs(a)) t.accum(a, std::move(ga));
      if (t.needs(b)) t.accum(b, std::move(gb));
    });
  }

  const ParamStore* store_;
  std::vector<Node> nodes_;
  Vec param_grad_;
};

// ---- finite-difference gradient checking ----

// builds a scalar node from a single 1xN input node
using ScalarFn = std::function<Tape::Id(Tape&, Tape::Id)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  bool finite = true;  // false if f was non-finite at a probe point
};

// Central differences against the tape gradient. Error per coordinate is
// |analytic - numeric| / max(1, |analytic|). Pass a store when f routes
// through parameter nodes.
inline GradCheckResult grad_check(const ScalarFn& f, const Vec& point, double step,
                                  const ParamStore* store = nullptr) {
  GradCheckResult res;
  auto eval = [&](const Vec& p) {
    Tape t(store);
    Tape::Id x = t.input(Mat::row(p));
    Tape::Id loss = f(t, x);
    return t.val(loss)(0, 0);
  };
  Tape t(store);
  Tape::Id x = t.input(Mat::row(point));
  Tape::Id loss = f(t, x);
  double f0 = t.val(loss)(0, 0);
  if (!std::isfinite(f0)) return {std::numeric_limits<double>::infinity(), false};
  t.backward(loss);
  Mat analytic = t.grad(x);
  for (std::size_t i = 0; i < point.size(); ++i) {
    Vec p = point;
    p[i] = point[i] + step;
    double fp = eval(p);
    p[i] = point[i] - step;
    double fm = eval(p);
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      return {std::numeric_limits<double>::infinity(), false};
    }
    double numeric = (fp - fm) / (2.0 * step);
    double a = analytic(0, i);
    double err = std::fabs(a - numeric) / std::max(1.0, std::fabs(a));
    res.max_rel_err = std::max(res.max_rel_err, err);
  }
  return res;
}

}  // namespace pointveil
