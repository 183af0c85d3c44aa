#pragma once

#include <cmath>
#include <iostream>

#include "pointveil/common.hpp"
#include "pointveil/mat.hpp"

namespace pointveil {

// Adaptive-moment SGD over the flat parameter vector.
class Adam {
public:
  struct Config {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(std::size_t n) : Adam(n, Config()) {}
  Adam(std::size_t n, Config cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  // Returns false (and leaves params untouched) when the gradient carries a
  // non-finite entry.
  bool step(Vec& params, const Vec& grad) {
    require(params.size() == m_.size() && grad.size() == m_.size(), errc::config,
            "Adam::step: size mismatch");
    for (double g : grad)
      if (!std::isfinite(g)) {
        std::cerr << "warning: non-finite gradient, optimizer step skipped\n";
        return false;
      }
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      double mhat = m_[i] / bc1;
      double vhat = v_[i] / bc2;
      params[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    return true;
  }

  long step_count() const { return t_; }

private:
  Config cfg_;
  Vec m_, v_;
  long t_ = 0;
};

}  // namespace pointveil
