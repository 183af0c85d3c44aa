#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <string>
#include <vector>

#include "pointveil/common.hpp"
#include "pointveil/mat.hpp"

namespace pointveil {

inline constexpr std::size_t kEmdExactCap = 512;

namespace detail {

inline double squared_dist_rows(const Mat& a, std::size_t i, const Mat& b, std::size_t j) {
  double d2 = 0.0;
  for (std::size_t c = 0; c < a.cols; ++c) {
    double d = a(i, c) - b(j, c);
    d2 += d * d;
  }
  return d2;
}

}  // namespace detail

// symmetric squared Chamfer: mean nearest-neighbor squared distance, both ways
inline double chamfer(const Mat& a, const Mat& b) {
  require(a.rows >= 1 && b.rows >= 1, errc::input, "chamfer: empty cloud");
  require(a.cols == b.cols, errc::input, "chamfer: dimension mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b.rows; ++j)
      best = std::min(best, detail::squared_dist_rows(a, i, b, j));
    total += best / double(a.rows);
  }
  for (std::size_t j = 0; j < b.rows; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < a.rows; ++i)
      best = std::min(best, detail::squared_dist_rows(a, i, b, j));
    total += best / double(b.rows);
  }
  return total;
}

namespace detail {

// O(n^3) optimal assignment via shortest augmenting paths with potentials
inline double solve_assignment(const Mat& cost) {
  const std::size_t n = cost.rows;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      std::size_t i0 = p[j0], j1 = 0;
      double delta = inf;
      for (std::size_t j = 1; j <= n; ++j)
        if (!used[j]) {
          double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (std::size_t j = 1; j <= n; ++j) total += cost(p[j] - 1, j - 1);
  return total;
}

}  // namespace detail

// (1/n) * minimum-over-bijections sum of Euclidean distances
inline double emd_exact(const Mat& a, const Mat& b) {
  require(a.rows >= 1 && b.rows >= 1, errc::input, "emd_exact: empty cloud");
  require(a.cols == b.cols, errc::input, "emd_exact: dimension mismatch");
  require(a.rows == b.rows, errc::input,
          "emd_exact: clouds must be the same size (use emd_entropic for unequal sizes)");
  require(a.rows <= kEmdExactCap, errc::input,
          "emd_exact: cloud exceeds " + std::to_string(kEmdExactCap) +
              " points (use emd_entropic)");
  Mat cost(a.rows, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.rows; ++j)
      cost(i, j) = std::sqrt(detail::squared_dist_rows(a, i, b, j));
  return detail::solve_assignment(cost) / double(a.rows);
}

struct EntropicResult {
  double value = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
};

// Entropically regularized transport cost (uniform marginals, log-domain
// alternating scaling). Reports the plan's linear cost, which approaches the
// exact EMD from above as reg -> 0.
inline EntropicResult emd_entropic(const Mat& a, const Mat& b, double reg = 0.01,
                                   std::size_t iters = 1000) {
  require(a.rows >= 1 && b.rows >= 1, errc::input, "emd_entropic: empty cloud");
  require(a.cols == b.cols, errc::input, "emd_entropic: dimension mismatch");
  require(reg > 0.0, errc::config, "emd_entropic: reg must be > 0");
  const std::size_t n = a.rows, m = b.rows;
  Mat cost(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      cost(i, j) = std::sqrt(detail::squared_dist_rows(a, i, b, j));

  const double la = -std::log(double(n));  // log of uniform marginals
  const double lb = -std::log(double(m));
  Vec f(n, 0.0), g(m, 0.0);
  auto lse_row = [&](std::size_t i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) hi = std::max(hi, g[j] - cost(i, j) / reg);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += std::exp(g[j] - cost(i, j) / reg - hi);
    return hi + std::log(s);
  };
  auto lse_col = [&](std::size_t j) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) hi = std::max(hi, f[i] - cost(i, j) / reg);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(f[i] - cost(i, j) / reg - hi);
    return hi + std::log(s);
  };

  EntropicResult out;
  const double tol = 1e-9;
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) f[i] = la - lse_row(i);
    for (std::size_t j = 0; j < m; ++j) g[j] = lb - lse_col(j);
    out.iterations = it + 1;
    // row-marginal violation; column marginals are exact right after the g update
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += std::exp(f[i] + g[j] - cost(i, j) / reg);
      worst = std::max(worst, std::abs(s - std::exp(la)));
    }
    if (worst < tol) {
      out.converged = true;
      break;
    }
  }
  double value = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      value += std::exp(f[i] + g[j] - cost(i, j) / reg) * cost(i, j);
  out.value = value;
  return out;
}

struct Accuracy {
  double overall = 0.0;
  double avg_class = 0.0;
};

// avg_class averages per-class recall over the classes actually present
inline Accuracy accuracy(const std::vector<int>& predictions, const std::vector<int>& labels,
                         std::size_t k) {
  require(!labels.empty(), errc::input, "accuracy: empty input");
  require(predictions.size() == labels.size(), errc::input,
          "accuracy: prediction/label length mismatch");
  std::vector<std::size_t> total(k, 0), correct(k, 0);
  std::size_t right = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int y = labels[i];
    require(y >= 0 && std::size_t(y) < k, errc::input, "accuracy: label out of range");
    ++total[std::size_t(y)];
    if (predictions[i] == y) {
      ++correct[std::size_t(y)];
      ++right;
    }
  }
  Accuracy out;
  out.overall = double(right) / double(labels.size());
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c)
    if (total[c] > 0) {
      sum += double(correct[c]) / double(total[c]);
      ++present;
    }
  out.avg_class = present > 0 ? sum / double(present) : 0.0;
  return out;
}

// ---------------------------------------------------------------- report

struct MetricReport {
  std::string name;
  double cd = 0.0;
  double emd = 0.0;
  std::string emd_method = "exact";
  double accuracy_overall = 0.0;
  double accuracy_avg_class = 0.0;
};

inline void write_reports(std::ostream& out, const std::vector<MetricReport>& rows) {
  out << "name,cd,emd,emd_method,accuracy_overall,accuracy_avg_class\n";
  for (const MetricReport& r : rows)
    out << r.name << ',' << std::setprecision(10) << r.cd << ',' << r.emd << ','
        << r.emd_method << ',' << r.accuracy_overall << ',' << r.accuracy_avg_class << '\n';
}

inline void write_reports(const std::string& path, const std::vector<MetricReport>& rows) {
  std::ofstream out(path);
  require(out.good(), errc::io, "cannot write metric report to " + path);
  write_reports(out, rows);
}

}  // namespace pointveil
