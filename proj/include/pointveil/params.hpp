#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pointveil/common.hpp"
#include "pointveil/mat.hpp"

namespace pointveil {

// All learnable parameters of a model live in one flat array. Layers hold
// segment descriptors into it, which keeps the optimizer, gradient checks
// and serialization trivial (one contiguous f64 block).
class ParamStore {
public:
  struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t size() const { return rows * cols; }
  };

  Segment alloc(const std::string& name, std::size_t rows, std::size_t cols) {
    Segment seg{name, values.size(), rows, cols};
    values.resize(values.size() + rows * cols, 0.0);
    segments.push_back(seg);
    return seg;
  }

  std::size_t size() const { return values.size(); }

  Mat get(const Segment& seg) const {
    Mat m(seg.rows, seg.cols);
    for (std::size_t i = 0; i < seg.size(); ++i) m.data[i] = values[seg.offset + i];
    return m;
  }

  void set(const Segment& seg, const Mat& m) {
    require(m.rows == seg.rows && m.cols == seg.cols, errc::config,
            "ParamStore::set: shape mismatch for " + seg.name);
    for (std::size_t i = 0; i < seg.size(); ++i) values[seg.offset + i] = m.data[i];
  }

  Vec values;
  std::vector<Segment> segments;
};

}  // namespace pointveil
