#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pointveil/common.hpp"
#include "pointveil/mat.hpp"
#include "pointveil/rng.hpp"

namespace pointveil {

// ---------------------------------------------------------------- cloud

struct PointCloud {
  Mat points;                   // n x 3
  int shape_label = -1;
  std::vector<int> part_labels;  // empty, or one label per point
  bool normalized = false;
  // de-normalization record (original = normalized * scale + offset)
  double offset[3] = {0.0, 0.0, 0.0};
  double scale = 1.0;
  std::string id;

  std::size_t size() const { return points.rows; }
  bool has_parts() const { return !part_labels.empty(); }
};

inline void centroid_of(const Mat& pts, double out[3]) {
  out[0] = out[1] = out[2] = 0.0;
  for (std::size_t i = 0; i < pts.rows; ++i)
    for (int j = 0; j < 3; ++j) out[j] += pts(i, j);
  for (int j = 0; j < 3; ++j) out[j] /= double(pts.rows);
}

inline double max_radius_of(const Mat& pts) {
  double r2 = 0.0;
  for (std::size_t i = 0; i < pts.rows; ++i) {
    double d2 = 0.0;
    for (int j = 0; j < 3; ++j) d2 += pts(i, j) * pts(i, j);
    r2 = std::max(r2, d2);
  }
  return std::sqrt(r2);
}

// centroid to the origin, max radius to 1; the offset/scale record lets
// callers map results back into the source frame
inline PointCloud normalize(const PointCloud& cloud) {
  require(cloud.size() >= 1, errc::input, "normalize: empty cloud");
  PointCloud out = cloud;
  double c[3];
  centroid_of(cloud.points, c);
  for (std::size_t i = 0; i < out.points.rows; ++i)
    for (int j = 0; j < 3; ++j) out.points(i, j) -= c[j];
  double r = max_radius_of(out.points);
  require(r > 1e-12, errc::input, "normalize: degenerate cloud (all points coincide)");
  for (double& v : out.points.data) v /= r;
  for (int j = 0; j < 3; ++j) out.offset[j] = cloud.offset[j] + cloud.scale * c[j];
  out.scale = cloud.scale * r;
  out.normalized = true;
  return out;
}

// ---------------------------------------------------------------- fps

// greedy max-min selection; ties go to the lowest index
inline std::vector<std::size_t> farthest_point_sample(const Mat& pts, std::size_t n,
                                                      std::size_t start = 0) {
  require(pts.rows >= 1, errc::input, "farthest_point_sample: empty input");
  require(n <= pts.rows, errc::input, "farthest_point_sample: asked for more points than available");
  require(start < pts.rows, errc::input, "farthest_point_sample: start index out of range");
  std::vector<std::size_t> picked;
  picked.reserve(n);
  std::vector<double> dist(pts.rows, std::numeric_limits<double>::infinity());
  std::size_t current = start;
  for (std::size_t step = 0; step < n; ++step) {
    picked.push_back(current);
    for (std::size_t i = 0; i < pts.rows; ++i) {
      double d2 = 0.0;
      for (int j = 0; j < 3; ++j) {
        double d = pts(i, j) - pts(current, j);
        d2 += d * d;
      }
      dist[i] = std::min(dist[i], d2);
    }
    std::size_t best = 0;
    double bd = -1.0;
    for (std::size_t i = 0; i < pts.rows; ++i)
      if (dist[i] > bd) {
        bd = dist[i];
        best = i;
      }
    current = best;
  }
  return picked;
}

inline PointCloud subset(const PointCloud& cloud, const std::vector<std::size_t>& idx) {
  PointCloud out;
  out.points = Mat(idx.size(), 3);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < cloud.size(), errc::input, "subset: index out of range");
    for (int j = 0; j < 3; ++j) out.points(i, j) = cloud.points(idx[i], j);
  }
  out.shape_label = cloud.shape_label;
  if (cloud.has_parts()) {
    out.part_labels.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out.part_labels[i] = cloud.part_labels[idx[i]];
  }
  out.normalized = cloud.normalized;
  for (int j = 0; j < 3; ++j) out.offset[j] = cloud.offset[j];
  out.scale = cloud.scale;
  out.id = cloud.id;
  return out;
}

// ---------------------------------------------------------------- dp baseline

// iid Laplace(0, b) per coordinate, b = sensitivity / epsilon with
// sensitivity 2 (the coordinate range of a normalized cloud)
inline PointCloud laplace_perturb(const PointCloud& cloud, double epsilon, std::uint64_t seed) {
  require(epsilon > 0.0, errc::config, "laplace_perturb: epsilon must be positive");
  require(cloud.normalized, errc::input, "laplace_perturb: cloud must be normalized first");
  const double b = 2.0 / epsilon;
  PointCloud out = cloud;
  Rng rng(seed);
  for (double& v : out.points.data) v += rng.laplace(b);
  out.normalized = false;
  return out;
}

// ---------------------------------------------------------------- synthesis

inline const std::vector<std::string>& synth_catalog() {
  static const std::vector<std::string> names{"sphere", "cube",     "cylinder",
                                              "torus",  "dumbbell", "rocket"};
  return names;
}

struct SynthSpec {
  std::vector<std::string> classes{"sphere", "cube", "cylinder", "torus"};
  std::size_t points = 256;
  std::size_t clouds_per_class = 50;
  double jitter = 0.02;
  std::uint64_t seed = 0;
};

namespace detail {

inline void unit_dir(Rng& rng, double d[3]) {
  double n2 = 0.0;
  do {
    for (int j = 0; j < 3; ++j) d[j] = rng.gaussian();
    n2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
  } while (n2 < 1e-12);
  double inv = 1.0 / std::sqrt(n2);
  for (int j = 0; j < 3; ++j) d[j] *= inv;
}

// sphere points keep their radius: jitter lives in the tangent plane
inline PointCloud make_sphere(std::size_t n, double jitter, Rng& rng) {
  PointCloud c;
  c.points = Mat(n, 3);
  double dir[3] = {1.0, 0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 2 == 0) {
      unit_dir(rng, dir);
    } else {
      for (int j = 0; j < 3; ++j) dir[j] = -dir[j];  // antithetic partner
    }
    double noise[3];
    for (int j = 0; j < 3; ++j) noise[j] = jitter * rng.gaussian();
    double radial = noise[0] * dir[0] + noise[1] * dir[1] + noise[2] * dir[2];
    for (int j = 0; j < 3; ++j) c.points(i, j) = dir[j] + (noise[j] - radial * dir[j]);
  }
  return c;
}

inline PointCloud make_cube(std::size_t n, double jitter, Rng& rng) {
  PointCloud c;
  c.points = Mat(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t face = rng.uniform_index(6);
    double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
    double p[3];
    int axis = int(face / 2);
    p[axis] = face % 2 == 0 ? 1.0 : -1.0;
    p[(axis + 1) % 3] = u;
    p[(axis + 2) % 3] = v;
    for (int j = 0; j < 3; ++j) c.points(i, j) = p[j] + jitter * rng.gaussian();
  }
  return c;
}

inline PointCloud make_cylinder(std::size_t n, double jitter, Rng& rng) {
  PointCloud c;
  c.points = Mat(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    double a = rng.uniform(0.0, 6.283185307179586);
    double z = rng.uniform(-1.0, 1.0);
    c.points(i, 0) = 0.5 * std::cos(a) + jitter * rng.gaussian();
    c.points(i, 1) = 0.5 * std::sin(a) + jitter * rng.gaussian();
    c.points(i, 2) = z + jitter * rng.gaussian();
  }
  return c;
}

inline PointCloud make_torus(std::size_t n, double jitter, Rng& rng) {
  PointCloud c;
  c.points = Mat(n, 3);
  const double R = 0.8, r = 0.3;
  for (std::size_t i = 0; i < n; ++i) {
    double a = rng.uniform(0.0, 6.283185307179586);
    double b = rng.uniform(0.0, 6.283185307179586);
    double ring = R + r * std::cos(b);
    c.points(i, 0) = ring * std::cos(a) + jitter * rng.gaussian();
    c.points(i, 1) = ring * std::sin(a) + jitter * rng.gaussian();
    c.points(i, 2) = r * std::sin(b) + jitter * rng.gaussian();
  }
  return c;
}

inline PointCloud make_dumbbell(std::size_t n, double jitter, Rng& rng) {
  PointCloud c;
  c.points = Mat(n, 3);
  c.part_labels.resize(n);
  std::size_t half = n / 2;
  for (std::size_t i = 0; i < n; ++i) {
    int part = i < half ? 0 : 1;
    double center_z = part == 0 ? 0.9 : -0.9;
    double d[3];
    unit_dir(rng, d);
    for (int j = 0; j < 3; ++j)
      c.points(i, j) = 0.5 * d[j] + (j == 2 ? center_z : 0.0) + jitter * rng.gaussian();
    c.part_labels[i] = part;
  }
  return c;
}

// cone nose (part 0), body tube (part 1), three flat fins (part 2);
// parts occupy disjoint z-bands so per-part centroids separate cleanly
inline PointCloud make_rocket(std::size_t n, double jitter, Rng& rng) {
  PointCloud c;
  c.points = Mat(n, 3);
  c.part_labels.resize(n);
  std::size_t n_cone = std::max<std::size_t>(1, n * 3 / 10);
  std::size_t n_tube = std::max<std::size_t>(1, n * 45 / 100);
  if (n_cone + n_tube + 1 > n) n_tube = n - n_cone - 1;
  std::size_t i = 0;
  for (; i < n_cone; ++i) {
    double z = rng.uniform(0.5, 1.1);
    double rad = 0.35 * (1.1 - z) / 0.6;
    double a = rng.uniform(0.0, 6.283185307179586);
    c.points(i, 0) = rad * std::cos(a) + jitter * rng.gaussian();
    c.points(i, 1) = rad * std::sin(a) + jitter * rng.gaussian();
    c.points(i, 2) = z + jitter * rng.gaussian();
    c.part_labels[i] = 0;
  }
  for (; i < n_cone + n_tube; ++i) {
    double a = rng.uniform(0.0, 6.283185307179586);
    c.points(i, 0) = 0.35 * std::cos(a) + jitter * rng.gaussian();
    c.points(i, 1) = 0.35 * std::sin(a) + jitter * rng.gaussian();
    c.points(i, 2) = rng.uniform(-0.7, 0.5) + jitter * rng.gaussian();
    c.part_labels[i] = 1;
  }
  for (; i < n; ++i) {
    std::size_t fin = rng.uniform_index(3);
    double a = double(fin) * 2.0943951023931953;  // 120 degrees apart
    double rad = rng.uniform(0.35, 0.7);
    c.points(i, 0) = rad * std::cos(a) + jitter * rng.gaussian();
    c.points(i, 1) = rad * std::sin(a) + jitter * rng.gaussian();
    c.points(i, 2) = rng.uniform(-1.1, -0.6) + jitter * rng.gaussian();
    c.part_labels[i] = 2;
  }
  return c;
}

inline PointCloud make_class(const std::string& name, std::size_t n, double jitter, Rng& rng) {
  if (name == "sphere") return make_sphere(n, jitter, rng);
  if (name == "cube") return make_cube(n, jitter, rng);
  if (name == "cylinder") return make_cylinder(n, jitter, rng);
  if (name == "torus") return make_torus(n, jitter, rng);
  if (name == "dumbbell") return make_dumbbell(n, jitter, rng);
  if (name == "rocket") return make_rocket(n, jitter, rng);
  fail(errc::config, "unknown synthetic class: " + name);
}

}  // namespace detail

// ---------------------------------------------------------------- dataset

struct Dataset {
  std::vector<PointCloud> clouds;
  std::vector<std::string> class_names;
  std::vector<std::size_t> train_idx, test_idx;

  std::size_t num_classes() const { return class_names.size(); }
};

inline Dataset generate(const SynthSpec& spec) {
  require(spec.points >= 8, errc::config, "generate: need at least 8 points per cloud");
  require(!spec.classes.empty(), errc::config, "generate: empty class list");
  require(spec.clouds_per_class >= 1, errc::config, "generate: need at least one cloud per class");
  Dataset ds;
  ds.class_names = spec.classes;
  for (std::size_t ci = 0; ci < spec.classes.size(); ++ci) {
    std::vector<std::size_t> class_members;
    for (std::size_t k = 0; k < spec.clouds_per_class; ++k) {
      Rng rng(derive_seed(spec.seed, ci * 1000003 + k));
      PointCloud c = detail::make_class(spec.classes[ci], spec.points, spec.jitter, rng);
      c.shape_label = int(ci);
      char buf[32];
      std::snprintf(buf, sizeof buf, "_%03zu", k);
      c.id = spec.classes[ci] + buf;
      class_members.push_back(ds.clouds.size());
      ds.clouds.push_back(normalize(c));
    }
    // 80/20 split per class, shuffled by the dataset seed
    Rng split_rng(derive_seed(spec.seed, 0xffff0000ULL + ci));
    for (std::size_t k = class_members.size(); k > 1; --k)
      std::swap(class_members[k - 1], class_members[split_rng.uniform_index(k)]);
    std::size_t n_train = (class_members.size() * 4 + 4) / 5;
    if (n_train == class_members.size() && n_train > 1) --n_train;
    for (std::size_t k = 0; k < class_members.size(); ++k)
      (k < n_train ? ds.train_idx : ds.test_idx).push_back(class_members[k]);
  }
  std::sort(ds.train_idx.begin(), ds.train_idx.end());
  std::sort(ds.test_idx.begin(), ds.test_idx.end());
  return ds;
}

// ---------------------------------------------------------------- text io

inline void save_xyz(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), errc::io, "cannot open for writing: " + path);
  char line[160];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.has_parts())
      std::snprintf(line, sizeof line, "%.17g %.17g %.17g %d\n", cloud.points(i, 0),
                    cloud.points(i, 1), cloud.points(i, 2), cloud.part_labels[i]);
    else
      std::snprintf(line, sizeof line, "%.17g %.17g %.17g\n", cloud.points(i, 0),
                    cloud.points(i, 1), cloud.points(i, 2));
    out << line;
  }
  require(out.good(), errc::io, "write failed: " + path);
}

inline PointCloud load_xyz(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), errc::io, "cannot open: " + path);
  PointCloud cloud;
  std::vector<double> coords;
  std::vector<int> labels;
  bool any_label = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x)) {
      // blank lines are tolerated; anything else is a parse error
      std::istringstream probe(line);
      std::string tok;
      if (probe >> tok)
        fail(errc::format, path + ": malformed line " + std::to_string(lineno));
      continue;
    }
    if (!(ss >> y >> z))
      fail(errc::format, path + ": malformed line " + std::to_string(lineno) +
                             " (need at least 3 coordinates)");
    long label = 0;
    bool has_label = false;
    if (ss >> label) has_label = true;
    std::string trailing;
    if (ss >> trailing)
      fail(errc::format, path + ": malformed line " + std::to_string(lineno) +
                             " (unexpected trailing token)");
    coords.push_back(x);
    coords.push_back(y);
    coords.push_back(z);
    labels.push_back(int(label));
    any_label = any_label || has_label;
  }
  require(!coords.empty(), errc::input, path + ": no points");
  cloud.points = Mat(coords.size() / 3, 3);
  cloud.points.data = coords;
  if (any_label) cloud.part_labels = labels;
  cloud.id = std::filesystem::path(path).stem().string();
  return cloud;
}

// OFF/PLY ingestion reads vertex lists only; faces are ignored
inline PointCloud load_off(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), errc::io, "cannot open: " + path);
  auto next_content_line = [&](std::string& line) {
    while (std::getline(in, line)) {
      std::size_t first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      return true;
    }
    return false;
  };
  std::string line;
  require(next_content_line(line), errc::format, path + ": empty OFF file");
  std::istringstream header(line);
  std::string tag;
  header >> tag;
  std::size_t nv = 0, nf = 0, ne = 0;
  if (tag == "OFF") {
    // counts may share the OFF line or follow it
    if (!(header >> nv >> nf >> ne)) {
      require(next_content_line(line), errc::format, path + ": missing OFF counts");
      std::istringstream counts(line);
      require(bool(counts >> nv >> nf >> ne), errc::format, path + ": bad OFF counts line");
    }
  } else {
    std::istringstream counts(line);
    require(bool(counts >> nv >> nf >> ne), errc::format, path + ": bad OFF counts line");
  }
  require(nv >= 1, errc::input, path + ": OFF file with no vertices");
  PointCloud cloud;
  cloud.points = Mat(nv, 3);
  for (std::size_t i = 0; i < nv; ++i) {
    require(next_content_line(line), errc::format,
            path + ": truncated OFF vertex list at vertex " + std::to_string(i));
    std::istringstream v(line);
    require(bool(v >> cloud.points(i, 0) >> cloud.points(i, 1) >> cloud.points(i, 2)),
            errc::format, path + ": bad OFF vertex at index " + std::to_string(i));
  }
  cloud.id = std::filesystem::path(path).stem().string();
  return cloud;
}

inline PointCloud load_ply(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), errc::io, "cannot open: " + path);
  std::string line;
  require(bool(std::getline(in, line)), errc::format, path + ": empty PLY file");
  require(line.rfind("ply", 0) == 0, errc::format, path + ": missing ply magic");
  std::size_t nv = 0;
  bool ascii = false;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "format") {
      std::string fmt;
      ss >> fmt;
      ascii = fmt == "ascii";
    } else if (tok == "element") {
      std::string what;
      ss >> what;
      if (what == "vertex") ss >> nv;
    } else if (tok == "end_header") {
      break;
    }
  }
  require(ascii, errc::format, path + ": only ascii PLY is supported");
  require(nv >= 1, errc::input, path + ": PLY file with no vertices");
  PointCloud cloud;
  cloud.points = Mat(nv, 3);
  for (std::size_t i = 0; i < nv; ++i) {
    require(bool(std::getline(in, line)), errc::format,
            path + ": truncated PLY vertex list at vertex " + std::to_string(i));
    std::istringstream v(line);
    require(bool(v >> cloud.points(i, 0) >> cloud.points(i, 1) >> cloud.points(i, 2)),
            errc::format, path + ": bad PLY vertex at index " + std::to_string(i));
  }
  cloud.id = std::filesystem::path(path).stem().string();
  return cloud;
}

// loads by extension: .xyz, .off, .ply
inline PointCloud load_cloud(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  for (char& ch : ext) ch = char(std::tolower(static_cast<unsigned char>(ch)));
  if (ext == ".xyz") return load_xyz(path);
  if (ext == ".off") return load_off(path);
  if (ext == ".ply") return load_ply(path);
  fail(errc::format, "unsupported point-cloud extension: " + path);
}

// ---------------------------------------------------------------- corpus io

// layout: <root>/<class_name>/<id>.xyz plus a manifest listing the splits
inline void save_dataset(const Dataset& ds, const std::string& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::ofstream manifest(fs::path(root) / "manifest.txt");
  require(manifest.good(), errc::io, "cannot write manifest under " + root);
  manifest << "classes";
  for (const std::string& name : ds.class_names) manifest << ' ' << name;
  manifest << '\n';
  auto emit = [&](const std::vector<std::size_t>& idx, const char* split) {
    for (std::size_t i : idx) {
      const PointCloud& c = ds.clouds[i];
      const std::string& cls = ds.class_names[std::size_t(c.shape_label)];
      fs::create_directories(fs::path(root) / cls);
      std::string rel = cls + "/" + c.id + ".xyz";
      save_xyz(c, (fs::path(root) / rel).string());
      manifest << split << ' ' << rel << '\n';
    }
  };
  emit(ds.train_idx, "train");
  emit(ds.test_idx, "test");
  require(manifest.good(), errc::io, "manifest write failed under " + root);
}

inline Dataset load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(root) / "manifest.txt");
  require(manifest.good(), errc::io, "cannot open manifest under " + root);
  Dataset ds;
  std::string line;
  require(bool(std::getline(manifest, line)), errc::format, "empty manifest under " + root);
  {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    require(tag == "classes", errc::format, "manifest must start with a classes line");
    std::string name;
    while (ss >> name) ds.class_names.push_back(name);
  }
  require(!ds.class_names.empty(), errc::format, "manifest lists no classes");
  std::size_t lineno = 1;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string split, rel;
    require(bool(ss >> split >> rel), errc::format,
            "manifest: malformed line " + std::to_string(lineno));
    require(split == "train" || split == "test", errc::format,
            "manifest: unknown split '" + split + "' on line " + std::to_string(lineno));
    std::string cls = rel.substr(0, rel.find('/'));
    auto it = std::find(ds.class_names.begin(), ds.class_names.end(), cls);
    require(it != ds.class_names.end(), errc::format,
            "manifest: unlisted class '" + cls + "' on line " + std::to_string(lineno));
    PointCloud c = load_xyz((fs::path(root) / rel).string());
    c.shape_label = int(it - ds.class_names.begin());
    c.normalized = true;  // corpus files are stored normalized
    (split == "train" ? ds.train_idx : ds.test_idx).push_back(ds.clouds.size());
    ds.clouds.push_back(std::move(c));
  }
  require(!ds.clouds.empty(), errc::input, "manifest lists no clouds");
  return ds;
}

}  // namespace pointveil
