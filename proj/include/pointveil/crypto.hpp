#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pointveil/common.hpp"
#include "pointveil/io.hpp"
#include "pointveil/mat.hpp"
#include "pointveil/model.hpp"

namespace pointveil {

struct RotationKey {
  Mat r_p;  // 3x3 point rotation
  Mat r_c;  // 3x3 center rotation
  Mat r_e;  // optional m x m shape-latent rotation; empty when absent
  std::uint64_t seed = 0;  // in-memory provenance only, not serialized

  bool has_r_e() const { return r_e.rows > 0; }
};

inline void validate_key(const RotationKey& key) {
  require(key.r_p.rows == 3 && key.r_p.cols == 3, errc::validation, "key: R_p must be 3x3");
  require(key.r_c.rows == 3 && key.r_c.cols == 3, errc::validation, "key: R_c must be 3x3");
  require(is_proper_rotation(key.r_p), errc::validation, "key: R_p is not a proper rotation");
  require(is_proper_rotation(key.r_c), errc::validation, "key: R_c is not a proper rotation");
  if (key.has_r_e()) {
    require(key.r_e.rows == key.r_e.cols, errc::validation, "key: R_e must be square");
    require(is_proper_rotation(key.r_e), errc::validation, "key: R_e is not a proper rotation");
  }
}

// m > 0 adds the optional shape-latent rotation R_e
inline RotationKey keygen(std::uint64_t seed, std::size_t m = 0) {
  RotationKey key;
  key.r_p = random_orthogonal(3, derive_seed(seed, 201));
  key.r_c = random_orthogonal(3, derive_seed(seed, 202));
  if (m > 0) key.r_e = random_orthogonal(m, derive_seed(seed, 203));
  key.seed = seed;
  return key;
}

inline RotationKey identity_key() {
  RotationKey key;
  key.r_p = Mat::identity(3);
  key.r_c = Mat::identity(3);
  return key;
}

struct ProtectedCloud {
  Mat z_hat;  // n x 3
  Vec e;      // m
  std::string id;

  std::size_t size() const { return z_hat.rows; }
};

namespace detail {

inline Vec mean_row(const Mat& a) {
  Vec m(a.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) m[j] += a(i, j);
  for (double& v : m) v /= double(a.rows);
  return m;
}

// rows[idx] -> (rows[idx] - t1) * r_p + t1 * r_c, in place
inline void rotate_group(Mat& z, const std::vector<std::size_t>& idx, const Vec& t1,
                         const Mat& r_p, const Mat& r_c) {
  Vec t2(3, 0.0);
  for (int j = 0; j < 3; ++j)
    for (int a = 0; a < 3; ++a) t2[j] += t1[a] * r_c(a, j);
  for (std::size_t i : idx) {
    double v[3];
    for (int j = 0; j < 3; ++j) {
      v[j] = t2[j];
      for (int a = 0; a < 3; ++a) v[j] += (z(i, a) - t1[a]) * r_p(a, j);
    }
    for (int j = 0; j < 3; ++j) z(i, j) = v[j];
  }
}

// inverse of rotate_group with t2 = the group's current mean
inline void unrotate_group(Mat& z, const std::vector<std::size_t>& idx, const Mat& r_p,
                           const Mat& r_c) {
  Vec t2(3, 0.0);
  for (std::size_t i : idx)
    for (int j = 0; j < 3; ++j) t2[j] += z(i, j);
  for (double& v : t2) v /= double(idx.size());
  Vec t1(3, 0.0);  // t2 * r_c^T
  for (int j = 0; j < 3; ++j)
    for (int a = 0; a < 3; ++a) t1[j] += t2[a] * r_c(j, a);
  for (std::size_t i : idx) {
    double v[3];
    for (int j = 0; j < 3; ++j) {
      v[j] = t1[j];
      for (int a = 0; a < 3; ++a) v[j] += (z(i, a) - t2[a]) * r_p(j, a);  // * r_p^T
    }
    for (int j = 0; j < 3; ++j) z(i, j) = v[j];
  }
}

inline std::vector<std::vector<std::size_t>> part_groups(const std::vector<int>& assignments) {
  int hi = 0;
  for (int k : assignments) {
    require(k >= 0, errc::input, "per-part crypto: negative part assignment");
    hi = std::max(hi, k);
  }
  std::vector<std::vector<std::size_t>> groups(std::size_t(hi) + 1);
  for (std::size_t i = 0; i < assignments.size(); ++i)
    groups[std::size_t(assignments[i])].push_back(i);
  return groups;
}

}  // namespace detail

// Whole-cloud by default: one T_1 from the full cloud mean. per_part rotates
// each assigned part about its own mean (shared R_p/R_c).
inline ProtectedCloud encrypt(const LatentCloud& latent, const RotationKey& key,
                              bool per_part = false) {
  require(latent.size() >= 1, errc::input, "encrypt: empty latent cloud");
  ProtectedCloud out;
  out.z_hat = latent.z;
  out.id = latent.id;
  if (per_part) {
    require(latent.assignments.size() == latent.size(), errc::input,
            "encrypt: per-part mode needs one assignment per point");
    for (const auto& g : detail::part_groups(latent.assignments)) {
      if (g.empty()) continue;
      Vec t1(3, 0.0);
      for (std::size_t i : g)
        for (int j = 0; j < 3; ++j) t1[j] += latent.z(i, j);
      for (double& v : t1) v /= double(g.size());
      detail::rotate_group(out.z_hat, g, t1, key.r_p, key.r_c);
    }
  } else {
    std::vector<std::size_t> all(latent.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    detail::rotate_group(out.z_hat, all, detail::mean_row(latent.z), key.r_p, key.r_c);
  }
  out.e = latent.e;
  if (key.has_r_e()) {
    require(key.r_e.rows == latent.e.size(), errc::input,
            "encrypt: R_e dimension does not match e");
    Vec rotated(latent.e.size(), 0.0);
    for (std::size_t j = 0; j < rotated.size(); ++j)
      for (std::size_t a = 0; a < rotated.size(); ++a)
        rotated[j] += latent.e[a] * key.r_e(a, j);
    out.e = rotated;
  }
  return out;
}

// Per-part decryption needs the per-point assignments back (the protected file
// does not carry them); empty assignments = whole-cloud.
inline LatentCloud decrypt(const ProtectedCloud& protected_cloud, const RotationKey& key,
                           const std::vector<int>& assignments = {}) {
  require(protected_cloud.size() >= 1, errc::input, "decrypt: empty protected cloud");
  LatentCloud out;
  out.z = protected_cloud.z_hat;
  out.id = protected_cloud.id;
  if (!assignments.empty()) {
    require(assignments.size() == protected_cloud.size(), errc::input,
            "decrypt: per-part mode needs one assignment per point");
    for (const auto& g : detail::part_groups(assignments))
      if (!g.empty()) detail::unrotate_group(out.z, g, key.r_p, key.r_c);
    out.assignments = assignments;
  } else {
    std::vector<std::size_t> all(protected_cloud.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    detail::unrotate_group(out.z, all, key.r_p, key.r_c);
  }
  out.e = protected_cloud.e;
  if (key.has_r_e()) {
    require(key.r_e.rows == protected_cloud.e.size(), errc::input,
            "decrypt: R_e dimension does not match e");
    Vec plain(protected_cloud.e.size(), 0.0);
    for (std::size_t j = 0; j < plain.size(); ++j)
      for (std::size_t a = 0; a < plain.size(); ++a)
        plain[j] += protected_cloud.e[a] * key.r_e(j, a);  // * r_e^T
    out.e = plain;
  }
  return out;
}

// ---------------------------------------------------------------- files

inline constexpr std::uint16_t kKeyFormatVersion = 1;
inline constexpr std::uint16_t kProtectedFormatVersion = 1;

inline void save_key(const RotationKey& key, const std::string& path) {
  validate_key(key);
  ByteWriter w;
  w.magic("PFK1");
  w.u16(kKeyFormatVersion);
  w.u8(key.has_r_e() ? 1 : 0);
  for (double v : key.r_p.data) w.f64(v);
  for (double v : key.r_c.data) w.f64(v);
  if (key.has_r_e()) {
    w.u32(std::uint32_t(key.r_e.rows));
    for (double v : key.r_e.data) w.f64(v);
  }
  w.finish(path);
}

inline RotationKey load_key(const std::string& path) {
  ByteReader r(path);
  r.expect_magic("PFK1", "key");
  std::uint16_t version = r.u16();
  require(version == kKeyFormatVersion, errc::version,
          "unsupported key format version " + std::to_string(version));
  std::uint8_t flags = r.u8();
  RotationKey key;
  key.r_p = Mat(3, 3);
  key.r_c = Mat(3, 3);
  for (double& v : key.r_p.data) v = r.f64();
  for (double& v : key.r_c.data) v = r.f64();
  if (flags & 1) {
    std::uint32_t m = r.u32();
    require(m >= 1, errc::format, "key: R_e flag set but dimension is 0");
    key.r_e = Mat(m, m);
    for (double& v : key.r_e.data) v = r.f64();
  }
  validate_key(key);
  return key;
}

inline void save_protected(const ProtectedCloud& cloud, const std::string& path) {
  require(cloud.size() >= 1, errc::input, "protected cloud: empty");
  ByteWriter w;
  w.magic("PFE1");
  w.u16(kProtectedFormatVersion);
  w.u32(std::uint32_t(cloud.size()));
  w.u32(std::uint32_t(cloud.e.size()));
  for (double v : cloud.e) w.f32(float(v));
  for (double v : cloud.z_hat.data) w.f32(float(v));
  w.finish(path);
}

inline ProtectedCloud load_protected(const std::string& path) {
  ByteReader r(path);
  r.expect_magic("PFE1", "protected cloud");
  std::uint16_t version = r.u16();
  require(version == kProtectedFormatVersion, errc::version,
          "unsupported protected-cloud format version " + std::to_string(version));
  std::uint32_t n = r.u32();
  std::uint32_t m = r.u32();
  require(n >= 1, errc::format, "protected cloud: empty payload");
  ProtectedCloud out;
  out.e = Vec(m);
  for (double& v : out.e) v = double(r.f32());
  out.z_hat = Mat(n, 3);
  for (double& v : out.z_hat.data) v = double(r.f32());
  for (double v : out.e)
    require(std::isfinite(v), errc::validation, "protected cloud: non-finite latent");
  for (double v : out.z_hat.data)
    require(std::isfinite(v), errc::validation, "protected cloud: non-finite point");
  return out;
}

}  // namespace pointveil
