#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "camera.hpp"
#include "common.hpp"
#include "maps.hpp"
#include "sh.hpp"

namespace splatvox {

/// Columnar store of Gaussians in pre-activation parameter space.
///   opacity    = sigmoid(logit_opacity)
///   scale      = exp(log_scale)
///   rotation   = raw_quaternion / |raw_quaternion|   (w, x, y, z)
///   sh_coeffs  = 3 channels × (sh_degree+1)^2, channel-major
///   confidence = unbounded voxel-merge logit
struct GaussianSet {
  int sh_degree = 1;
  std::vector<double> positions;
  std::vector<double> logit_opacity;
  std::vector<double> raw_quaternion;
  std::vector<double> log_scale;
  std::vector<double> sh_coeffs;
  std::vector<double> confidence;

  GaussianSet() = default;
  explicit GaussianSet(std::size_t n, int degree = 1) : sh_degree(degree) { resize(n); }

  int coeffs_per_channel() const { return sh_coeff_count(sh_degree); }
  int sh_stride() const { return 3 * coeffs_per_channel(); }
  std::size_t size() const { return logit_opacity.size(); }
  bool empty() const { return size() == 0; }

  void resize(std::size_t n) {
    positions.resize(3 * n, 0.0);
    logit_opacity.resize(n, 0.0);
    raw_quaternion.resize(4 * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      if (raw_quaternion[4 * i] == 0 && raw_quaternion[4 * i + 1] == 0 && raw_quaternion[4 * i + 2] == 0 &&
          raw_quaternion[4 * i + 3] == 0)
        raw_quaternion[4 * i] = 1.0;
    log_scale.resize(3 * n, 0.0);
    sh_coeffs.resize(static_cast<std::size_t>(sh_stride()) * n, 0.0);
    confidence.resize(n, 0.0);
  }

  Eigen::Vector3d position(std::size_t i) const {
    return {positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]};
  }
  void set_position(std::size_t i, const Eigen::Vector3d& p) {
    positions[3 * i] = p.x();
    positions[3 * i + 1] = p.y();
    positions[3 * i + 2] = p.z();
  }
  Quat quaternion(std::size_t i) const {
    return {raw_quaternion[4 * i], raw_quaternion[4 * i + 1], raw_quaternion[4 * i + 2], raw_quaternion[4 * i + 3]};
  }
  Eigen::Vector3d log_scales(std::size_t i) const {
    return {log_scale[3 * i], log_scale[3 * i + 1], log_scale[3 * i + 2]};
  }
  std::span<const double> sh(std::size_t i) const {
    return {sh_coeffs.data() + i * static_cast<std::size_t>(sh_stride()), static_cast<std::size_t>(sh_stride())};
  }
  std::span<double> sh(std::size_t i) {
    return {sh_coeffs.data() + i * static_cast<std::size_t>(sh_stride()), static_cast<std::size_t>(sh_stride())};
  }

  double opacity(std::size_t i) const { return sigmoid(logit_opacity[i]); }

  bool consistent() const {
    const std::size_t n = size();
    return positions.size() == 3 * n && raw_quaternion.size() == 4 * n && log_scale.size() == 3 * n &&
           sh_coeffs.size() == static_cast<std::size_t>(sh_stride()) * n && confidence.size() == n;
  }

  bool finite() const {
    return all_finite(positions) && all_finite(logit_opacity) && all_finite(raw_quaternion) &&
           all_finite(log_scale) && all_finite(sh_coeffs) && all_finite(confidence);
  }

  /// Appends Gaussian `i` of `src` (same SH degree).
  void push_from(const GaussianSet& src, std::size_t i) {
    positions.insert(positions.end(), src.positions.begin() + 3 * i, src.positions.begin() + 3 * i + 3);
    logit_opacity.push_back(src.logit_opacity[i]);
    raw_quaternion.insert(raw_quaternion.end(), src.raw_quaternion.begin() + 4 * i,
                          src.raw_quaternion.begin() + 4 * i + 4);
    log_scale.insert(log_scale.end(), src.log_scale.begin() + 3 * i, src.log_scale.begin() + 3 * i + 3);
    const auto s = src.sh(i);
    sh_coeffs.insert(sh_coeffs.end(), s.begin(), s.end());
    confidence.push_back(src.confidence[i]);
  }

  friend bool operator==(const GaussianSet&, const GaussianSet&) = default;
};

/// Gradient buffers with the same layout as GaussianSet.
struct GaussianGrads {
  std::vector<double> positions, logit_opacity, raw_quaternion, log_scale, sh_coeffs, confidence;

  GaussianGrads() = default;
  explicit GaussianGrads(const GaussianSet& g) { reset(g); }

  void reset(const GaussianSet& g) {
    positions.assign(g.positions.size(), 0.0);
    logit_opacity.assign(g.logit_opacity.size(), 0.0);
    raw_quaternion.assign(g.raw_quaternion.size(), 0.0);
    log_scale.assign(g.log_scale.size(), 0.0);
    sh_coeffs.assign(g.sh_coeffs.size(), 0.0);
    confidence.assign(g.confidence.size(), 0.0);
  }

  template <class Fn>
  void for_each_buffer(Fn&& fn) {
    fn(positions);
    fn(logit_opacity);
    fn(raw_quaternion);
    fn(log_scale);
    fn(sh_coeffs);
    fn(confidence);
  }

  GaussianGrads& operator+=(const GaussianGrads& o) {
    auto add = [](std::vector<double>& a, const std::vector<double>& b) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    add(positions, o.positions);
    add(logit_opacity, o.logit_opacity);
    add(raw_quaternion, o.raw_quaternion);
    add(log_scale, o.log_scale);
    add(sh_coeffs, o.sh_coeffs);
    add(confidence, o.confidence);
    return *this;
  }
};

// ---------------------------------------------------------------------------
// Activations.

/// Σ = R·diag(exp(log_scale))²·Rᵀ with R from the normalized quaternion.
inline Eigen::Matrix3d covariance_from_params(const Quat& raw_quaternion, const Eigen::Vector3d& log_scale) {
  const Eigen::Matrix3d r = quat_to_rotmat(raw_quaternion);
  const Eigen::Vector3d s = log_scale.array().exp();
  const Eigen::Matrix3d m = r * s.asDiagonal();
  Eigen::Matrix3d cov = m * m.transpose();
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) cov(j, i) = cov(i, j);
  return cov;
}

/// Backward of covariance_from_params given a symmetric dL/dΣ.
inline void covariance_backward(const Quat& raw_quaternion, const Eigen::Vector3d& log_scale,
                                const Eigen::Matrix3d& d_cov, Quat& d_quat, Eigen::Vector3d& d_log_scale) {
  const Eigen::Matrix3d r = quat_to_rotmat(raw_quaternion);
  const Eigen::Vector3d s = log_scale.array().exp();
  const Eigen::Matrix3d m = r * s.asDiagonal();
  const Eigen::Matrix3d sym = 0.5 * (d_cov + d_cov.transpose());
  const Eigen::Matrix3d d_m = 2.0 * sym * m;
  const Eigen::Matrix3d d_r = d_m * s.asDiagonal();
  for (int j = 0; j < 3; ++j) d_log_scale[j] = d_m.col(j).dot(r.col(j)) * s[j];
  d_quat = quat_to_rotmat_backward(raw_quaternion, d_r);
}

// ---------------------------------------------------------------------------
// Lifting per-view predictions into pixel-wise Gaussians.

struct LiftSource {
  int view = 0;
  int pixel = 0;
};

/// One Gaussian per valid pixel of every view, centred on the back-projected
/// depth and carrying the pixel's attribute predictions. Views are visited in
/// order, pixels row-major. `sources`, when given, receives each Gaussian's
/// originating (view, pixel).
inline GaussianSet lift_views(std::span<const Camera> cams, std::span<const DepthMap> depths,
                              std::span<const AttributeMaps> attrs, std::vector<LiftSource>* sources = nullptr) {
  if (cams.size() != depths.size() || cams.size() != attrs.size())
    throw DimensionError("lift_views: camera/depth/attribute view counts differ");
  if (cams.empty()) throw EmptySceneError("lift_views: no views");
  const int degree = attrs[0].sh_degree;
  check_sh_degree(degree);
  for (std::size_t v = 0; v < cams.size(); ++v) {
    const auto& d = depths[v];
    const auto& a = attrs[v];
    if (d.width != cams[v].width || d.height != cams[v].height || a.width != d.width || a.height != d.height)
      throw DimensionError("lift_views: view " + std::to_string(v) + " has mismatched map dimensions");
    if (d.depth.size() != d.size() || d.valid.size() != d.size())
      throw DimensionError("lift_views: view " + std::to_string(v) + " depth buffer size");
    if (!a.consistent()) throw DimensionError("lift_views: view " + std::to_string(v) + " attribute buffer size");
    if (a.sh_degree != degree) throw DimensionError("lift_views: views disagree on SH degree");
  }

  std::vector<BackprojectResult> per_view(cams.size());
  parallel_for(cams.size(), [&](std::size_t v) { per_view[v] = backproject(cams[v], depths[v]); });
  std::size_t total = 0;
  for (const auto& r : per_view) total += r.positions.size();
  if (total == 0) throw EmptySceneError("lift_views: no valid depth pixels in any view");

  GaussianSet g(total, degree);
  if (sources) sources->assign(total, {});
  const std::size_t stride = static_cast<std::size_t>(g.sh_stride());
  std::size_t out = 0;
  for (std::size_t v = 0; v < cams.size(); ++v) {
    const auto& a = attrs[v];
    for (std::size_t k = 0; k < per_view[v].positions.size(); ++k, ++out) {
      const std::size_t p = static_cast<std::size_t>(per_view[v].pixel_index[k]);
      g.set_position(out, per_view[v].positions[k]);
      g.logit_opacity[out] = a.logit_opacity[p];
      for (int c = 0; c < 4; ++c) g.raw_quaternion[4 * out + c] = a.raw_quaternion[4 * p + c];
      for (int c = 0; c < 3; ++c) g.log_scale[3 * out + c] = a.log_scale[3 * p + c];
      for (std::size_t c = 0; c < stride; ++c) g.sh_coeffs[stride * out + c] = a.sh_coeffs[stride * p + c];
      g.confidence[out] = a.confidence[p];
      if (sources) (*sources)[out] = {static_cast<int>(v), static_cast<int>(p)};
    }
  }
  return g;
}

}  // namespace splatvox
