#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "maps.hpp"
#include "rotation.hpp"

namespace splatvox {

/// Pinhole camera. `rotation` and `translation` are world-from-camera: a
/// camera-space point x_c maps to R(rotation)·x_c + translation, so
/// `translation` is the camera center. Camera axes: x right, y down, z forward.
struct Camera {
  Quat rotation = identity_quat();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double fx = 1.0, fy = 1.0;
  double cx = 0.5, cy = 0.5;
  int width = 1, height = 1;

  Eigen::Matrix3d rotation_matrix() const { return quat_to_rotmat(rotation); }
  const Eigen::Vector3d& center() const { return translation; }
};

/// Builds a camera with a normalized, sign-canonical rotation.
inline Camera make_camera(const Quat& rotation, const Eigen::Vector3d& translation, double fx, double fy,
                          double cx, double cy, int width, int height) {
  Camera c;
  c.rotation = canonical_sign(rotation / rotation.norm());
  c.translation = translation;
  c.fx = fx;
  c.fy = fy;
  c.cx = cx;
  c.cy = cy;
  c.width = width;
  c.height = height;
  return c;
}

/// Camera at `eye` looking at `target`; image y axis follows world +y.
inline Camera look_at_camera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, double focal, int width,
                             int height) {
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d down(0.0, 1.0, 0.0);
  if (std::abs(z.dot(down)) > 0.999) down = Eigen::Vector3d(0.0, 0.0, 1.0);
  const Eigen::Vector3d x = down.cross(z).normalized();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return make_camera(rotmat_to_quat(r), eye, focal, focal, 0.5 * width, 0.5 * height, width, height);
}

inline void validate_camera(const Camera& cam) {
  const bool finite = cam.rotation.allFinite() && cam.translation.allFinite() && std::isfinite(cam.fx) &&
                      std::isfinite(cam.fy) && std::isfinite(cam.cx) && std::isfinite(cam.cy);
  if (!finite) throw InvalidCameraError("camera has non-finite fields");
  if (cam.width <= 0 || cam.height <= 0) throw InvalidCameraError("camera image size must be positive");
  if (!(cam.fx > 0 && cam.fy > 0)) throw InvalidCameraError("camera focal lengths must be positive");
  if (!(cam.cx > 0 && cam.cx < cam.width && cam.cy > 0 && cam.cy < cam.height))
    throw InvalidCameraError("camera principal point outside the image");
  if (std::abs(cam.rotation.norm() - 1.0) > 1e-9) throw InvalidCameraError("camera rotation is not unit-norm");
  if (cam.rotation[0] < 0) throw InvalidCameraError("camera rotation has negative scalar part");
}

// ---------------------------------------------------------------------------
// Pose encoding: q (4) + t (3) + normalized focals (2).

struct PoseEncoding {
  Quat q = identity_quat();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  Eigen::Vector2d f = Eigen::Vector2d::Ones();

  static constexpr int kSize = 9;

  std::array<double, kSize> to_array() const {
    return {q[0], q[1], q[2], q[3], t[0], t[1], t[2], f[0], f[1]};
  }
  static PoseEncoding from_array(const std::array<double, kSize>& a) {
    PoseEncoding p;
    p.q = Quat(a[0], a[1], a[2], a[3]);
    p.t = Eigen::Vector3d(a[4], a[5], a[6]);
    p.f = Eigen::Vector2d(a[7], a[8]);
    return p;
  }
};

inline PoseEncoding encode_pose(const Camera& cam) {
  const bool finite = cam.rotation.allFinite() && cam.translation.allFinite() && std::isfinite(cam.fx) &&
                      std::isfinite(cam.fy) && std::isfinite(cam.cx) && std::isfinite(cam.cy);
  if (!finite) throw InvalidCameraError("encode_pose: non-finite camera field");
  validate_camera(cam);
  PoseEncoding p;
  p.q = canonical_sign(cam.rotation);
  p.t = cam.translation;
  p.f = Eigen::Vector2d(cam.fx / cam.width, cam.fy / cam.height);
  return p;
}

inline Camera decode_pose(const PoseEncoding& p, int width, int height) {
  if (!p.q.allFinite() || !p.t.allFinite() || !p.f.allFinite())
    throw InvalidEncodingError("decode_pose: non-finite encoding");
  const double n = p.q.norm();
  if (std::abs(n - 1.0) > 1e-3) throw InvalidEncodingError("decode_pose: quaternion norm " + std::to_string(n));
  if (width <= 0 || height <= 0) throw InvalidEncodingError("decode_pose: non-positive image size");
  if (!(p.f[0] > 0 && p.f[1] > 0)) throw InvalidEncodingError("decode_pose: non-positive focal");
  Camera c;
  c.rotation = canonical_sign(p.q / n);
  c.translation = p.t;
  c.fx = p.f[0] * width;
  c.fy = p.f[1] * height;
  c.cx = 0.5 * width;
  c.cy = 0.5 * height;
  c.width = width;
  c.height = height;
  return c;
}

// ---------------------------------------------------------------------------
// Projection.

struct Projection {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  double depth = 0.0;
  bool behind_camera = false;
};

inline Eigen::Vector3d world_to_camera(const Camera& cam, const Eigen::Vector3d& p) {
  return cam.rotation_matrix().transpose() * (p - cam.translation);
}

inline Projection project(const Camera& cam, const Eigen::Vector3d& point) {
  Projection out;
  const Eigen::Vector3d pc = world_to_camera(cam, point);
  out.depth = pc.z();
  if (!(pc.z() > 1e-8)) {
    out.behind_camera = true;
    return out;
  }
  out.pixel = Eigen::Vector2d(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
  return out;
}

inline Eigen::Vector3d backproject_pixel(const Camera& cam, double u, double v, double depth) {
  const Eigen::Vector3d ray((u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth);
  return cam.rotation_matrix() * ray + cam.translation;
}

/// Jacobian of backproject_pixel w.r.t. depth and the 9 pose-encoding
/// components (q, t, normalized focals) with the principal point held fixed.
struct BackprojectJacobian {
  Eigen::Vector3d d_depth;
  Eigen::Matrix<double, 3, 9> d_pose;
};

inline BackprojectJacobian backproject_jacobian(const Camera& cam, double u, double v, double depth) {
  BackprojectJacobian j;
  const Eigen::Matrix3d r = cam.rotation_matrix();
  const Eigen::Vector3d ray((u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth);
  j.d_depth = r * Eigen::Vector3d((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
  j.d_pose.setZero();
  for (int k = 0; k < 3; ++k) {
    Eigen::Matrix3d g = Eigen::Matrix3d::Zero();
    g.row(k) = ray.transpose();
    j.d_pose.block<1, 4>(k, 0) = quat_to_rotmat_backward(cam.rotation, g).transpose();
  }
  j.d_pose.block<3, 3>(0, 4).setIdentity();
  const double f0 = cam.fx / cam.width, f1 = cam.fy / cam.height;
  j.d_pose.col(7) = r.col(0) * (-ray.x() / f0);
  j.d_pose.col(8) = r.col(1) * (-ray.y() / f1);
  return j;
}

struct BackprojectResult {
  std::vector<Eigen::Vector3d> positions;
  std::vector<int> pixel_index;  // row-major index of the source pixel
};

/// One world point per valid pixel with positive depth; others are skipped.
inline BackprojectResult backproject(const Camera& cam, const DepthMap& depth) {
  if (depth.width != cam.width || depth.height != cam.height)
    throw DimensionError("backproject: depth map " + std::to_string(depth.width) + "x" +
                         std::to_string(depth.height) + " does not match camera " + std::to_string(cam.width) +
                         "x" + std::to_string(cam.height));
  BackprojectResult out;
  const Eigen::Matrix3d r = cam.rotation_matrix();
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * depth.width + u;
      const double d = depth.depth[i];
      if (!depth.valid[i] || !(d > 0.0) || !std::isfinite(d)) continue;
      const Eigen::Vector3d ray((u - cam.cx) / cam.fx * d, (v - cam.cy) / cam.fy * d, d);
      out.positions.push_back(r * ray + cam.translation);
      out.pixel_index.push_back(static_cast<int>(i));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Alignment.

inline double mean_distance_to_first(std::span<const Camera> cams) {
  if (cams.size() < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 1; i < cams.size(); ++i) sum += (cams[i].translation - cams[0].translation).norm();
  return sum / static_cast<double>(cams.size() - 1);
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double median_distance_to_first(std::span<const Camera> cams) {
  std::vector<double> d;
  for (std::size_t i = 1; i < cams.size(); ++i) d.push_back((cams[i].translation - cams[0].translation).norm());
  return median_of(std::move(d));
}

/// Scale s/ŝ that maps the joint (context ∪ target) prediction onto the
/// context-only prediction. `context_in_joint[k]` is the index in `joint` of
/// context camera k; the first context camera must map to the first joint one.
inline double align_test_time_scale(std::span<const Camera> context, std::span<const Camera> joint,
                                    std::span<const int> context_in_joint) {
  if (context.empty() || joint.empty()) throw DimensionError("align_test_time_scale: empty camera list");
  if (context_in_joint.size() != context.size())
    throw DimensionError("align_test_time_scale: index list length differs from context length");
  std::vector<Camera> subset;
  for (int idx : context_in_joint) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= joint.size())
      throw DimensionError("align_test_time_scale: context index out of range");
    subset.push_back(joint[static_cast<std::size_t>(idx)]);
  }
  const double s = mean_distance_to_first(context);
  const double s_hat = mean_distance_to_first(subset);
  if (s_hat < 1e-12) throw DegenerateScaleError("align_test_time_scale: joint context scale is degenerate");
  return s / s_hat;
}

/// Variant where the context views are the leading entries of `joint`.
inline double align_test_time_scale(std::span<const Camera> context, std::span<const Camera> joint) {
  if (joint.size() < context.size()) throw DimensionError("align_test_time_scale: joint shorter than context");
  std::vector<int> idx(context.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  return align_test_time_scale(context, joint, idx);
}

/// Re-expresses `pred` relative to its first camera, rescales translations by
/// the ratio of median center distances, and maps the result into the frame
/// of `gt`'s first camera.
inline std::vector<Camera> align_eval_robust(std::span<const Camera> pred, std::span<const Camera> gt) {
  if (pred.size() != gt.size()) throw DimensionError("align_eval_robust: trajectories differ in length");
  if (pred.size() < 2) throw DimensionError("align_eval_robust: need at least two cameras");
  const double pred_med = median_distance_to_first(pred);
  if (pred_med < 1e-12) throw DegenerateScaleError("align_eval_robust: predicted trajectory has zero extent");
  const double scale = median_distance_to_first(gt) / pred_med;
  const Eigen::Matrix3d r0_inv = pred[0].rotation_matrix().transpose();
  const Eigen::Matrix3d g0 = gt[0].rotation_matrix();
  std::vector<Camera> out;
  out.reserve(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    Camera c = pred[i];
    const Eigen::Matrix3d rel = r0_inv * pred[i].rotation_matrix();
    const Eigen::Vector3d rel_t = r0_inv * (pred[i].translation - pred[0].translation);
    c.rotation = rotmat_to_quat(g0 * rel);
    c.translation = g0 * (scale * rel_t) + gt[0].translation;
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory text files: `width height fx fy cx cy qw qx qy qz tx ty tz`.

inline std::string format_camera_line(const Camera& c) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%d %d %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g",
                c.width, c.height, c.fx, c.fy, c.cx, c.cy, c.rotation[0], c.rotation[1], c.rotation[2],
                c.rotation[3], c.translation[0], c.translation[1], c.translation[2]);
  return buf;
}

inline void write_trajectory(const std::string& path, std::span<const Camera> cams) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& c : cams) out << format_camera_line(c) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<Camera> parse_trajectory(std::istream& in, const std::string& origin) {
  std::vector<Camera> cams;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#')
      continue;
    std::istringstream ss(line);
    Camera c;
    double q[4], t[3];
    if (!(ss >> c.width >> c.height >> c.fx >> c.fy >> c.cx >> c.cy >> q[0] >> q[1] >> q[2] >> q[3] >> t[0] >>
          t[1] >> t[2]))
      throw ParseError(origin + ":" + std::to_string(lineno) + ": expected 13 camera fields");
    std::string extra;
    if (ss >> extra) throw ParseError(origin + ":" + std::to_string(lineno) + ": trailing field '" + extra + "'");
    c.rotation = Quat(q[0], q[1], q[2], q[3]);
    c.translation = Eigen::Vector3d(t[0], t[1], t[2]);
    try {
      validate_camera(c);
    } catch (const InvalidCameraError& e) {
      throw ParseError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
    cams.push_back(c);
  }
  return cams;
}

inline std::vector<Camera> read_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open camera file: " + path);
  return parse_trajectory(in, path);
}

}  // namespace splatvox
