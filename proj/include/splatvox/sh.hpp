#pragma once

#include <Eigen/Dense>
#include <array>
#include <span>
#include <string>

#include "common.hpp"

namespace splatvox {

inline constexpr int kMaxShDegree = 3;
inline constexpr double kShC0 = 0.28209479177387814;

namespace sh_detail {

inline constexpr double C1 = 0.4886025119029199;
inline constexpr double C2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                -1.0925484305920792, 0.5462742152960396};
inline constexpr double C3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                                0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                -0.5900435899266435};

/// Forward-mode value with a gradient w.r.t. the three direction components.
struct Dual3 {
  double v = 0.0;
  std::array<double, 3> d{0.0, 0.0, 0.0};
};
inline Dual3 operator+(Dual3 a, const Dual3& b) {
  a.v += b.v;
  for (int i = 0; i < 3; ++i) a.d[i] += b.d[i];
  return a;
}
inline Dual3 operator-(Dual3 a, const Dual3& b) {
  a.v -= b.v;
  for (int i = 0; i < 3; ++i) a.d[i] -= b.d[i];
  return a;
}
inline Dual3 operator*(const Dual3& a, const Dual3& b) {
  Dual3 r;
  r.v = a.v * b.v;
  for (int i = 0; i < 3; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
inline Dual3 operator*(double s, Dual3 a) {
  a.v *= s;
  for (auto& x : a.d) x *= s;
  return a;
}

inline double constant(double c, double) { return c; }
inline Dual3 constant(double c, const Dual3&) { return Dual3{c, {0.0, 0.0, 0.0}}; }

// Real SH basis (Condon-Shortley phase), ordered by degree then m = -l..l.
template <class T>
void basis(int degree, const T& x, const T& y, const T& z, T* out) {
  out[0] = constant(kShC0, x);
  if (degree < 1) return;
  out[1] = -C1 * y;
  out[2] = C1 * z;
  out[3] = -C1 * x;
  if (degree < 2) return;
  const T xx = x * x, yy = y * y, zz = z * z, xy = x * y, yz = y * z, xz = x * z;
  out[4] = C2[0] * xy;
  out[5] = C2[1] * yz;
  out[6] = C2[2] * (2.0 * zz - xx - yy);
  out[7] = C2[3] * xz;
  out[8] = C2[4] * (xx - yy);
  if (degree < 3) return;
  out[9] = C3[0] * (y * (3.0 * xx - yy));
  out[10] = C3[1] * (xy * z);
  out[11] = C3[2] * (y * (4.0 * zz - xx - yy));
  out[12] = C3[3] * (z * (2.0 * zz - 3.0 * xx - 3.0 * yy));
  out[13] = C3[4] * (x * (4.0 * zz - xx - yy));
  out[14] = C3[5] * (z * (xx - yy));
  out[15] = C3[6] * (x * (xx - 3.0 * yy));
}

}  // namespace sh_detail

inline void check_sh_degree(int degree) {
  if (degree < 0 || degree > kMaxShDegree)
    throw UnsupportedDegreeError("unsupported SH degree " + std::to_string(degree) + " (0..3)");
}

/// Basis values Y_j(dir) for j < (degree+1)^2.
inline std::array<double, 16> sh_basis(int degree, const Eigen::Vector3d& dir) {
  check_sh_degree(degree);
  std::array<double, 16> out{};
  sh_detail::basis(degree, dir.x(), dir.y(), dir.z(), out.data());
  return out;
}

/// Basis values and their gradients w.r.t. the direction components.
inline void sh_basis_with_grad(int degree, const Eigen::Vector3d& dir, std::array<double, 16>& values,
                               std::array<Eigen::Vector3d, 16>& grads) {
  using sh_detail::Dual3;
  const Dual3 x{dir.x(), {1, 0, 0}}, y{dir.y(), {0, 1, 0}}, z{dir.z(), {0, 0, 1}};
  std::array<Dual3, 16> out{};
  sh_detail::basis(degree, x, y, z, out.data());
  const int n = (degree + 1) * (degree + 1);
  for (int j = 0; j < n; ++j) {
    values[j] = out[j].v;
    grads[j] = Eigen::Vector3d(out[j].d[0], out[j].d[1], out[j].d[2]);
  }
}

/// Unclamped colour: sum_j c_j Y_j(dir) + 0.5 per channel. `coeffs` is
/// channel-major, 3 × (degree+1)^2. The renderer clamps the result to [0,1].
inline Eigen::Vector3d evaluate_sh(std::span<const double> coeffs, int degree, const Eigen::Vector3d& view_dir) {
  check_sh_degree(degree);
  const int k = (degree + 1) * (degree + 1);
  if (coeffs.size() != static_cast<std::size_t>(3 * k)) throw DimensionError("evaluate_sh: coefficient count");
  const auto y = sh_basis(degree, view_dir);
  Eigen::Vector3d rgb;
  for (int c = 0; c < 3; ++c) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += coeffs[static_cast<std::size_t>(c * k + j)] * y[j];
    rgb[c] = s + 0.5;
  }
  return rgb;
}

}  // namespace splatvox
