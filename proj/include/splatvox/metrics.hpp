#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "camera.hpp"
#include "common.hpp"

namespace splatvox {

// ---------------------------------------------------------------------------
// Image quality.

inline double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw DimensionError("mse: image shapes differ");
  if (a.data.empty()) throw DimensionError("mse: empty image");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

/// 10·log10(1/MSE) for unit dynamic range; identical images give +inf.
inline double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

namespace ssim_detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double c = 0.5 * (size - 1);
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    w[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    s += w[i];
  }
  for (double& x : w) x /= s;
  return w;
}

// 'valid' separable correlation of one channel plane (h×w, row-major) with
// the 1-D window applied along x then y. Output is (h−k+1)×(w−k+1).
inline std::vector<double> filter_valid(const std::vector<double>& plane, int w, int h, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * plane[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

// Adjoint of filter_valid: scatters an (h−k+1)×(w−k+1) map back to h×w.
inline std::vector<double> filter_valid_adjoint(const std::vector<double>& m, int w, int h,
                                                const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const double v = m[static_cast<std::size_t>(y) * ow + x];
      for (int i = 0; i < n; ++i) tmp[static_cast<std::size_t>(y + i) * ow + x] += k[i] * v;
    }
  std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      const double v = tmp[static_cast<std::size_t>(y) * ow + x];
      for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(y) * w + x + i] += k[i] * v;
    }
  return out;
}

inline std::vector<double> channel_plane(const Image& im, int c) {
  std::vector<double> p(im.pixel_count());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = im.data[i * im.channels + c];
  return p;
}

}  // namespace ssim_detail

/// Mean SSIM over all fully-contained windows and all channels. When `grad_a`
/// is given it receives dSSIM/da with the layout of `a`.
inline double ssim(const Image& a, const Image& b, const SsimParams& prm, std::vector<double>* grad_a) {
  using namespace ssim_detail;
  if (!a.same_shape(b)) throw DimensionError("ssim: image shapes differ");
  if (a.width < prm.window || a.height < prm.window)
    throw SizeError("ssim: image smaller than the " + std::to_string(prm.window) + "-pixel window");
  const int w = a.width, h = a.height, nc = a.channels;
  const auto k = gaussian_window(prm.window, prm.sigma);
  const double c1 = (prm.k1 * prm.dynamic_range) * (prm.k1 * prm.dynamic_range);
  const double c2 = (prm.k2 * prm.dynamic_range) * (prm.k2 * prm.dynamic_range);
  const std::size_t nwin = static_cast<std::size_t>(w - prm.window + 1) * (h - prm.window + 1);
  const double norm = 1.0 / (static_cast<double>(nwin) * nc);
  if (grad_a) grad_a->assign(a.data.size(), 0.0);

  std::vector<double> per_channel(static_cast<std::size_t>(nc), 0.0);
  parallel_for(static_cast<std::size_t>(nc), [&](std::size_t c) {
    const auto pa = channel_plane(a, static_cast<int>(c));
    const auto pb = channel_plane(b, static_cast<int>(c));
    std::vector<double> aa(pa.size()), bb(pa.size()), ab(pa.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, w, h, k), mu_b = filter_valid(pb, w, h, k);
    const auto e_aa = filter_valid(aa, w, h, k), e_bb = filter_valid(bb, w, h, k), e_ab = filter_valid(ab, w, h, k);
    std::vector<double> coef_1, coef_a, coef_b;
    if (grad_a) coef_1.resize(nwin), coef_a.resize(nwin), coef_b.resize(nwin);
    double sum = 0.0;
    for (std::size_t i = 0; i < nwin; ++i) {
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
      const double l_num = 2.0 * ma * mb + c1, l_den = ma * ma + mb * mb + c1;
      const double s_num = 2.0 * cov + c2, s_den = va + vb + c2;
      const double s = (l_num * s_num) / (l_den * s_den);
      sum += s;
      if (grad_a) {
        // Partials of s w.r.t. the window statistics (mu_a, var_a, cov).
        const double d_mu = s * (2.0 * mb / l_num - 2.0 * ma / l_den);
        const double d_va = -s / s_den;
        const double d_cov = 2.0 * s / s_num;
        // d var_a / d a_p = 2 w_p (a_p − mu_a), d cov / d a_p = w_p (b_p − mu_b).
        coef_1[i] = d_mu - 2.0 * ma * d_va - mb * d_cov;
        coef_a[i] = 2.0 * d_va;
        coef_b[i] = d_cov;
      }
    }
    per_channel[c] = sum;
    if (grad_a) {
      const auto g1 = filter_valid_adjoint(coef_1, w, h, k);
      const auto ga = filter_valid_adjoint(coef_a, w, h, k);
      const auto gb = filter_valid_adjoint(coef_b, w, h, k);
      for (std::size_t p = 0; p < pa.size(); ++p)
        (*grad_a)[p * nc + c] = norm * (g1[p] + ga[p] * pa[p] + gb[p] * pb[p]);
    }
  });
  double total = 0.0;
  for (double s : per_channel) total += s;
  return total * norm;
}

inline double ssim(const Image& a, const Image& b, const SsimParams& prm = {}) { return ssim(a, b, prm, nullptr); }

// ---------------------------------------------------------------------------
// Depth consistency.

namespace depth_detail {
inline void check(std::span<const double> pred, std::span<const double> gt, std::span<const std::uint8_t> mask,
                  const char* name) {
  if (pred.size() != gt.size() || pred.size() != mask.size())
    throw DimensionError(std::string(name) + ": pred/gt/mask sizes differ");
}
}  // namespace depth_detail

/// Mean of |pred − gt| / gt over masked pixels.
inline double depth_absrel(std::span<const double> pred, std::span<const double> gt,
                           std::span<const std::uint8_t> mask) {
  depth_detail::check(pred, gt, mask, "depth_absrel");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    s += std::abs(pred[i] - gt[i]) / gt[i];
    ++n;
  }
  if (n == 0) throw UndefinedMetricError("depth_absrel: empty mask");
  return s / static_cast<double>(n);
}

/// Fraction of masked pixels with max(pred/gt, gt/pred) strictly below 1.25.
inline double depth_delta1(std::span<const double> pred, std::span<const double> gt,
                           std::span<const std::uint8_t> mask, double threshold = 1.25) {
  depth_detail::check(pred, gt, mask, "depth_delta1");
  std::size_t hit = 0, n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    ++n;
    if (std::max(pred[i] / gt[i], gt[i] / pred[i]) < threshold) ++hit;
  }
  if (n == 0) throw UndefinedMetricError("depth_delta1: empty mask");
  return static_cast<double>(hit) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Relative pose accuracy.

inline const std::vector<double>& default_auc_thresholds() {
  static const std::vector<double> t{5.0, 10.0, 20.0, 30.0};
  return t;
}

struct PoseAUCReport {
  std::map<double, double> auc_at;  // threshold in degrees → AUC
  std::vector<double> pair_errors;  // degrees, pairs (i<j) in lexicographic order
};

struct RelativePoseError {
  double rotation_deg = 0.0;
  double translation_deg = 0.0;
};

/// Errors of the relative pose i→j of `pred` against `gt`. A degenerate gt
/// baseline has no direction, so its translation error is 0; a degenerate
/// predicted baseline against a real one counts as the worst case, 180°.
inline RelativePoseError relative_pose_error(const Camera& pi, const Camera& pj, const Camera& gi, const Camera& gj) {
  constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;
  const Eigen::Matrix3d rpi = pi.rotation_matrix(), rpj = pj.rotation_matrix();
  const Eigen::Matrix3d rgi = gi.rotation_matrix(), rgj = gj.rotation_matrix();
  const Eigen::Matrix3d r_pred = rpi.transpose() * rpj;
  const Eigen::Matrix3d r_gt = rgi.transpose() * rgj;
  RelativePoseError e;
  e.rotation_deg = rotation_angle(r_pred * r_gt.transpose()) * kRadToDeg;
  const Eigen::Vector3d t_pred = rpi.transpose() * (pj.translation - pi.translation);
  const Eigen::Vector3d t_gt = rgi.transpose() * (gj.translation - gi.translation);
  const double np = t_pred.norm(), ng = t_gt.norm();
  if (!(ng > 1e-12)) {
    e.translation_deg = 0.0;
  } else if (!(np > 1e-12)) {
    e.translation_deg = 180.0;
  } else {
    const Eigen::Vector3d a = t_pred / np, b = t_gt / ng;
    e.translation_deg = std::atan2(a.cross(b).norm(), a.dot(b)) * kRadToDeg;
  }
  return e;
}

/// All-pairs relative pose AUC. For the step accuracy curve of the pair
/// errors e_k, the area over [0, τ] divided by τ equals mean_k max(0, 1 − e_k/τ).
inline PoseAUCReport pose_auc(std::span<const Camera> pred, std::span<const Camera> gt,
                              std::span<const double> thresholds = default_auc_thresholds()) {
  if (pred.size() != gt.size()) throw DimensionError("pose_auc: pred and gt lengths differ");
  if (pred.size() < 2) throw InsufficientViewsError("pose_auc: need at least 2 cameras");
  PoseAUCReport rep;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = i + 1; j < pred.size(); ++j) {
      const auto e = relative_pose_error(pred[i], pred[j], gt[i], gt[j]);
      rep.pair_errors.push_back(std::max(e.rotation_deg, e.translation_deg));
    }
  for (double tau : thresholds) {
    if (!(tau > 0.0)) throw DimensionError("pose_auc: thresholds must be positive");
    double s = 0.0;
    for (double e : rep.pair_errors) s += std::max(0.0, 1.0 - e / tau);
    rep.auc_at[tau] = s / static_cast<double>(rep.pair_errors.size());
  }
  return rep;
}

}  // namespace splatvox
