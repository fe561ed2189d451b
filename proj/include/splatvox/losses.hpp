#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "camera.hpp"
#include "common.hpp"
#include "maps.hpp"
#include "metrics.hpp"

namespace splatvox {

struct LossWeights {
  double lambda1 = 0.05;  // perceptual surrogate inside the RGB term
  double lambda2 = 0.1;   // geometry consistency
  double lambda3 = 10.0;  // pose distillation
  double lambda4 = 1.0;   // depth distillation
  double top_quantile = 0.3;
  double huber_delta = 0.1;

  void validate() const {
    for (double v : {lambda1, lambda2, lambda3, lambda4, huber_delta})
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
    if (!(top_quantile > 0.0 && top_quantile <= 1.0)) throw ConfigError("top_quantile must lie in (0, 1]");
  }
};

struct LossReport {
  double rgb = 0.0;
  double geometry = 0.0;
  double pose = 0.0;
  double depth_distill = 0.0;
  double total = 0.0;
  double mask_coverage = 0.0;
  bool empty_mask = false;
};

/// Combines already-evaluated terms: rgb + λ2·geometry + λ3·pose + λ4·depth.
inline LossReport loss_total(LossReport r, const LossWeights& w) {
  r.total = r.rgb + w.lambda2 * r.geometry + w.lambda3 * r.pose + w.lambda4 * r.depth_distill;
  return r;
}

// ---------------------------------------------------------------------------
// Photometric term.

struct RgbLoss {
  double value = 0.0;
  double mse = 0.0;
  double dssim = 0.0;
  std::vector<double> grad;  // d value / d rendered
};

/// MSE + λ1·DSSIM, DSSIM = (1 − SSIM)/2. SSIM needs both sides ≥ 11 pixels;
/// with λ1 = 0 any image size is accepted.
inline RgbLoss loss_rgb(const Image& rendered, const Image& target, double lambda1, bool want_grad = true) {
  if (!rendered.same_shape(target)) throw DimensionError("loss_rgb: rendered and target shapes differ");
  RgbLoss out;
  out.mse = mse(rendered, target);
  const double n = static_cast<double>(rendered.data.size());
  if (want_grad) {
    out.grad.resize(rendered.data.size());
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] = 2.0 * (rendered.data[i] - target.data[i]) / n;
  }
  if (lambda1 != 0.0) {
    std::vector<double> g;
    const double s = ssim(rendered, target, {}, want_grad ? &g : nullptr);
    out.dssim = 0.5 * (1.0 - s);
    if (want_grad)
      for (std::size_t i = 0; i < g.size(); ++i) out.grad[i] -= 0.5 * lambda1 * g[i];
  }
  out.value = out.mse + lambda1 * out.dssim;
  return out;
}

// ---------------------------------------------------------------------------
// Confidence masks.

/// Marks the top `quantile` fraction of valid pixels by confidence:
/// k = max(1, ⌊q·n⌋) pixels, ties broken toward the lower pixel index.
inline std::vector<std::uint8_t> top_quantile_mask(const DepthMap& d, double quantile) {
  if (!(quantile > 0.0 && quantile <= 1.0)) throw ConfigError("top_quantile must lie in (0, 1]");
  if (d.confidence.size() != d.size() || d.valid.size() != d.size())
    throw DimensionError("top_quantile_mask: depth map buffers inconsistent");
  std::vector<int> idx;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.valid[i]) idx.push_back(static_cast<int>(i));
  std::vector<std::uint8_t> mask(d.size(), 0);
  if (idx.empty()) return mask;
  // The small bias keeps q·n from landing just under an integer, e.g. 0.3·10.
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(quantile * idx.size() + 1e-9)));
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return d.confidence[a] > d.confidence[b]; });
  for (std::size_t i = 0; i < std::min(k, idx.size()); ++i) mask[idx[i]] = 1;
  return mask;
}

struct DepthLoss {
  double value = 0.0;
  double coverage = 0.0;  // supervised pixels / all pixels
  bool empty_mask = false;
  std::vector<double> grad_rendered;
  std::vector<double> grad_reference;  // gradient on the decoded/pseudo depth
};

/// Masked MSE between a reference depth map and the rendered expected depth.
/// Mask = top-quantile of the reference confidence ∩ valid ∩ alpha ≥ 0.5.
inline DepthLoss masked_depth_loss(const DepthMap& reference, std::span<const double> rendered_depth,
                                   std::span<const double> rendered_alpha, double top_quantile) {
  if (rendered_depth.size() != reference.size() || rendered_alpha.size() != reference.size())
    throw DimensionError("depth loss: rendered buffers do not match the depth map");
  auto mask = top_quantile_mask(reference, top_quantile);
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] && !(rendered_alpha[i] >= 0.5)) mask[i] = 0;
    n += mask[i];
  }
  DepthLoss out;
  out.grad_rendered.assign(reference.size(), 0.0);
  out.grad_reference.assign(reference.size(), 0.0);
  if (n == 0) {
    out.empty_mask = true;
    return out;
  }
  const double inv = 1.0 / static_cast<double>(n);
  double s = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double r = rendered_depth[i] - static_cast<double>(reference.depth[i]);
    s += r * r;
    out.grad_rendered[i] = 2.0 * r * inv;
    out.grad_reference[i] = -2.0 * r * inv;
  }
  out.value = s * inv;
  out.coverage = static_cast<double>(n) / static_cast<double>(reference.size());
  return out;
}

/// Geometry consistency between the decoded depth and the rendered depth.
inline DepthLoss loss_geometry(const DepthMap& decoded, std::span<const double> rendered_depth,
                               std::span<const double> rendered_alpha, double top_quantile) {
  return masked_depth_loss(decoded, rendered_depth, rendered_alpha, top_quantile);
}

/// Distillation against the teacher's pseudo depth; the mask comes from the
/// pseudo depth's own confidence.
inline DepthLoss loss_depth_distill(const DepthMap& pseudo, std::span<const double> rendered_depth,
                                    std::span<const double> rendered_alpha, double top_quantile) {
  return masked_depth_loss(pseudo, rendered_depth, rendered_alpha, top_quantile);
}

// ---------------------------------------------------------------------------
// Pose distillation.

inline double huber(double x, double delta) {
  const double a = std::abs(x);
  return a <= delta ? 0.5 * x * x : delta * (a - 0.5 * delta);
}

inline double huber_grad(double x, double delta) {
  if (std::abs(x) <= delta) return x;
  return x > 0 ? delta : -delta;
}

struct PoseLoss {
  double value = 0.0;
  std::vector<std::array<double, PoseEncoding::kSize>> grad;  // d value / d pred
};

/// Mean over views of Σ_k huber(pseudo_k − pred_k).
inline PoseLoss loss_pose(std::span<const PoseEncoding> pred, std::span<const PoseEncoding> pseudo, double delta) {
  if (pred.size() != pseudo.size()) throw DimensionError("loss_pose: pred and pseudo lengths differ");
  if (!(delta > 0.0)) throw ConfigError("loss_pose: huber delta must be positive");
  PoseLoss out;
  out.grad.resize(pred.size());
  if (pred.empty()) return out;
  const double inv = 1.0 / static_cast<double>(pred.size());
  for (std::size_t v = 0; v < pred.size(); ++v) {
    const auto p = pred[v].to_array(), q = pseudo[v].to_array();
    for (int k = 0; k < PoseEncoding::kSize; ++k) {
      const double r = q[k] - p[k];
      out.value += huber(r, delta) * inv;
      out.grad[v][k] = -huber_grad(r, delta) * inv;
    }
  }
  return out;
}

}  // namespace splatvox
