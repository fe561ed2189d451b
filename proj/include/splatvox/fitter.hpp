#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "camera.hpp"
#include "common.hpp"
#include "gaussian.hpp"
#include "losses.hpp"
#include "renderer.hpp"

namespace splatvox {

struct FitConfig {
  int steps = 1000;
  double lr_position = 1.6e-4;
  double lr_scale = 5e-3;
  double lr_rotation = 1e-3;
  double lr_opacity = 5e-2;
  double lr_color = 2.5e-3;
  double lr_camera = 5e-3;
  double prune_opacity = 0.01;
  double ssim_weight = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  RenderOptions render;
  int checkpoint_every = 0;  // 0 disables the checkpoint callback

  void validate() const {
    if (steps < 0) throw ConfigError("fit: steps must be non-negative");
    for (double lr : {lr_position, lr_scale, lr_rotation, lr_opacity, lr_color, lr_camera})
      if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("fit: learning rates must be finite and >= 0");
    if (!(prune_opacity >= 0.0 && prune_opacity < 1.0)) throw ConfigError("fit: prune_opacity must lie in [0, 1)");
    if (!(ssim_weight >= 0.0) || !std::isfinite(ssim_weight)) throw ConfigError("fit: ssim_weight must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("fit: Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("fit: Adam epsilon must be positive");
    if (checkpoint_every < 0) throw ConfigError("fit: checkpoint_every must be non-negative");
  }
};

/// Keeps the Gaussians whose activated opacity is at least `threshold`.
inline GaussianSet prune(const GaussianSet& g, double threshold) {
  if (!(threshold >= 0.0 && threshold < 1.0)) throw ConfigError("prune: threshold must lie in [0, 1)");
  GaussianSet out(0, g.sh_degree);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.opacity(i) >= threshold) out.push_from(g, i);
  if (out.empty()) throw EmptySceneError("prune: every Gaussian fell below opacity " + std::to_string(threshold));
  return out;
}

// ---------------------------------------------------------------------------

/// Adam over one flat parameter buffer.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  /// Applies one update; `t` is the 1-based step count for bias correction.
  void step(std::span<double> params, std::span<const double> grad, int t) {
    if (lr_ == 0.0) return;
    const double c1 = 1.0 - std::pow(b1_, t), c2 = 1.0 - std::pow(b2_, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  double lr_ = 0.0, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  std::vector<double> m_, v_;
};

struct FitTraceEntry {
  int step = 0;
  double total = 0.0;
  double mse = 0.0;
  double dssim = 0.0;
};

struct FitResult {
  GaussianSet gaussians;
  std::vector<Camera> cameras;
  std::vector<FitTraceEntry> trace;  // steps + 1 entries: before each update, then final
};

inline void write_trace_csv(std::ostream& os, std::span<const FitTraceEntry> trace) {
  os << "step,total,mse,dssim\n";
  char buf[128];
  for (const auto& e : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", e.step, e.total, e.mse, e.dssim);
    os << buf;
  }
}

using FitCheckpoint = std::function<void(int step, const GaussianSet&, std::span<const Camera>)>;

namespace fit_detail {

struct Evaluation {
  FitTraceEntry entry;
  GaussianGrads grads;
  std::vector<std::array<double, PoseEncoding::kSize>> camera_grads;
};

inline Evaluation evaluate(const GaussianSet& g, std::span<const Camera> cams, std::span<const Image> targets,
                           const FitConfig& cfg, bool want_grad, std::vector<SplatIntermediate>& caches) {
  const std::size_t nv = cams.size();
  caches.resize(nv);
  std::vector<RgbLoss> losses(nv);
  std::vector<RenderBackward> back(nv);
  parallel_for(nv, [&](std::size_t v) {
    SplatIntermediate& cache = caches[v];
    const RenderBuffers b = render(g, cams[v], cfg.render, want_grad ? &cache : nullptr);
    losses[v] = loss_rgb(b.image(), targets[v], cfg.ssim_weight, want_grad);
    if (!want_grad) return;
    RenderGrads up;
    up.rgb = std::move(losses[v].grad);
    for (double& x : up.rgb) x /= static_cast<double>(nv);
    back[v] = render_backward(g, cache, up);
  });
  Evaluation ev;
  for (const auto& l : losses) {
    ev.entry.total += l.value / static_cast<double>(nv);
    ev.entry.mse += l.mse / static_cast<double>(nv);
    ev.entry.dssim += l.dssim / static_cast<double>(nv);
  }
  if (want_grad) {
    ev.grads.reset(g);
    for (std::size_t v = 0; v < nv; ++v) {
      ev.grads += back[v].gaussians;
      ev.camera_grads.push_back(back[v].camera);
    }
  }
  return ev;
}

}  // namespace fit_detail

/// Joint refinement of Gaussians and cameras against the target images by
/// full-batch Adam on MSE + ssim_weight·DSSIM averaged over views. Camera 0
/// is the gauge anchor and is never modified.
inline FitResult fit(const GaussianSet& gaussians, std::span<const Camera> cams, std::span<const Image> targets,
                     const FitConfig& cfg, const FitCheckpoint& checkpoint = {}) {
  cfg.validate();
  if (cams.empty()) throw InsufficientViewsError("fit: need at least one view");
  if (cams.size() != targets.size()) throw DimensionError("fit: camera and target counts differ");
  for (std::size_t v = 0; v < cams.size(); ++v) {
    validate_camera(cams[v]);
    if (targets[v].width != cams[v].width || targets[v].height != cams[v].height || targets[v].channels != 3)
      throw DimensionError("fit: target " + std::to_string(v) + " does not match its camera");
  }
  if (!gaussians.consistent()) throw DimensionError("fit: inconsistent Gaussian buffers");

  FitResult res{gaussians, std::vector<Camera>(cams.begin(), cams.end()), {}};
  GaussianSet& g = res.gaussians;
  const std::size_t n = g.size();
  Adam a_pos(3 * n, cfg.lr_position, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Adam a_scale(3 * n, cfg.lr_scale, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Adam a_rot(4 * n, cfg.lr_rotation, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Adam a_opa(n, cfg.lr_opacity, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Adam a_col(g.sh_coeffs.size(), cfg.lr_color, cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::vector<Adam> a_cam;
  std::vector<std::array<double, PoseEncoding::kSize>> enc;
  for (const auto& c : res.cameras) {
    a_cam.emplace_back(PoseEncoding::kSize, cfg.lr_camera, cfg.beta1, cfg.beta2, cfg.adam_eps);
    enc.push_back(encode_pose(c).to_array());
  }

  auto check_finite = [](const FitTraceEntry& e) {
    if (std::isfinite(e.total)) return;
    const char* term = !std::isfinite(e.mse) ? "mse" : "dssim";
    throw NonFiniteLossError("fit: non-finite loss at step " + std::to_string(e.step) + " (term " + term + ")");
  };

  std::vector<SplatIntermediate> caches;  // reused across steps to avoid reallocation
  for (int step = 0; step < cfg.steps; ++step) {
    auto ev = fit_detail::evaluate(g, res.cameras, targets, cfg, true, caches);
    ev.entry.step = step;
    check_finite(ev.entry);
    res.trace.push_back(ev.entry);

    const int t = step + 1;
    a_pos.step(g.positions, ev.grads.positions, t);
    a_scale.step(g.log_scale, ev.grads.log_scale, t);
    a_rot.step(g.raw_quaternion, ev.grads.raw_quaternion, t);
    a_opa.step(g.logit_opacity, ev.grads.logit_opacity, t);
    a_col.step(g.sh_coeffs, ev.grads.sh_coeffs, t);
    if (cfg.lr_camera > 0.0) {
      for (std::size_t v = 1; v < res.cameras.size(); ++v) {
        a_cam[v].step(enc[v], ev.camera_grads[v], t);
        const double qn = std::sqrt(enc[v][0] * enc[v][0] + enc[v][1] * enc[v][1] + enc[v][2] * enc[v][2] +
                                    enc[v][3] * enc[v][3]);
        for (int k = 0; k < 4; ++k) enc[v][k] /= qn;
        res.cameras[v] = decode_pose(PoseEncoding::from_array(enc[v]), res.cameras[v].width, res.cameras[v].height);
      }
    }
    if (checkpoint && cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0) checkpoint(t, g, res.cameras);
  }
  auto final_eval = fit_detail::evaluate(g, res.cameras, targets, cfg, false, caches);
  final_eval.entry.step = cfg.steps;
  check_finite(final_eval.entry);
  res.trace.push_back(final_eval.entry);
  return res;
}

/// Optional post-optimization: prune low-opacity Gaussians once, then fit.
inline FitResult post_optimize(const GaussianSet& gaussians, std::span<const Camera> cams,
                               std::span<const Image> targets, const FitConfig& cfg,
                               const FitCheckpoint& checkpoint = {}) {
  cfg.validate();
  return fit(prune(gaussians, cfg.prune_opacity), cams, targets, cfg, checkpoint);
}

}  // namespace splatvox
