#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "camera.hpp"
#include "common.hpp"
#include "fitter.hpp"
#include "gaussian.hpp"
#include "io.hpp"
#include "losses.hpp"
#include "renderer.hpp"
#include "voxelizer.hpp"

namespace splatvox {

struct PipelineConfig {
  double epsilon = 0.0;  // voxel size; 0 skips voxelization
  LossWeights weights;
  std::optional<FitConfig> fit;
  int sh_degree = -1;  // -1 accepts whatever degree the bundle carries
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  RenderOptions render;  // final renders when no fit runs; background comes from `background`
  std::uint64_t seed = 0;

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("pipeline: epsilon must be finite and >= 0");
    weights.validate();
    if (fit) fit->validate();
    if (sh_degree != -1) check_sh_degree(sh_degree);
    if (!background.allFinite()) throw ConfigError("pipeline: background must be finite");
    if (render.tile_size < 1) throw ConfigError("pipeline: render tile_size must be positive");
  }
};

/// A component error re-raised with the pipeline stage that produced it.
class PipelineError : public Error {
 public:
  PipelineError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct ReconstructResult {
  GaussianSet gaussians;
  std::vector<Camera> cameras;
  LossReport losses;
  std::vector<RenderBuffers> renders;
  std::size_t lifted_count = 0;
  std::optional<FitResult> fit;  // trace and refined state when a fit ran
};

namespace pipeline_detail {

template <class Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const PipelineError&) {
    throw;
  } catch (const Error& e) {
    throw PipelineError(name, e.what());
  }
}

inline std::vector<RenderBuffers> render_all(const GaussianSet& g, std::span<const Camera> cams,
                                             const RenderOptions& opt) {
  std::vector<RenderBuffers> out(cams.size());
  parallel_for(cams.size(), [&](std::size_t v) { out[v] = render(g, cams[v], opt); });
  return out;
}

inline LossReport evaluate_losses(const CaptureBundle& b, std::span<const Camera> cams,
                                  std::span<const RenderBuffers> renders, const LossWeights& w) {
  const std::size_t nv = b.views.size();
  std::vector<double> rgb(nv), geo(nv), cov(nv), distill(nv);
  std::vector<std::uint8_t> empty(nv), has_pseudo(nv);
  parallel_for(nv, [&](std::size_t v) {
    const auto& bv = b.views[v];
    const auto& r = renders[v];
    rgb[v] = loss_rgb(r.image(), bv.image, w.lambda1, false).value;
    const DepthLoss g = loss_geometry(bv.depth, r.depth, r.alpha, w.top_quantile);
    geo[v] = g.value;
    cov[v] = g.coverage;
    empty[v] = g.empty_mask;
    if (bv.pseudo_depth) {
      has_pseudo[v] = 1;
      distill[v] = loss_depth_distill(*bv.pseudo_depth, r.depth, r.alpha, w.top_quantile).value;
    }
  });
  LossReport rep;
  std::size_t n_pseudo = 0;
  for (std::size_t v = 0; v < nv; ++v) {
    rep.rgb += rgb[v] / static_cast<double>(nv);
    rep.geometry += geo[v] / static_cast<double>(nv);
    rep.mask_coverage += cov[v] / static_cast<double>(nv);
    rep.empty_mask = rep.empty_mask || empty[v];
    if (has_pseudo[v]) {
      rep.depth_distill += distill[v];
      ++n_pseudo;
    }
  }
  if (n_pseudo > 0) rep.depth_distill /= static_cast<double>(n_pseudo);
  if (b.pseudo_cameras) {
    std::vector<PoseEncoding> pred, pseudo;
    for (std::size_t v = 0; v < nv; ++v) {
      pred.push_back(encode_pose(cams[v]));
      pseudo.push_back(encode_pose((*b.pseudo_cameras)[v]));
    }
    rep.pose = loss_pose(pred, pseudo, w.huber_delta).value;
  }
  return loss_total(rep, w);
}

}  // namespace pipeline_detail

/// lift → voxelize → (fit) → render → losses. Losses and renders describe the
/// returned (final) state. Errors name the stage they came from.
inline ReconstructResult reconstruct(const CaptureBundle& bundle, const PipelineConfig& cfg) {
  using namespace pipeline_detail;
  stage("config", [&] {
    cfg.validate();
    bundle.validate();
    if (cfg.sh_degree != -1 && cfg.sh_degree != bundle.sh_degree())
      throw ConfigError("pipeline: sh_degree " + std::to_string(cfg.sh_degree) + " but bundle carries degree " +
                        std::to_string(bundle.sh_degree()));
    return 0;
  });

  ReconstructResult res;
  res.cameras = bundle.cameras;
  GaussianSet lifted = stage("lift", [&] {
    std::vector<DepthMap> depths;
    std::vector<AttributeMaps> attrs;
    for (const auto& v : bundle.views) {
      depths.push_back(v.depth);
      attrs.push_back(v.attrs);
    }
    return lift_views(res.cameras, depths, attrs);
  });
  res.lifted_count = lifted.size();
  res.gaussians = stage("voxelize", [&] { return cfg.epsilon > 0.0 ? voxelize(lifted, cfg.epsilon) : lifted; });

  RenderOptions ropt = cfg.render;
  ropt.background = cfg.background;
  if (cfg.fit) {
    res.fit = stage("fit", [&] {
      FitConfig fc = *cfg.fit;
      fc.render.background = cfg.background;
      std::vector<Image> targets;
      for (const auto& v : bundle.views) targets.push_back(v.image);
      return post_optimize(res.gaussians, res.cameras, targets, fc);
    });
    res.gaussians = res.fit->gaussians;
    res.cameras = res.fit->cameras;
    ropt = cfg.fit->render;
    ropt.background = cfg.background;
  }
  res.renders = stage("render", [&] { return render_all(res.gaussians, res.cameras, ropt); });
  res.losses = stage("loss", [&] { return evaluate_losses(bundle, res.cameras, res.renders, cfg.weights); });
  return res;
}

// ---------------------------------------------------------------------------

struct CountRow {
  int views = 0;
  std::size_t lifted = 0;
  std::size_t gaussians = 0;
  std::size_t peak_bytes = 0;  // lifted set + voxel grid + merged set
};

inline std::size_t gaussian_bytes(const GaussianSet& g) {
  return (g.positions.size() + g.logit_opacity.size() + g.raw_quaternion.size() + g.log_scale.size() +
          g.sh_coeffs.size() + g.confidence.size()) *
         sizeof(double);
}

/// n views spread evenly over the bundle: indices round(k·N/n), k < n. On a
/// ring capture of N views this is the n-view ring.
inline std::vector<int> strided_views(int n_total, int n) {
  if (n < 1 || n > n_total)
    throw InsufficientViewsError("strided_views: cannot pick " + std::to_string(n) + " of " +
                                 std::to_string(n_total) + " views");
  std::vector<int> out;
  for (int k = 0; k < n; ++k)
    out.push_back(std::min(n_total - 1, static_cast<int>(std::lround(static_cast<double>(k) * n_total / n))));
  return out;
}

/// Lifts and voxelizes an evenly strided subset of n views for every n in
/// `view_counts` (which must be increasing).
inline std::vector<CountRow> count_report(const CaptureBundle& b, std::span<const int> view_counts, double epsilon) {
  std::vector<CountRow> rows;
  int prev = 0;
  for (int n : view_counts) {
    if (n <= prev) throw ConfigError("count_report: view counts must be strictly increasing");
    if (static_cast<std::size_t>(n) > b.views.size())
      throw InsufficientViewsError("count_report: bundle has " + std::to_string(b.views.size()) + " views, asked for " +
                                   std::to_string(n));
    prev = n;
    std::vector<Camera> cams;
    std::vector<DepthMap> depths;
    std::vector<AttributeMaps> attrs;
    for (int v : strided_views(static_cast<int>(b.views.size()), n)) {
      cams.push_back(b.cameras[static_cast<std::size_t>(v)]);
      depths.push_back(b.views[static_cast<std::size_t>(v)].depth);
      attrs.push_back(b.views[static_cast<std::size_t>(v)].attrs);
    }
    const GaussianSet lifted = lift_views(cams, depths, attrs);
    CountRow row;
    row.views = n;
    row.lifted = lifted.size();
    row.peak_bytes = gaussian_bytes(lifted);
    if (epsilon > 0.0) {
      const VoxelGrid grid = build_voxel_grid(lifted, epsilon);
      const GaussianSet merged = aggregate(lifted, grid);
      row.gaussians = merged.size();
      row.peak_bytes += gaussian_bytes(merged) + grid.coords.size() * sizeof(VoxelCoord) +
                        grid.offsets.size() * sizeof(std::size_t) +
                        (grid.members.size() + grid.voxel_of.size() + grid.anchor.size()) * sizeof(int) +
                        grid.weights.size() * sizeof(double) + grid.quat_sign.size();
    } else {
      row.gaussians = lifted.size();
    }
    rows.push_back(row);
  }
  return rows;
}

/// True when doubling the view count never doubles the Gaussian count.
inline bool is_sublinear(std::span<const CountRow> rows) {
  for (const auto& a : rows)
    for (const auto& b : rows)
      if (b.views == 2 * a.views && !(b.gaussians < 2 * a.gaussians)) return false;
  return true;
}

inline void write_count_csv(std::ostream& os, std::span<const CountRow> rows) {
  os << "views,lifted,gaussians,peak_bytes\n";
  for (const auto& r : rows) os << r.views << ',' << r.lifted << ',' << r.gaussians << ',' << r.peak_bytes << '\n';
}

}  // namespace splatvox
