#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "camera.hpp"
#include "common.hpp"
#include "gaussian.hpp"
#include "io.hpp"
#include "renderer.hpp"
#include "sh.hpp"

namespace splatvox {

enum class SceneLayout {
  Volume,  // centres uniform in the cube, random orientations
  Shell,   // flattened discs tangent to a sphere inside the cube
};

/// Parameters of the self-generated oracle capture. The default is the
/// standard capture used throughout the tests: a textured spherical shell of
/// thin discs, seen from a small ring of cameras inside it, each looking
/// through the centroid at the far wall. Every pixel sees surface, so there
/// are no silhouettes.
struct SyntheticSpec {
  int n_gaussians = 3000;
  int n_views = 8;
  int width = 64;
  int height = 64;
  int sh_degree = 1;
  std::uint64_t seed = 0;
  double ring_radius = 0.15;
  double ring_height = 0.0;
  double focal = 1.0;  // normalized, fx = focal·width

  SceneLayout layout = SceneLayout::Shell;
  double shell_radius = 0.5;
  double colour_jitter = 0.05;  // per-disc colour offset on top of the smooth field
  // Ground-truth extents drawn from [scale_min, scale_max], the third axis
  // (the shell normal) multiplied by `flatness`.
  double scale_min = 0.02;
  double scale_max = 0.035;
  double flatness = 0.1;
  double opacity_logit_min = 4.0;
  double opacity_logit_max = 7.0;

  // Pixels whose accumulated alpha reaches this value carry a depth.
  double depth_alpha_threshold = 0.5;
  // Lifted Gaussians span this many pixel footprints along their longest axis.
  double footprint_scale = 1.3;
  // Noise on the predictor outputs (cameras, depth, attributes).
  double param_noise = 0.0;
  // Noise on the pseudo labels (pseudo pose, pseudo depth).
  double pseudo_pose_noise = 0.0;
  double pseudo_depth_noise = 0.0;

  void validate() const {
    if (n_gaussians < 1) throw ConfigError("synthetic: n_gaussians must be >= 1");
    if (n_views < 1) throw ConfigError("synthetic: n_views must be >= 1");
    if (width < 1 || height < 1) throw ConfigError("synthetic: image size must be positive");
    check_sh_degree(sh_degree);
    if (!(ring_radius > 0.0)) throw ConfigError("synthetic: ring_radius must be positive");
    if (!(focal > 0.0)) throw ConfigError("synthetic: focal must be positive");
    if (!(depth_alpha_threshold > 0.0 && depth_alpha_threshold < 1.0))
      throw ConfigError("synthetic: depth_alpha_threshold must lie in (0, 1)");
    if (!(footprint_scale > 0.0)) throw ConfigError("synthetic: footprint_scale must be positive");
    for (double s : {param_noise, pseudo_pose_noise, pseudo_depth_noise})
      if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("synthetic: noise levels must be finite and >= 0");
  }
};

/// World size of one pixel where the central ray meets the far side of the
/// scene: (shell radius + ring radius) / fx for the shell layout, centroid
/// distance / fx for the volume layout.
inline double far_pixel_footprint(const SyntheticSpec& spec) {
  const double dist = spec.layout == SceneLayout::Shell ? spec.shell_radius + spec.ring_radius : spec.ring_radius;
  return dist / (spec.focal * spec.width);
}

/// Voxel size of the standard capture: 1.1 far-wall pixel footprints.
inline double standard_voxel_size(const SyntheticSpec& spec) { return 1.1 * far_pixel_footprint(spec); }

struct SyntheticScene {
  GaussianSet gaussians;  // ground truth
  CaptureBundle bundle;
};

namespace synth_detail {

// Independent RNG streams so every draw is a pure function of (seed, purpose, index).
enum Stream : std::uint64_t {
  kScene = 1,
  kCameraNoise = 2,
  kDepthNoise = 3,
  kAttrNoise = 4,
  kPseudoPose = 5,
  kPseudoDepth = 6,
};

inline std::uint64_t stream(Stream s, std::size_t view) { return (static_cast<std::uint64_t>(s) << 32) | view; }

inline Camera perturb_camera(const Camera& c, double sigma, CounterRng& rng) {
  if (sigma == 0.0) return c;
  auto e = encode_pose(c).to_array();
  for (double& x : e) x += sigma * rng.normal();
  const double qn = std::sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2] + e[3] * e[3]);
  for (int k = 0; k < 4; ++k) e[k] /= qn;
  return decode_pose(PoseEncoding::from_array(e), c.width, c.height);
}

inline DepthMap lognormal_depth(const DepthMap& d, double sigma, CounterRng& rng) {
  if (sigma == 0.0) return d;
  DepthMap out = d;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z = rng.normal();  // drawn for every pixel to keep the stream layout fixed
    if (out.valid[i]) out.depth[i] = static_cast<float>(out.depth[i] * std::exp(sigma * z));
  }
  return out;
}

inline GaussianSet random_scene(const SyntheticSpec& spec) {
  CounterRng rng(spec.seed, stream(kScene, 0));
  GaussianSet g(static_cast<std::size_t>(spec.n_gaussians), spec.sh_degree);
  const int k = g.coeffs_per_channel();
  // Smooth colour field for the shell layout: a few random low-frequency waves.
  Eigen::Matrix3d wave;
  Eigen::Vector3d phase;
  for (int c = 0; c < 3; ++c) {
    for (int d = 0; d < 3; ++d) wave(c, d) = rng.uniform(-1.5, 1.5);
    phase[c] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    Eigen::Vector3d pos;
    Quat q;
    if (spec.layout == SceneLayout::Shell) {
      // Discs tangent to a sphere, their thin axis along the normal.
      Eigen::Vector3d n(rng.normal(), rng.normal(), rng.normal());
      n.normalize();
      pos = spec.shell_radius * n;
      Eigen::Vector3d t1 = n.unitOrthogonal();
      const double spin = rng.uniform(0.0, 2.0 * std::numbers::pi);
      t1 = std::cos(spin) * t1 + std::sin(spin) * n.cross(t1);
      Eigen::Matrix3d r;
      r.col(0) = t1;
      r.col(1) = n.cross(t1);
      r.col(2) = n;
      q = rotmat_to_quat(r);
    } else {
      pos = Eigen::Vector3d(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
      q = Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal());
      q.normalize();
    }
    g.set_position(i, pos);
    for (int c = 0; c < 4; ++c) g.raw_quaternion[4 * i + c] = q[c];
    for (int c = 0; c < 3; ++c) g.log_scale[3 * i + c] = std::log(rng.uniform(spec.scale_min, spec.scale_max));
    g.log_scale[3 * i + 2] += std::log(spec.flatness);
    g.logit_opacity[i] = rng.uniform(spec.opacity_logit_min, spec.opacity_logit_max);
    auto sh = g.sh(i);
    for (int c = 0; c < 3; ++c) {
      const double base = spec.layout == SceneLayout::Shell
                              ? 0.5 + 0.3 * std::sin(wave.row(c).dot(pos) + phase[c]) + spec.colour_jitter * rng.uniform(-1.0, 1.0)
                              : rng.uniform(0.1, 0.9);
      sh[static_cast<std::size_t>(c * k)] = (base - 0.5) / kShC0;
      for (int j = 1; j < k; ++j) sh[static_cast<std::size_t>(c * k + j)] = rng.uniform(-0.1, 0.1);
    }
    g.confidence[i] = 1.0;
  }
  return g;
}

inline std::vector<Camera> ring_cameras(const SyntheticSpec& spec, const Eigen::Vector3d& centre) {
  std::vector<Camera> cams;
  for (int v = 0; v < spec.n_views; ++v) {
    const double a = 2.0 * std::numbers::pi * v / spec.n_views;
    const Eigen::Vector3d eye =
        centre + Eigen::Vector3d(spec.ring_radius * std::cos(a), -spec.ring_height, spec.ring_radius * std::sin(a));
    cams.push_back(look_at_camera(eye, centre, spec.focal * spec.width, spec.width, spec.height));
  }
  return cams;
}

/// Sum of unit-height splat kernels over the pixel lattice for a
/// fronto-parallel field of lifted Gaussians: how many neighbours overlap a pixel.
inline double lattice_overlap(double footprint_scale, double dilation) {
  const double var = footprint_scale * footprint_scale + dilation;
  double s = 0.0;
  for (int i = -8; i <= 8; ++i)
    for (int j = -8; j <= 8; ++j) s += std::exp(-0.5 * (i * i + j * j) / var);
  return s;
}

/// Depth, attribute maps and image for one ground-truth view. Each pixel's
/// attributes are chosen so that a Gaussian lifted from it reproduces the
/// rendered colour when seen from this view.
inline BundleView observe(const GaussianSet& g, const Camera& cam, const SyntheticSpec& spec) {
  SplatIntermediate cache;
  const RenderBuffers r = render(g, cam, RenderOptions{}, &cache);
  const std::vector<int> front = front_gaussian_ids(cache);
  const int w = cam.width, h = cam.height;
  BundleView bv;
  bv.image = quantize_image(r.image());
  bv.depth = DepthMap(w, h);
  bv.attrs = AttributeMaps(w, h, spec.sh_degree);
  auto& a = bv.attrs;
  const int k = sh_coeff_count(spec.sh_degree);
  const std::size_t stride = static_cast<std::size_t>(3 * k);
  // A pixel sees ~`overlap` neighbouring splats, so an opacity a composites to
  // roughly 1 − (1 − a)^overlap; invert that to hit the observed alpha.
  const double overlap = lattice_overlap(spec.footprint_scale, RenderOptions{}.cov2d_dilation);
  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      const std::size_t p = static_cast<std::size_t>(py) * w + px;
      const double alpha = r.alpha[p];
      const int f = front[p];
      if (alpha < spec.depth_alpha_threshold || f < 0) {
        a.raw_quaternion[4 * p] = 1.0f;
        a.logit_opacity[p] = static_cast<float>(logit(1e-4));
        a.log_scale[3 * p] = a.log_scale[3 * p + 1] = a.log_scale[3 * p + 2] = static_cast<float>(std::log(1e-3));
        continue;
      }
      const double depth = r.depth[p];
      bv.depth.depth[p] = static_cast<float>(depth);
      bv.depth.confidence[p] = static_cast<float>(alpha);
      const std::size_t fi = static_cast<std::size_t>(f);
      for (int c = 0; c < 4; ++c) a.raw_quaternion[4 * p + c] = static_cast<float>(g.raw_quaternion[4 * fi + c]);
      const double footprint = spec.footprint_scale * depth / cam.fx;
      // Footprint-sized, with the front Gaussian's aspect ratios so surface
      // discs stay thin along their normal.
      const Eigen::Vector3d ls = g.log_scales(fi);
      for (int c = 0; c < 3; ++c) a.log_scale[3 * p + c] = static_cast<float>(std::log(footprint) + ls[c] - ls.maxCoeff());
      const double opacity = 1.0 - std::pow(1.0 - std::min(alpha, 0.9999), 1.0 / overlap);
      a.logit_opacity[p] = static_cast<float>(logit(std::clamp(opacity, 1e-4, 0.999)));
      a.confidence[p] = static_cast<float>(alpha);

      // Un-premultiplied colour, then solve the DC term against the
      // front Gaussian's higher-order coefficients along this pixel's ray.
      const Eigen::Vector3d x = backproject_pixel(cam, px, py, depth);
      const Eigen::Vector3d dir = (x - cam.translation).normalized();
      const auto basis = sh_basis(spec.sh_degree, dir);
      const auto src = g.sh(fi);
      for (int c = 0; c < 3; ++c) {
        const double colour = r.rgb[3 * p + c] / alpha;
        double rest = 0.0;
        for (int j = 1; j < k; ++j) {
          const double coef = src[static_cast<std::size_t>(c * k + j)];
          a.sh_coeffs[stride * p + static_cast<std::size_t>(c * k + j)] = static_cast<float>(coef);
          rest += static_cast<double>(static_cast<float>(coef)) * basis[static_cast<std::size_t>(j)];
        }
        a.sh_coeffs[stride * p + static_cast<std::size_t>(c * k)] =
            static_cast<float>((colour - 0.5 - rest) / basis[0]);
      }
    }
  }
  bv.depth.refresh_validity();
  return bv;
}

inline void perturb_attributes(AttributeMaps& a, const DepthMap& d, double sigma, CounterRng& rng) {
  if (sigma == 0.0) return;
  const std::size_t stride = a.sh_coeffs.size() / a.size();
  auto jitter = [&](float& x, bool live) {
    const double z = rng.normal();
    if (live) x = static_cast<float>(x + sigma * z);
  };
  for (std::size_t p = 0; p < a.size(); ++p) {
    const bool live = d.valid[p] != 0;
    jitter(a.logit_opacity[p], live);
    for (int c = 0; c < 4; ++c) jitter(a.raw_quaternion[4 * p + c], live);
    for (int c = 0; c < 3; ++c) jitter(a.log_scale[3 * p + c], live);
    for (std::size_t c = 0; c < stride; ++c) jitter(a.sh_coeffs[stride * p + c], live);
  }
}

}  // namespace synth_detail

/// Ground-truth scene plus the capture bundle a perfect (noise 0) or
/// perturbed predictor would emit for it. Camera 0 is the gauge anchor and is
/// never perturbed. Deterministic per seed and independent of thread count.
inline SyntheticScene generate_synthetic(const SyntheticSpec& spec) {
  using namespace synth_detail;
  spec.validate();
  SyntheticScene out;
  out.gaussians = random_scene(spec);
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < out.gaussians.size(); ++i) centroid += out.gaussians.position(i);
  centroid /= static_cast<double>(out.gaussians.size());
  const std::vector<Camera> gt_cams = ring_cameras(spec, centroid);
  const std::size_t nv = gt_cams.size();

  CaptureBundle& b = out.bundle;
  b.name = "synthetic-" + std::to_string(spec.seed);
  b.units = "unit cube";
  b.views.resize(nv);
  b.cameras.resize(nv);
  b.gt_cameras = gt_cams;
  b.pseudo_cameras = std::vector<Camera>(nv);
  parallel_for(nv, [&](std::size_t v) {
    BundleView clean = observe(out.gaussians, gt_cams[v], spec);
    CounterRng cam_rng(spec.seed, stream(kCameraNoise, v));
    CounterRng pose_rng(spec.seed, stream(kPseudoPose, v));
    b.cameras[v] = v == 0 ? gt_cams[v] : perturb_camera(gt_cams[v], spec.param_noise, cam_rng);
    (*b.pseudo_cameras)[v] = v == 0 ? gt_cams[v] : perturb_camera(gt_cams[v], spec.pseudo_pose_noise, pose_rng);

    CounterRng pd_rng(spec.seed, stream(kPseudoDepth, v));
    clean.pseudo_depth = lognormal_depth(clean.depth, spec.pseudo_depth_noise, pd_rng);
    CounterRng d_rng(spec.seed, stream(kDepthNoise, v));
    clean.depth = lognormal_depth(clean.depth, spec.param_noise, d_rng);
    CounterRng a_rng(spec.seed, stream(kAttrNoise, v));
    perturb_attributes(clean.attrs, clean.depth, spec.param_noise, a_rng);
    b.views[v] = std::move(clean);
  });
  b.validate();
  return out;
}

}  // namespace splatvox
