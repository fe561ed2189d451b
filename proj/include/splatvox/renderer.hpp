#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "camera.hpp"
#include "common.hpp"
#include "gaussian.hpp"
#include "sh.hpp"

namespace splatvox {

struct RenderOptions {
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  int tile_size = 16;
  double near_plane = 0.01;
  double cov2d_dilation = 0.3;     // px², added to the projected covariance diagonal
  double alpha_cutoff = 1.0 / 255.0;
  double extent_sigmas = 3.0;
  // Centres further off-axis than this multiple of the half field of view are
  // culled; without it, splats grazing the near plane beside the camera blow
  // up to cover the whole image.
  double frustum_guard = 1.3;
  // Compositing stops once transmittance falls below this value. Zero keeps
  // every contribution, which makes the compositing sum exact.
  double min_transmittance = 0.0;
};

struct RenderBuffers {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;    // H×W×3
  std::vector<double> depth;  // H×W, alpha-normalized expected depth
  std::vector<double> alpha;  // H×W

  Image image() const {
    Image im(width, height, 3);
    im.data = rgb;
    return im;
  }
  friend bool operator==(const RenderBuffers&, const RenderBuffers&) = default;
};

/// Upstream gradients on the render outputs. Empty vectors count as zero.
struct RenderGrads {
  std::vector<double> rgb, depth, alpha;
};

/// Result of the per-Gaussian EWA projection step.
struct ProjectedSplat {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
  double depth = 0.0;
  bool culled = true;
};

/// True when a camera-space centre lies behind the near plane or outside the
/// guarded frustum; such Gaussians are culled before any covariance work.
inline bool outside_frustum(const Camera& cam, const Eigen::Vector3d& p, double near_plane, double frustum_guard) {
  if (!(p.z() > near_plane) || !p.allFinite()) return true;
  if (frustum_guard > 0.0) {
    const double lim_x = frustum_guard * std::max(cam.cx, cam.width - cam.cx) / cam.fx;
    const double lim_y = frustum_guard * std::max(cam.cy, cam.height - cam.cy) / cam.fy;
    if (std::abs(p.x() / p.z()) > lim_x || std::abs(p.y() / p.z()) > lim_y) return true;
  }
  return false;
}

/// mean2d, cov2d = J·W·Σ·Wᵀ·Jᵀ + dilation·I and camera-space depth.
inline ProjectedSplat project_gaussian(const Camera& cam, const Eigen::Vector3d& position,
                                       const Eigen::Matrix3d& cov3d, double near_plane = 0.01,
                                       double dilation = 0.3, double frustum_guard = 1.3) {
  ProjectedSplat s;
  const Eigen::Matrix3d w = cam.rotation_matrix().transpose();
  const Eigen::Vector3d p = w * (position - cam.translation);
  s.depth = p.z();
  if (outside_frustum(cam, p, near_plane, frustum_guard)) return s;
  const double z = p.z(), z2 = z * z;
  Eigen::Matrix<double, 2, 3> j;
  j << cam.fx / z, 0.0, -cam.fx * p.x() / z2, 0.0, cam.fy / z, -cam.fy * p.y() / z2;
  const Eigen::Matrix<double, 2, 3> t = j * w;
  s.cov = t * cov3d * t.transpose();
  s.cov(0, 1) = s.cov(1, 0) = 0.5 * (s.cov(0, 1) + s.cov(1, 0));
  s.cov(0, 0) += dilation;
  s.cov(1, 1) += dilation;
  s.mean = Eigen::Vector2d(cam.fx * p.x() / z + cam.cx, cam.fy * p.y() / z + cam.cy);
  s.culled = !(s.cov.determinant() > 0.0) || !s.cov.allFinite() || !s.mean.allFinite();
  return s;
}

/// Forward cache kept for the backward pass.
struct SplatIntermediate {
  struct Splat {
    double mean_x = 0, mean_y = 0;
    double conic_a = 0, conic_b = 0, conic_c = 0;
    double depth = 0;
    double opacity = 0;
    // Below this exponent the splat is either outside its extent or under
    // the alpha cutoff, so exp() can be skipped.
    double power_min = 0;
    std::array<double, 3> color{};
    int x_min = 0, x_max = -1, y_min = 0, y_max = -1;
    bool visible = false;
  };
  // One splat's share of one pixel, as seen by the forward walk.
  struct Contribution {
    int slot;  // position within the tile list
    double alpha;
    double transmittance;  // before this splat
    double gauss;          // exp(power)
    double dx, dy;
  };
  // What the backward pass needs to replay a contribution; alpha, offsets and
  // transmittance are recomputed from the splat with the same arithmetic.
  struct Recorded {
    int slot;
    double gauss;
  };

  bool valid = false;
  Camera camera;
  RenderOptions options;
  std::size_t n_gaussians = 0;
  int tiles_x = 0, tiles_y = 0;
  std::vector<Splat> splats;
  std::vector<std::size_t> tile_offsets;  // tiles_x·tiles_y + 1
  std::vector<int> tile_ids;              // depth-sorted per tile
  std::vector<Splat> tile_splats;         // splats[tile_ids[k]], packed for locality
  // Per tile: front-to-back contributions of each pixel (row-major within the
  // tile), delimited by contrib_offsets[t] (pixels in tile + 1 entries).
  std::vector<std::vector<Recorded>> contribs;
  std::vector<std::vector<std::uint32_t>> contrib_offsets;

  std::size_t bytes() const {
    return sizeof(*this) + splats.capacity() * sizeof(Splat) + tile_offsets.capacity() * sizeof(std::size_t) +
           tile_ids.capacity() * sizeof(int) + tile_splats.capacity() * sizeof(Splat) + contrib_bytes();
  }
  std::size_t contrib_bytes() const {
    std::size_t n = 0;
    for (const auto& c : contribs) n += c.capacity() * sizeof(Recorded);
    for (const auto& o : contrib_offsets) n += o.capacity() * sizeof(std::uint32_t);
    return n;
  }
};

struct RenderBackward {
  GaussianGrads gaussians;
  std::array<double, PoseEncoding::kSize> camera{};  // d/d(q, t, f) of the pose encoding
};

namespace render_detail {

inline Eigen::Vector3d view_direction(const Eigen::Vector3d& mu, const Eigen::Vector3d& eye, double* norm_out) {
  const Eigen::Vector3d v = mu - eye;
  const double n = v.norm();
  if (norm_out) *norm_out = n;
  if (!(n > 0.0)) return Eigen::Vector3d(0.0, 0.0, 1.0);
  return v / n;
}

using PixelContribution = SplatIntermediate::Contribution;

// Walks the tile list for one pixel, calling `visit` on each contribution.
// Returns the final transmittance.
// Walks `n` tile slots (slot_at(i) gives the i-th, in depth order) for one
// pixel, calling `visit` on each contribution. Returns the final
// transmittance.
template <class SlotAt, class Visit>
double composite_slots(const SplatIntermediate& cache, std::size_t begin, std::size_t n, SlotAt&& slot_at, int px,
                       int py, Visit&& visit) {
  const auto& opt = cache.options;
  const SplatIntermediate::Splat* list = cache.tile_splats.data() + begin;
  double t = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int k = slot_at(i);
    const auto& s = list[k];
    if (px < s.x_min || px > s.x_max || py < s.y_min || py > s.y_max) continue;
    const double dx = px - s.mean_x, dy = py - s.mean_y;
    const double power = -0.5 * (s.conic_a * dx * dx + 2.0 * s.conic_b * dx * dy + s.conic_c * dy * dy);
    if (power < s.power_min) continue;
    const double g = std::exp(power);
    const double a = s.opacity * g;
    if (a < opt.alpha_cutoff) continue;
    visit(PixelContribution{k, a, t, g, dx, dy});
    t *= (1.0 - a);
    if (t < opt.min_transmittance) break;
  }
  return t;
}

template <class Visit>
double composite_pixel(const SplatIntermediate& cache, std::size_t begin, std::size_t end, int px, int py,
                       Visit&& visit) {
  return composite_slots(
      cache, begin, end - begin, [](std::size_t i) { return static_cast<int>(i); }, px, py, visit);
}

// For each pixel column [x0, x0 + cols.size()) of row `py`, the tile slots
// whose bounding box covers that pixel, in depth order. Pixels then walk
// only splats that can reach them.
inline void pixel_slots(const SplatIntermediate& cache, std::size_t begin, std::size_t end, int x0, int py,
                        std::vector<std::vector<int>>& cols) {
  for (auto& c : cols) c.clear();
  const int x1 = x0 + static_cast<int>(cols.size()) - 1;
  for (std::size_t k = begin; k < end; ++k) {
    const auto& s = cache.tile_splats[k];
    if (py < s.y_min || py > s.y_max) continue;
    for (int x = std::max(x0, s.x_min); x <= std::min(x1, s.x_max); ++x) cols[x - x0].push_back(static_cast<int>(k - begin));
  }
}

}  // namespace render_detail

/// Projects, bins and composites. Fills `cache` for render_backward.
inline RenderBuffers render(const GaussianSet& g, const Camera& cam, const RenderOptions& opt,
                            SplatIntermediate* cache_out) {
  validate_camera(cam);
  if (!g.consistent()) throw DimensionError("render: inconsistent Gaussian buffers");
  if (opt.tile_size < 1) throw DimensionError("render: tile size must be positive");
  SplatIntermediate local;
  SplatIntermediate& cache = cache_out ? *cache_out : local;
  // A reused cache keeps its buffers' capacity; only the contents are reset.
  cache.valid = false;
  cache.camera = cam;
  cache.options = opt;
  cache.n_gaussians = g.size();
  cache.splats.assign(g.size(), SplatIntermediate::Splat{});

  const int w = cam.width, h = cam.height, ts = opt.tile_size;
  cache.tiles_x = (w + ts - 1) / ts;
  cache.tiles_y = (h + ts - 1) / ts;
  const Eigen::Matrix3d world_to_cam = cam.rotation_matrix().transpose();

  parallel_for(g.size(), [&](std::size_t i) {
    auto& s = cache.splats[i];
    const Eigen::Vector3d mu = g.position(i);
    if (outside_frustum(cam, world_to_cam * (mu - cam.translation), opt.near_plane, opt.frustum_guard)) return;
    const Eigen::Matrix3d cov3 = covariance_from_params(g.quaternion(i), g.log_scales(i));
    const ProjectedSplat p = project_gaussian(cam, mu, cov3, opt.near_plane, opt.cov2d_dilation, opt.frustum_guard);
    if (p.culled) return;
    const double a = p.cov(0, 0), b = p.cov(0, 1), c = p.cov(1, 1);
    const double det = a * c - b * b;
    if (!(det > 0.0)) return;
    const double mid = 0.5 * (a + c);
    const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
    const double radius = opt.extent_sigmas * std::sqrt(lambda_max);
    // Pixels can only contribute inside the ellipse where both the extent
    // and the alpha cutoff are met; its bounding box is usually much smaller
    // than the circle of the major axis. The small slack keeps the box
    // conservative under rounding.
    const double opacity = g.opacity(i);
    const double power_floor = -0.5 * opt.extent_sigmas * opt.extent_sigmas;
    const double power_min = std::max(power_floor, std::log(opt.alpha_cutoff / opacity) - 1e-9);
    if (!(power_min <= 0.0)) return;
    const double level = -2.0 * power_min * (1.0 + 1e-9);
    const double rx = std::min(radius, std::sqrt(level * a)), ry = std::min(radius, std::sqrt(level * c));
    s.x_min = std::max(0, static_cast<int>(std::ceil(p.mean.x() - rx)));
    s.x_max = std::min(w - 1, static_cast<int>(std::floor(p.mean.x() + rx)));
    s.y_min = std::max(0, static_cast<int>(std::ceil(p.mean.y() - ry)));
    s.y_max = std::min(h - 1, static_cast<int>(std::floor(p.mean.y() + ry)));
    s.power_min = power_min;
    if (s.x_min > s.x_max || s.y_min > s.y_max) return;
    s.mean_x = p.mean.x();
    s.mean_y = p.mean.y();
    s.conic_a = c / det;
    s.conic_b = -b / det;
    s.conic_c = a / det;
    s.depth = p.depth;
    s.opacity = opacity;
    const Eigen::Vector3d dir = render_detail::view_direction(mu, cam.translation, nullptr);
    const Eigen::Vector3d rgb = evaluate_sh(g.sh(i), g.sh_degree, dir);
    for (int k = 0; k < 3; ++k) s.color[k] = std::clamp(rgb[k], 0.0, 1.0);
    s.visible = true;
  });

  // Bin into tiles; ids enter in ascending order so a stable sort on depth
  // breaks ties by id.
  const std::size_t n_tiles = static_cast<std::size_t>(cache.tiles_x) * cache.tiles_y;
  cache.tile_offsets.assign(n_tiles + 1, 0);
  for (const auto& s : cache.splats) {
    if (!s.visible) continue;
    for (int ty = s.y_min / ts; ty <= s.y_max / ts; ++ty)
      for (int tx = s.x_min / ts; tx <= s.x_max / ts; ++tx)
        ++cache.tile_offsets[static_cast<std::size_t>(ty) * cache.tiles_x + tx + 1];
  }
  for (std::size_t t = 0; t < n_tiles; ++t) cache.tile_offsets[t + 1] += cache.tile_offsets[t];
  cache.tile_ids.resize(cache.tile_offsets[n_tiles]);
  {
    std::vector<std::size_t> cursor(cache.tile_offsets.begin(), cache.tile_offsets.end() - 1);
    for (std::size_t i = 0; i < cache.splats.size(); ++i) {
      const auto& s = cache.splats[i];
      if (!s.visible) continue;
      for (int ty = s.y_min / ts; ty <= s.y_max / ts; ++ty)
        for (int tx = s.x_min / ts; tx <= s.x_max / ts; ++tx)
          cache.tile_ids[cursor[static_cast<std::size_t>(ty) * cache.tiles_x + tx]++] = static_cast<int>(i);
    }
  }
  parallel_for(n_tiles, [&](std::size_t t) {
    std::stable_sort(cache.tile_ids.begin() + cache.tile_offsets[t], cache.tile_ids.begin() + cache.tile_offsets[t + 1],
                     [&](int a, int b) { return cache.splats[a].depth < cache.splats[b].depth; });
  });
  cache.tile_splats.resize(cache.tile_ids.size());
  for (std::size_t k = 0; k < cache.tile_ids.size(); ++k) cache.tile_splats[k] = cache.splats[cache.tile_ids[k]];

  const bool record = cache_out != nullptr;
  if (record) {
    cache.contribs.resize(n_tiles);
    cache.contrib_offsets.resize(n_tiles);
  } else {
    cache.contribs.clear();
    cache.contrib_offsets.clear();
  }

  RenderBuffers out;
  out.width = w;
  out.height = h;
  out.rgb.assign(static_cast<std::size_t>(w) * h * 3, 0.0);
  out.depth.assign(static_cast<std::size_t>(w) * h, 0.0);
  out.alpha.assign(static_cast<std::size_t>(w) * h, 0.0);
  parallel_for(n_tiles, [&](std::size_t t) {
    const int tx = static_cast<int>(t % cache.tiles_x), ty = static_cast<int>(t / cache.tiles_x);
    const std::size_t begin = cache.tile_offsets[t], end = cache.tile_offsets[t + 1];
    if (record) {
      cache.contribs[t].clear();
      cache.contrib_offsets[t].assign(1, 0);
    }
    const int x0 = tx * ts;
    std::vector<std::vector<int>> cols(static_cast<std::size_t>(std::min(w, x0 + ts) - x0));
    for (int py = ty * ts; py < std::min(h, (ty + 1) * ts); ++py) {
      render_detail::pixel_slots(cache, begin, end, x0, py, cols);
      for (int px = x0; px < std::min(w, x0 + ts); ++px) {
        const auto& col = cols[static_cast<std::size_t>(px - x0)];
        double rgb[3] = {0.0, 0.0, 0.0};
        double dacc = 0.0;
        const double t_final = render_detail::composite_slots(
            cache, begin, col.size(), [&](std::size_t i) { return col[i]; }, px, py,
            [&](const render_detail::PixelContribution& pc) {
              const auto& s = cache.tile_splats[begin + pc.slot];
              const double wgt = pc.alpha * pc.transmittance;
              for (int k = 0; k < 3; ++k) rgb[k] += wgt * s.color[k];
              dacc += wgt * s.depth;
              if (record) cache.contribs[t].push_back({pc.slot, pc.gauss});
            });
        if (record) cache.contrib_offsets[t].push_back(static_cast<std::uint32_t>(cache.contribs[t].size()));
        const std::size_t pix = static_cast<std::size_t>(py) * w + px;
        for (int k = 0; k < 3; ++k) out.rgb[3 * pix + k] = rgb[k] + t_final * opt.background[k];
        const double acc = 1.0 - t_final;
        out.alpha[pix] = acc;
        out.depth[pix] = dacc / std::max(acc, 1e-8);
      }
    }
  });
  cache.valid = true;
  return out;
}

inline RenderBuffers render(const GaussianSet& g, const Camera& cam, const RenderOptions& opt = {}) {
  return render(g, cam, opt, nullptr);
}

/// Id of the visibly front-most Gaussian at each pixel (−1 if none): the one
/// with the largest blending weight α·T, so faint tails of splats in front
/// do not win over the surface actually seen. Read from a filled forward cache.
inline std::vector<int> front_gaussian_ids(const SplatIntermediate& cache) {
  if (!cache.valid) throw StaleStateError("front_gaussian_ids: no forward pass cached");
  const int w = cache.camera.width, h = cache.camera.height, ts = cache.options.tile_size;
  std::vector<int> ids(static_cast<std::size_t>(w) * h, -1);
  for (int py = 0; py < h; ++py)
    for (int px = 0; px < w; ++px) {
      const std::size_t t = static_cast<std::size_t>(py / ts) * cache.tiles_x + px / ts;
      const std::size_t begin = cache.tile_offsets[t], end = cache.tile_offsets[t + 1];
      int& id = ids[static_cast<std::size_t>(py) * w + px];
      double best = 0.0;
      render_detail::composite_pixel(cache, begin, end, px, py, [&](const render_detail::PixelContribution& pc) {
        const double weight = pc.alpha * pc.transmittance;
        if (weight > best) {
          best = weight;
          id = cache.tile_ids[begin + pc.slot];
        }
      });
    }
  return ids;
}

/// Analytic gradients of the render w.r.t. every Gaussian parameter and the
/// camera pose encoding. Depth-sort order is treated as constant.
inline RenderBackward render_backward(const GaussianSet& g, const SplatIntermediate& cache,
                                      const RenderGrads& upstream) {
  if (!cache.valid) throw StaleStateError("render_backward: no forward pass cached");
  if (cache.n_gaussians != g.size()) throw StaleStateError("render_backward: cache built for a different scene");
  const Camera& cam = cache.camera;
  const auto& opt = cache.options;
  const int w = cam.width, h = cam.height, ts = opt.tile_size;
  const std::size_t npix = static_cast<std::size_t>(w) * h;
  auto check = [&](const std::vector<double>& v, std::size_t n, const char* name) {
    if (!v.empty() && v.size() != n)
      throw DimensionError(std::string("render_backward: upstream ") + name + " has wrong size");
  };
  check(upstream.rgb, 3 * npix, "rgb");
  check(upstream.depth, npix, "depth");
  check(upstream.alpha, npix, "alpha");

  // Per-splat screen-space gradients.
  struct ScreenGrad {
    double mean_x = 0, mean_y = 0, conic_a = 0, conic_b = 0, conic_c = 0, opacity = 0, depth = 0;
    double color[3] = {0, 0, 0};
  };
  const std::size_t n_tiles = static_cast<std::size_t>(cache.tiles_x) * cache.tiles_y;
  std::vector<std::vector<ScreenGrad>> tile_grads(n_tiles);

  parallel_for(n_tiles, [&](std::size_t t) {
    const std::size_t begin = cache.tile_offsets[t], end = cache.tile_offsets[t + 1];
    auto& local = tile_grads[t];
    local.assign(end - begin, ScreenGrad{});
    if (begin == end) return;
    const int tx = static_cast<int>(t % cache.tiles_x), ty = static_cast<int>(t / cache.tiles_x);
    const auto& recorded = cache.contribs[t];
    const auto& offsets = cache.contrib_offsets[t];
    std::vector<double> alphas, trans;
    std::size_t local_pix = 0;
    for (int py = ty * ts; py < std::min(h, (ty + 1) * ts); ++py) {
      for (int px = tx * ts; px < std::min(w, (tx + 1) * ts); ++px, ++local_pix) {
        const std::size_t pix = static_cast<std::size_t>(py) * w + px;
        const double g_rgb[3] = {upstream.rgb.empty() ? 0.0 : upstream.rgb[3 * pix],
                                 upstream.rgb.empty() ? 0.0 : upstream.rgb[3 * pix + 1],
                                 upstream.rgb.empty() ? 0.0 : upstream.rgb[3 * pix + 2]};
        const double g_depth = upstream.depth.empty() ? 0.0 : upstream.depth[pix];
        const double g_alpha = upstream.alpha.empty() ? 0.0 : upstream.alpha[pix];
        if (g_rgb[0] == 0.0 && g_rgb[1] == 0.0 && g_rgb[2] == 0.0 && g_depth == 0.0 && g_alpha == 0.0) continue;

        // Replay the forward walk in the same order so t_final and dacc match
        // the forward values bit for bit.
        const std::span<const SplatIntermediate::Recorded> contribs(recorded.data() + offsets[local_pix],
                                                                    offsets[local_pix + 1] - offsets[local_pix]);
        alphas.resize(contribs.size());
        trans.resize(contribs.size());
        double dacc = 0.0, t_final = 1.0;
        for (std::size_t c = 0; c < contribs.size(); ++c) {
          const auto& s = cache.tile_splats[begin + contribs[c].slot];
          const double a = s.opacity * contribs[c].gauss;
          alphas[c] = a;
          trans[c] = t_final;
          dacc += a * t_final * s.depth;
          t_final *= (1.0 - a);
        }
        const double acc = 1.0 - t_final;
        double g_dacc, g_acc = g_alpha;
        if (acc > 1e-8) {
          g_dacc = g_depth / acc;
          g_acc -= g_depth * dacc / (acc * acc);
        } else {
          g_dacc = g_depth / 1e-8;
        }

        // Back-to-front: B* hold what lies behind the current splat.
        double bc[3] = {opt.background[0], opt.background[1], opt.background[2]};
        double bz = 0.0, ba = 0.0;
        for (std::size_t c = contribs.size(); c-- > 0;) {
          const auto* it = &contribs[c];
          const auto& s = cache.tile_splats[begin + it->slot];
          auto& sg = local[it->slot];
          const double a = alphas[c], tr = trans[c];
          double d_alpha = 0.0;
          for (int k = 0; k < 3; ++k) {
            d_alpha += g_rgb[k] * (s.color[k] - bc[k]);
            sg.color[k] += tr * a * g_rgb[k];
          }
          d_alpha += g_dacc * (s.depth - bz) + g_acc * (1.0 - ba);
          d_alpha *= tr;
          sg.depth += tr * a * g_dacc;
          for (int k = 0; k < 3; ++k) bc[k] = a * s.color[k] + (1.0 - a) * bc[k];
          bz = a * s.depth + (1.0 - a) * bz;
          ba = a + (1.0 - a) * ba;

          sg.opacity += d_alpha * it->gauss;
          const double d_power = d_alpha * a;
          const double dx = px - s.mean_x, dy = py - s.mean_y;
          sg.mean_x += d_power * (s.conic_a * dx + s.conic_b * dy);
          sg.mean_y += d_power * (s.conic_b * dx + s.conic_c * dy);
          sg.conic_a += -0.5 * d_power * dx * dx;
          sg.conic_b += -d_power * dx * dy;
          sg.conic_c += -0.5 * d_power * dy * dy;
        }
      }
    }
  });

  // Fixed-order reduction over tiles.
  std::vector<ScreenGrad> screen(g.size());
  for (std::size_t t = 0; t < n_tiles; ++t) {
    const std::size_t begin = cache.tile_offsets[t];
    for (std::size_t k = 0; k < tile_grads[t].size(); ++k) {
      auto& dst = screen[cache.tile_ids[begin + k]];
      const auto& src = tile_grads[t][k];
      dst.mean_x += src.mean_x;
      dst.mean_y += src.mean_y;
      dst.conic_a += src.conic_a;
      dst.conic_b += src.conic_b;
      dst.conic_c += src.conic_c;
      dst.opacity += src.opacity;
      dst.depth += src.depth;
      for (int c = 0; c < 3; ++c) dst.color[c] += src.color[c];
    }
  }

  RenderBackward out;
  out.gaussians.reset(g);
  struct CameraGrad {
    Eigen::Matrix3d d_rot = Eigen::Matrix3d::Zero();
    Eigen::Vector3d d_t = Eigen::Vector3d::Zero();
    double d_fx = 0, d_fy = 0;
  };
  std::vector<CameraGrad> cam_grads(g.size());
  const Eigen::Matrix3d rc = cam.rotation_matrix();
  const Eigen::Matrix3d wmat = rc.transpose();
  const int degree = g.sh_degree;
  const int kcoef = g.coeffs_per_channel();

  parallel_for(g.size(), [&](std::size_t i) {
    const auto& s = cache.splats[i];
    if (!s.visible) return;
    const ScreenGrad& sg = screen[i];
    auto& gg = out.gaussians;
    auto& cg = cam_grads[i];

    const Eigen::Vector3d mu = g.position(i);
    const Eigen::Vector3d v = mu - cam.translation;
    const Eigen::Vector3d p = wmat * v;
    const double z = p.z(), z2 = z * z, z3 = z2 * z;
    Eigen::Vector3d d_mu = Eigen::Vector3d::Zero();
    Eigen::Vector3d d_p = Eigen::Vector3d::Zero();

    // Colour through clamp and SH.
    {
      double vnorm = 0.0;
      const Eigen::Vector3d dir = render_detail::view_direction(mu, cam.translation, &vnorm);
      std::array<double, 16> basis{};
      std::array<Eigen::Vector3d, 16> basis_grad{};
      sh_basis_with_grad(degree, dir, basis, basis_grad);
      const auto coeffs = g.sh(i);
      Eigen::Vector3d d_dir = Eigen::Vector3d::Zero();
      for (int c = 0; c < 3; ++c) {
        double raw = 0.5;
        for (int j = 0; j < kcoef; ++j) raw += coeffs[c * kcoef + j] * basis[j];
        const double d_raw = (raw >= 0.0 && raw <= 1.0) ? sg.color[c] : 0.0;
        if (d_raw == 0.0) continue;
        for (int j = 0; j < kcoef; ++j) {
          gg.sh_coeffs[i * 3 * kcoef + c * kcoef + j] = d_raw * basis[j];
          d_dir += d_raw * coeffs[c * kcoef + j] * basis_grad[j];
        }
      }
      if (vnorm > 0.0) {
        const Eigen::Vector3d d_v = (d_dir - dir * dir.dot(d_dir)) / vnorm;
        d_mu += d_v;
        cg.d_t -= d_v;
      }
    }

    // Opacity.
    {
      const double o = s.opacity;
      gg.logit_opacity[i] = sg.opacity * o * (1.0 - o);
    }

    // Conic -> 2D covariance.
    Eigen::Matrix2d q;
    q << s.conic_a, s.conic_b, s.conic_b, s.conic_c;
    Eigen::Matrix2d gq;
    gq << sg.conic_a, 0.5 * sg.conic_b, 0.5 * sg.conic_b, sg.conic_c;
    const Eigen::Matrix2d d_cov2 = -q * gq * q;

    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx / z, 0.0, -cam.fx * p.x() / z2, 0.0, cam.fy / z, -cam.fy * p.y() / z2;
    const Eigen::Matrix<double, 2, 3> tmat = jac * wmat;
    const Quat rq = g.quaternion(i);
    const Eigen::Vector3d ls = g.log_scales(i);
    const Eigen::Matrix3d cov3 = covariance_from_params(rq, ls);

    const Eigen::Matrix3d d_cov3 = tmat.transpose() * d_cov2 * tmat;
    Quat d_q;
    Eigen::Vector3d d_ls;
    covariance_backward(rq, ls, d_cov3, d_q, d_ls);
    for (int c = 0; c < 4; ++c) gg.raw_quaternion[4 * i + c] = d_q[c];
    for (int c = 0; c < 3; ++c) gg.log_scale[3 * i + c] = d_ls[c];

    const Eigen::Matrix<double, 2, 3> d_t = 2.0 * d_cov2 * tmat * cov3;
    const Eigen::Matrix<double, 2, 3> d_j = d_t * wmat.transpose();
    const Eigen::Matrix3d d_w = jac.transpose() * d_t;

    d_p.x() += d_j(0, 2) * (-cam.fx / z2);
    d_p.y() += d_j(1, 2) * (-cam.fy / z2);
    d_p.z() += d_j(0, 0) * (-cam.fx / z2) + d_j(0, 2) * (2.0 * cam.fx * p.x() / z3) + d_j(1, 1) * (-cam.fy / z2) +
               d_j(1, 2) * (2.0 * cam.fy * p.y() / z3);
    cg.d_fx += d_j(0, 0) / z - d_j(0, 2) * p.x() / z2;
    cg.d_fy += d_j(1, 1) / z - d_j(1, 2) * p.y() / z2;

    // Projected mean.
    d_p.x() += sg.mean_x * cam.fx / z;
    d_p.y() += sg.mean_y * cam.fy / z;
    d_p.z() += -sg.mean_x * cam.fx * p.x() / z2 - sg.mean_y * cam.fy * p.y() / z2;
    cg.d_fx += sg.mean_x * p.x() / z;
    cg.d_fy += sg.mean_y * p.y() / z;

    // Composited depth.
    d_p.z() += sg.depth;

    // p = W (mu - t), W = Rcᵀ.
    const Eigen::Vector3d d_v = wmat.transpose() * d_p;
    d_mu += d_v;
    cg.d_t -= d_v;
    const Eigen::Matrix3d d_w_total = d_w + d_p * v.transpose();
    cg.d_rot += d_w_total.transpose();

    for (int c = 0; c < 3; ++c) gg.positions[3 * i + c] = d_mu[c];
  });

  CameraGrad total;
  for (const auto& cg : cam_grads) {
    total.d_rot += cg.d_rot;
    total.d_t += cg.d_t;
    total.d_fx += cg.d_fx;
    total.d_fy += cg.d_fy;
  }
  const Quat d_cam_q = quat_to_rotmat_backward(cam.rotation, total.d_rot);
  for (int c = 0; c < 4; ++c) out.camera[c] = d_cam_q[c];
  for (int c = 0; c < 3; ++c) out.camera[4 + c] = total.d_t[c];
  out.camera[7] = total.d_fx * cam.width;
  out.camera[8] = total.d_fy * cam.height;
  return out;
}

/// Stateful forward/backward pair; backward before forward is an error.
class SplatRenderer {
 public:
  explicit SplatRenderer(RenderOptions opt = {}) : opt_(opt) {}

  const RenderBuffers& forward(const GaussianSet& g, const Camera& cam) {
    buffers_ = render(g, cam, opt_, &cache_);
    return buffers_;
  }

  RenderBackward backward(const GaussianSet& g, const RenderGrads& upstream) const {
    return render_backward(g, cache_, upstream);
  }

  const SplatIntermediate& cache() const { return cache_; }
  const RenderOptions& options() const { return opt_; }

 private:
  RenderOptions opt_;
  SplatIntermediate cache_;
  RenderBuffers buffers_;
};

}  // namespace splatvox
