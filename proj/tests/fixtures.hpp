#pragma once
// Test-only fixtures for the file-format checks: scratch directories and
// random scenes and bundles with full-precision values.

#include <unistd.h>

#include <string>

#include "oracles.hpp"
#include "splatvox/io.hpp"

namespace splatvox::testing {

// Scratch directory removed at scope exit.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("splatvox_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

inline GaussianSet random_scene(CounterRng& rng, std::size_t n, int degree) {
  GaussianSet g = random_visible_gaussians(rng, test_camera(), n, degree);
  for (auto& x : g.positions) x += rng.normal() * 1e-3;  // full double mantissas
  return g;
}

inline DepthMap random_depth(CounterRng& rng, int w, int h) {
  DepthMap d(w, h);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const bool valid = rng.uniform() < 0.8;
    d.depth[i] = valid ? static_cast<float>(rng.uniform(0.1, 5.0)) : 0.0f;
    d.confidence[i] = static_cast<float>(rng.uniform());
  }
  d.refresh_validity();
  return d;
}

inline CaptureBundle random_bundle(CounterRng& rng, int n_views, int degree, bool with_pseudo) {
  const int w = 5 + static_cast<int>(rng.uniform_int(0, 6)), h = 4 + static_cast<int>(rng.uniform_int(0, 6));
  CaptureBundle b;
  b.name = "random";
  b.units = "metres";
  for (int v = 0; v < n_views; ++v) {
    BundleView bv;
    bv.image = Image(w, h, 3);
    for (auto& x : bv.image.data) x = static_cast<double>(rng.uniform_int(0, 255)) / 255.0;
    bv.depth = random_depth(rng, w, h);
    bv.attrs = AttributeMaps(w, h, degree);
    for (auto* buf : {&bv.attrs.logit_opacity, &bv.attrs.raw_quaternion, &bv.attrs.log_scale, &bv.attrs.sh_coeffs,
                      &bv.attrs.confidence})
      for (auto& x : *buf) x = static_cast<float>(rng.normal());
    if (with_pseudo) bv.pseudo_depth = random_depth(rng, w, h);
    b.views.push_back(std::move(bv));
    b.cameras.push_back(random_camera(rng, w, h));
  }
  if (with_pseudo) {
    b.gt_cameras.emplace();
    b.pseudo_cameras.emplace();
    for (int v = 0; v < n_views; ++v) {
      b.gt_cameras->push_back(random_camera(rng, w, h));
      b.pseudo_cameras->push_back(random_camera(rng, w, h));
    }
  }
  return b;
}

inline bool same_depth(const DepthMap& a, const DepthMap& b) {
  return a.width == b.width && a.height == b.height && a.depth == b.depth && a.confidence == b.confidence &&
         a.valid == b.valid;
}

inline bool same_cameras(const std::vector<Camera>& a, const std::vector<Camera>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].rotation != b[i].rotation || a[i].translation != b[i].translation ||
        format_camera_line(a[i]) != format_camera_line(b[i]))
      return false;
  return true;
}

/// Field-by-field bitwise equality of two bundles.
inline bool same_bundle(const CaptureBundle& a, const CaptureBundle& b) {
  if (a.name != b.name || a.units != b.units || a.views.size() != b.views.size()) return false;
  if (!same_cameras(a.cameras, b.cameras)) return false;
  if (a.gt_cameras.has_value() != b.gt_cameras.has_value()) return false;
  if (a.gt_cameras && !same_cameras(*a.gt_cameras, *b.gt_cameras)) return false;
  if (a.pseudo_cameras.has_value() != b.pseudo_cameras.has_value()) return false;
  if (a.pseudo_cameras && !same_cameras(*a.pseudo_cameras, *b.pseudo_cameras)) return false;
  for (std::size_t v = 0; v < a.views.size(); ++v) {
    const auto &x = a.views[v], &y = b.views[v];
    if (x.image.data != y.image.data || !same_depth(x.depth, y.depth)) return false;
    if (x.attrs.sh_degree != y.attrs.sh_degree || x.attrs.logit_opacity != y.attrs.logit_opacity ||
        x.attrs.raw_quaternion != y.attrs.raw_quaternion || x.attrs.log_scale != y.attrs.log_scale ||
        x.attrs.sh_coeffs != y.attrs.sh_coeffs || x.attrs.confidence != y.attrs.confidence)
      return false;
    if (x.pseudo_depth.has_value() != y.pseudo_depth.has_value()) return false;
    if (x.pseudo_depth && !same_depth(*x.pseudo_depth, *y.pseudo_depth)) return false;
  }
  return true;
}

}  // namespace splatvox::testing
