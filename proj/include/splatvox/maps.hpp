#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace splatvox {

inline int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Per-view predicted depth with confidence. Invalid pixels carry depth 0.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> depth;
  std::vector<float> confidence;
  std::vector<std::uint8_t> valid;

  DepthMap() = default;
  DepthMap(int w, int h)
      : width(w),
        height(h),
        depth(static_cast<std::size_t>(w) * h, 0.0f),
        confidence(static_cast<std::size_t>(w) * h, 0.0f),
        valid(static_cast<std::size_t>(w) * h, 0) {}

  std::size_t size() const { return static_cast<std::size_t>(width) * height; }

  /// Re-derives validity from the depth values: valid iff finite and > 0.
  void refresh_validity() {
    valid.assign(size(), 0);
    for (std::size_t i = 0; i < size(); ++i) valid[i] = std::isfinite(depth[i]) && depth[i] > 0.0f;
  }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v ? 1 : 0;
    return n;
  }
};

/// Pixel-aligned Gaussian attribute predictions for one view, stored
/// pre-activation. Channel layouts per pixel: rotation (w,x,y,z),
/// scale (3 log-scales), sh (3 channels × (degree+1)^2, channel-major).
struct AttributeMaps {
  int width = 0;
  int height = 0;
  int sh_degree = 1;
  std::vector<float> logit_opacity;
  std::vector<float> raw_quaternion;
  std::vector<float> log_scale;
  std::vector<float> sh_coeffs;
  std::vector<float> confidence;

  AttributeMaps() = default;
  AttributeMaps(int w, int h, int degree)
      : width(w), height(h), sh_degree(degree) {
    const std::size_t n = static_cast<std::size_t>(w) * h;
    logit_opacity.assign(n, 0.0f);
    raw_quaternion.assign(4 * n, 0.0f);
    log_scale.assign(3 * n, 0.0f);
    sh_coeffs.assign(3 * static_cast<std::size_t>(sh_coeff_count(degree)) * n, 0.0f);
    confidence.assign(n, 0.0f);
  }

  std::size_t size() const { return static_cast<std::size_t>(width) * height; }

  bool consistent() const {
    const std::size_t n = size();
    return logit_opacity.size() == n && raw_quaternion.size() == 4 * n && log_scale.size() == 3 * n &&
           sh_coeffs.size() == 3 * static_cast<std::size_t>(sh_coeff_count(sh_degree)) * n &&
           confidence.size() == n;
  }
};

}  // namespace splatvox
