#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "common.hpp"
#include "gaussian.hpp"

namespace splatvox {

struct VoxelCoord {
  std::int64_t x = 0, y = 0, z = 0;
  auto operator<=>(const VoxelCoord&) const = default;
};

struct VoxelCoordHash {
  std::size_t operator()(const VoxelCoord& c) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(c.x) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<std::uint64_t>(c.y) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(c.z) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

/// Componentwise round-half-away-from-zero of position / epsilon.
inline std::vector<VoxelCoord> assign_voxels(std::span<const double> positions, double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw InvalidVoxelSizeError("voxel size must be a positive finite number");
  if (positions.size() % 3 != 0) throw DimensionError("assign_voxels: positions must be N×3");
  std::vector<VoxelCoord> out(positions.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto q = [&](int c) { return static_cast<std::int64_t>(std::round(positions[3 * i + c] / epsilon)); };
    out[i] = {q(0), q(1), q(2)};
  }
  return out;
}

/// Softmax of confidences within each voxel, max-subtracted. `voxel_of[g]`
/// is the voxel id of Gaussian g; ids must lie in [0, n_voxels).
inline std::vector<double> compute_weights(std::span<const double> confidence, std::span<const int> voxel_of,
                                           std::size_t n_voxels) {
  if (confidence.size() != voxel_of.size()) throw DimensionError("compute_weights: length mismatch");
  std::vector<double> vmax(n_voxels, -std::numeric_limits<double>::infinity());
  for (std::size_t g = 0; g < confidence.size(); ++g)
    vmax[voxel_of[g]] = std::max(vmax[voxel_of[g]], confidence[g]);
  std::vector<double> sum(n_voxels, 0.0), w(confidence.size());
  for (std::size_t g = 0; g < confidence.size(); ++g) {
    w[g] = std::exp(confidence[g] - vmax[voxel_of[g]]);
    sum[voxel_of[g]] += w[g];
  }
  for (std::size_t g = 0; g < confidence.size(); ++g) w[g] /= sum[voxel_of[g]];
  return w;
}

/// Voxel membership in CSR form. Voxels are ordered by their lowest member id;
/// members of each voxel are sorted by Gaussian id.
struct VoxelGrid {
  double epsilon = 0.0;
  std::vector<VoxelCoord> coords;      // per voxel
  std::vector<std::size_t> offsets;    // per voxel + 1
  std::vector<int> members;            // Gaussian ids, grouped by voxel
  std::vector<int> voxel_of;           // per Gaussian
  std::vector<double> weights;         // per Gaussian
  std::vector<int> anchor;             // per voxel: highest-confidence member
  std::vector<signed char> quat_sign;  // per Gaussian, aligns with the anchor

  std::size_t voxel_count() const { return coords.size(); }
  std::span<const int> members_of(std::size_t s) const {
    return {members.data() + offsets[s], offsets[s + 1] - offsets[s]};
  }
};

inline VoxelGrid build_voxel_grid(const GaussianSet& g, double epsilon) {
  VoxelGrid grid;
  grid.epsilon = epsilon;
  const auto coords = assign_voxels(g.positions, epsilon);
  const std::size_t n = coords.size();

  // Voxels are numbered in order of their lowest-id member, so a grid in
  // which every Gaussian is alone reproduces the input order exactly.
  std::unordered_map<VoxelCoord, int, VoxelCoordHash> index;
  index.reserve(n);
  for (const auto& c : coords)
    if (index.try_emplace(c, static_cast<int>(grid.coords.size())).second) grid.coords.push_back(c);

  const std::size_t nv = grid.coords.size();
  grid.voxel_of.resize(n);
  grid.offsets.assign(nv + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    grid.voxel_of[i] = index[coords[i]];
    ++grid.offsets[grid.voxel_of[i] + 1];
  }
  for (std::size_t s = 0; s < nv; ++s) grid.offsets[s + 1] += grid.offsets[s];
  grid.members.resize(n);
  std::vector<std::size_t> cursor(grid.offsets.begin(), grid.offsets.end() - 1);
  for (std::size_t i = 0; i < n; ++i) grid.members[cursor[grid.voxel_of[i]]++] = static_cast<int>(i);

  grid.weights = compute_weights(g.confidence, grid.voxel_of, nv);

  grid.anchor.resize(nv);
  grid.quat_sign.assign(n, 1);
  for (std::size_t s = 0; s < nv; ++s) {
    int best = grid.members[grid.offsets[s]];
    for (int m : grid.members_of(s))
      if (g.confidence[m] > g.confidence[best]) best = m;
    grid.anchor[s] = best;
    const Quat qa = g.quaternion(best);
    for (int m : grid.members_of(s)) grid.quat_sign[m] = g.quaternion(m).dot(qa) < 0 ? -1 : 1;
  }
  return grid;
}

/// One Gaussian per occupied voxel; every pre-activation attribute is the
/// softmax-weighted combination of the voxel's members.
inline GaussianSet aggregate(const GaussianSet& g, const VoxelGrid& grid) {
  if (grid.voxel_of.size() != g.size()) throw StaleStateError("aggregate: grid was built for a different set");
  const std::size_t nv = grid.voxel_count();
  GaussianSet out(nv, g.sh_degree);
  const std::size_t stride = static_cast<std::size_t>(g.sh_stride());
  std::fill(out.raw_quaternion.begin(), out.raw_quaternion.end(), 0.0);
  parallel_for(nv, [&](std::size_t s) {
    for (int m : grid.members_of(s)) {
      const double w = grid.weights[m];
      const double sign = grid.quat_sign[m];
      for (int c = 0; c < 3; ++c) out.positions[3 * s + c] += w * g.positions[3 * m + c];
      out.logit_opacity[s] += w * g.logit_opacity[m];
      for (int c = 0; c < 4; ++c) out.raw_quaternion[4 * s + c] += w * (sign * g.raw_quaternion[4 * m + c]);
      for (int c = 0; c < 3; ++c) out.log_scale[3 * s + c] += w * g.log_scale[3 * m + c];
      for (std::size_t c = 0; c < stride; ++c) out.sh_coeffs[stride * s + c] += w * g.sh_coeffs[stride * m + c];
      out.confidence[s] += w * g.confidence[m];
    }
  });
  return out;
}

/// Gradients w.r.t. member attributes and confidences given gradients on the
/// aggregated set. Voxel assignment is treated as constant.
inline GaussianGrads voxelize_backward(const GaussianSet& g, const VoxelGrid& grid, const GaussianSet& aggregated,
                                       const GaussianGrads& upstream) {
  if (grid.voxel_of.size() != g.size() || aggregated.size() != grid.voxel_count() ||
      upstream.logit_opacity.size() != grid.voxel_count())
    throw StaleStateError("voxelize_backward: cached forward state does not match the gradients");
  GaussianGrads out(g);
  const std::size_t stride = static_cast<std::size_t>(g.sh_stride());
  parallel_for(grid.voxel_count(), [&](std::size_t s) {
    for (int m : grid.members_of(s)) {
      const double w = grid.weights[m];
      const double sign = grid.quat_sign[m];
      double dot = 0.0;  // Σ_attr dL/dā · (a_g − ā)
      for (int c = 0; c < 3; ++c) {
        const double up = upstream.positions[3 * s + c];
        out.positions[3 * m + c] = w * up;
        dot += up * (g.positions[3 * m + c] - aggregated.positions[3 * s + c]);
      }
      {
        const double up = upstream.logit_opacity[s];
        out.logit_opacity[m] = w * up;
        dot += up * (g.logit_opacity[m] - aggregated.logit_opacity[s]);
      }
      for (int c = 0; c < 4; ++c) {
        const double up = upstream.raw_quaternion[4 * s + c];
        out.raw_quaternion[4 * m + c] = w * sign * up;
        dot += up * (sign * g.raw_quaternion[4 * m + c] - aggregated.raw_quaternion[4 * s + c]);
      }
      for (int c = 0; c < 3; ++c) {
        const double up = upstream.log_scale[3 * s + c];
        out.log_scale[3 * m + c] = w * up;
        dot += up * (g.log_scale[3 * m + c] - aggregated.log_scale[3 * s + c]);
      }
      for (std::size_t c = 0; c < stride; ++c) {
        const double up = upstream.sh_coeffs[stride * s + c];
        out.sh_coeffs[stride * m + c] = w * up;
        dot += up * (g.sh_coeffs[stride * m + c] - aggregated.sh_coeffs[stride * s + c]);
      }
      const double up_c = upstream.confidence[s];
      dot += up_c * (g.confidence[m] - aggregated.confidence[s]);
      out.confidence[m] = w * up_c + w * dot;
    }
  });
  return out;
}

/// Stateful wrapper that caches the forward pass for the backward call.
class Voxelizer {
 public:
  explicit Voxelizer(double epsilon) : epsilon_(epsilon) {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon))
      throw InvalidVoxelSizeError("voxel size must be a positive finite number");
  }

  const GaussianSet& forward(const GaussianSet& g) {
    input_ = g;
    grid_ = build_voxel_grid(g, epsilon_);
    output_ = aggregate(g, grid_);
    valid_ = true;
    return output_;
  }

  GaussianGrads backward(const GaussianGrads& upstream) const {
    if (!valid_) throw StaleStateError("voxelizer backward called before forward");
    return voxelize_backward(input_, grid_, output_, upstream);
  }

  void reset() { valid_ = false; }
  const VoxelGrid& grid() const { return grid_; }
  double epsilon() const { return epsilon_; }

 private:
  double epsilon_;
  bool valid_ = false;
  GaussianSet input_, output_;
  VoxelGrid grid_;
};

/// Convenience: build grid and aggregate in one call.
inline GaussianSet voxelize(const GaussianSet& g, double epsilon) { return aggregate(g, build_voxel_grid(g, epsilon)); }

}  // namespace splatvox
