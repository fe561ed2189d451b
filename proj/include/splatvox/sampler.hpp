#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "camera.hpp"
#include "common.hpp"

namespace splatvox {

enum class SamplingStrategy { ObjectRandom, SequentialGap, PoseDistance };

struct SamplingSpec {
  SamplingStrategy strategy = SamplingStrategy::ObjectRandom;
  int count = 1;
  int min_gap = 0;
  int max_gap = 0;
  double distance_threshold = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;

  void validate() const {
    if (count < 1) throw ConfigError("sampling: count must be >= 1");
    if (strategy == SamplingStrategy::SequentialGap && min_gap > max_gap)
      throw ConfigError("sampling: min_gap must not exceed max_gap");
    if (strategy == SamplingStrategy::PoseDistance && !(distance_threshold >= 0.0))
      throw ConfigError("sampling: distance_threshold must be >= 0");
  }
};

namespace sampler_detail {

/// `count` distinct values from `pool`, uniformly, via a partial Fisher-Yates
/// shuffle; returned sorted.
inline std::vector<int> choose(std::vector<int> pool, int count, CounterRng& rng) {
  for (int i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(i, static_cast<std::int64_t>(pool.size()) - 1));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(count));
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline std::vector<int> iota(int begin, int end) {
  std::vector<int> v(static_cast<std::size_t>(std::max(0, end - begin)));
  std::iota(v.begin(), v.end(), begin);
  return v;
}

}  // namespace sampler_detail

/// Uniform sample of `count` views without replacement, sorted.
inline std::vector<int> sample_object_random(int n_total, int count, std::uint64_t seed) {
  if (count < 1) throw ConfigError("sample_object_random: count must be >= 1");
  if (count > n_total)
    throw InsufficientViewsError("sample_object_random: asked for " + std::to_string(count) + " of " +
                                 std::to_string(n_total) + " views");
  CounterRng rng(seed);
  return sampler_detail::choose(sampler_detail::iota(0, n_total), count, rng);
}

/// Gap g ~ U[min_gap, max_gap], start s ~ U[0, n_total−1−g]; the endpoints s
/// and s+g are always selected and count toward `count`, the rest are drawn
/// uniformly from the open interval between them. A single view is just s.
inline std::vector<int> sample_sequential_gap(int n_total, int count, int min_gap, int max_gap, std::uint64_t seed) {
  if (count < 1) throw ConfigError("sample_sequential_gap: count must be >= 1");
  if (min_gap > max_gap) throw ConfigError("sample_sequential_gap: min_gap must not exceed max_gap");
  if (min_gap < count - 1 || max_gap >= n_total || min_gap < 0)
    throw InsufficientViewsError("sample_sequential_gap: need count-1 <= min_gap <= max_gap < n_total (count " +
                                 std::to_string(count) + ", gaps [" + std::to_string(min_gap) + ", " +
                                 std::to_string(max_gap) + "], " + std::to_string(n_total) + " views)");
  CounterRng rng(seed);
  const int gap = static_cast<int>(rng.uniform_int(min_gap, max_gap));
  const int start = static_cast<int>(rng.uniform_int(0, n_total - 1 - gap));
  if (count == 1) return {start};
  std::vector<int> out = sampler_detail::choose(sampler_detail::iota(start + 1, start + gap), count - 2, rng);
  out.insert(out.begin(), start);
  out.push_back(start + gap);
  return out;
}

/// Picks a random reference view, then `count` views uniformly among those
/// whose camera centre lies within `threshold` of the reference centre
/// (the reference itself included). References are tried in a seeded random
/// order until one has enough neighbours.
inline std::vector<int> sample_pose_distance(std::span<const Camera> cams, int count, double threshold,
                                             std::uint64_t seed) {
  if (count < 1) throw ConfigError("sample_pose_distance: count must be >= 1");
  if (!(threshold >= 0.0)) throw ConfigError("sample_pose_distance: threshold must be >= 0");
  const int n = static_cast<int>(cams.size());
  CounterRng rng(seed);
  std::vector<int> refs = sampler_detail::iota(0, n);
  for (int i = n - 1; i > 0; --i)
    std::swap(refs[static_cast<std::size_t>(i)], refs[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  for (int ref : refs) {
    std::vector<int> near;
    for (int j = 0; j < n; ++j)
      if ((cams[static_cast<std::size_t>(j)].translation - cams[static_cast<std::size_t>(ref)].translation).norm() <=
          threshold)
        near.push_back(j);
    if (static_cast<int>(near.size()) >= count) return sampler_detail::choose(std::move(near), count, rng);
  }
  throw InsufficientViewsError("sample_pose_distance: no reference view has " + std::to_string(count) +
                               " neighbours within " + std::to_string(threshold));
}

inline std::vector<int> sample_views(const SamplingSpec& spec, int n_total, std::span<const Camera> cams = {}) {
  spec.validate();
  switch (spec.strategy) {
    case SamplingStrategy::ObjectRandom:
      return sample_object_random(n_total, spec.count, spec.seed);
    case SamplingStrategy::SequentialGap:
      return sample_sequential_gap(n_total, spec.count, spec.min_gap, spec.max_gap, spec.seed);
    case SamplingStrategy::PoseDistance:
      if (static_cast<int>(cams.size()) != n_total)
        throw DimensionError("sample_views: pose-distance sampling needs one camera per view");
      return sample_pose_distance(cams, spec.count, spec.distance_threshold, spec.seed);
  }
  throw ConfigError("sample_views: unknown strategy");
}

enum class SplitMode { Sparse, Dense };

struct EvalSplit {
  std::vector<int> context;
  std::vector<int> target;
};

/// Dense: every 8th view (0, 8, 16, …) is a target. Sparse: every 2nd view.
inline EvalSplit split_eval(int n_total, SplitMode mode) {
  const int stride = mode == SplitMode::Dense ? 8 : 2;
  if (n_total < stride)
    throw InsufficientViewsError("split_eval: " + std::string(mode == SplitMode::Dense ? "dense" : "sparse") +
                                 " split needs at least " + std::to_string(stride) + " views, got " +
                                 std::to_string(n_total));
  EvalSplit s;
  for (int i = 0; i < n_total; ++i) (i % stride == 0 ? s.target : s.context).push_back(i);
  return s;
}

}  // namespace splatvox
