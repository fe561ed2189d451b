#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace splatvox {

// Error hierarchy. Every domain failure derives from Error so the CLI can
// map it to exit code 1 without catching unrelated exceptions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SPLATVOX_DEFINE_ERROR(Name)          \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  }

SPLATVOX_DEFINE_ERROR(InvalidCameraError);
SPLATVOX_DEFINE_ERROR(InvalidEncodingError);
SPLATVOX_DEFINE_ERROR(DimensionError);
SPLATVOX_DEFINE_ERROR(EmptySceneError);
SPLATVOX_DEFINE_ERROR(UnsupportedDegreeError);
SPLATVOX_DEFINE_ERROR(InvalidVoxelSizeError);
SPLATVOX_DEFINE_ERROR(StaleStateError);
SPLATVOX_DEFINE_ERROR(DegenerateScaleError);
SPLATVOX_DEFINE_ERROR(InsufficientViewsError);
SPLATVOX_DEFINE_ERROR(UndefinedMetricError);
SPLATVOX_DEFINE_ERROR(SizeError);
SPLATVOX_DEFINE_ERROR(ParseError);
SPLATVOX_DEFINE_ERROR(IoError);
SPLATVOX_DEFINE_ERROR(ConfigError);
SPLATVOX_DEFINE_ERROR(NonFiniteLossError);

#undef SPLATVOX_DEFINE_ERROR

/// Row-major H×W×C image of doubles. RGB images use C = 3.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c = 3, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  double& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// Threading. Work is split by index; callers write results per index so the
// output never depends on how many workers ran.

namespace detail {
inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{0};
  return cap;
}
inline thread_local bool inside_parallel_region = false;
}  // namespace detail

/// Caps the number of worker threads (0 = hardware concurrency).
inline void set_max_threads(int n) { detail::thread_cap().store(std::max(0, n)); }

inline int max_threads() {
  const int cap = detail::thread_cap().load();
  if (cap > 0) return cap;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Calls fn(i) for i in [0, n). Nested calls run serially on the caller.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const int workers = static_cast<int>(std::min<std::size_t>(n, static_cast<std::size_t>(max_threads())));
  if (workers <= 1 || detail::inside_parallel_region) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto body = [&]() {
    detail::inside_parallel_region = true;
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    detail::inside_parallel_region = false;
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  for (int w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Counter-based generator: output k is a pure function of (seed, k), so the
// stream is identical on every platform and compiler. std distributions are
// implementation-defined, hence the hand-rolled uniform/normal draws.

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))) {}

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive, unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next_u64());
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return lo + static_cast<std::int64_t>(r % span);
  }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::uint64_t counter() const { return counter_; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace splatvox
