#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "depthfuse/core.hpp"
#include "depthfuse/metrics.hpp"

namespace testsupport {

namespace df = depthfuse;

// ---------------------------------------------------------------------------
// Deterministic data generators
// ---------------------------------------------------------------------------

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

/// Splitmix-based generator whose stream does not depend on the standard
/// library's distribution implementations.
struct PortableRng {
  std::uint64_t state;
  explicit PortableRng(std::uint64_t seed) : state(seed) {}
  std::uint64_t next() {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  double uniform(double lo, double hi) {
    const double unit = static_cast<double>(next() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * unit;
  }
};

inline std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double lo,
                                         double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> values(n);
  for (double& v : values) v = dist(rng);
  return values;
}

inline df::DepthMap random_depth_map(std::mt19937_64& rng, int w, int h, double lo = 0.5,
                                     double hi = 5.0,
                                     df::DepthUnit unit = df::DepthUnit::Meters) {
  return df::make_depth_map(w, h, random_values(rng, static_cast<std::size_t>(w) * h, lo, hi),
                            unit);
}

/// Deterministic high-contrast texture in [0, 1] keyed on pixel coordinates.
inline double hash_texture(int x, int y, std::uint64_t seed) {
  std::uint64_t v = seed;
  v ^= 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(x) + 1);
  v ^= 0xC2B2AE3D27D4EB4FULL * (static_cast<std::uint64_t>(y) + 1);
  v ^= v >> 33;
  v *= 0xFF51AFD7ED558CCDULL;
  v ^= v >> 33;
  return static_cast<double>(v % 10000) / 9999.0;
}

/// RAII scratch directory under the system temp root.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("depthfuse_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str(const std::string& leaf = "") const {
    return leaf.empty() ? path.string() : (path / leaf).string();
  }
};

// ---------------------------------------------------------------------------
// Independent oracles. These deliberately re-derive each quantity with the
// most literal summation possible; they must never call the implementations
// they are used to check.
// ---------------------------------------------------------------------------

struct OracleMetrics {
  double mse = 0.0, rmse = 0.0, absrel = 0.0;
  double delta1 = 0.0, delta2 = 0.0, delta3 = 0.0;
  std::size_t count = 0;
};

inline OracleMetrics oracle_metrics(const df::DepthMap& pred, const df::DepthMap& gt,
                                    const df::Mask& mask) {
  OracleMetrics out;
  double sq = 0.0, rel = 0.0;
  double n1 = 0.0, n2 = 0.0, n3 = 0.0;
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      if (!mask.at(x, y) || !pred.is_valid(x, y) || !gt.is_valid(x, y)) continue;
      const double d = gt.at(x, y);
      const double p = pred.at(x, y);
      sq += (d - p) * (d - p);
      rel += std::abs(d - p) / d;
      const double ratio = std::max(p / d, d / p);
      n1 += ratio < 1.25 ? 1.0 : 0.0;
      n2 += ratio < 1.5625 ? 1.0 : 0.0;
      n3 += ratio < 1.953125 ? 1.0 : 0.0;
      ++out.count;
    }
  }
  const double m = static_cast<double>(out.count);
  out.mse = sq / m;
  out.rmse = std::sqrt(sq / m);
  out.absrel = rel / m;
  out.delta1 = n1 / m;
  out.delta2 = n2 / m;
  out.delta3 = n3 / m;
  return out;
}

inline double oracle_silog(const df::DepthMap& pred, const df::DepthMap& gt, const df::Mask& mask,
                           double alpha, double beta) {
  std::vector<double> g;
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      if (!mask.at(x, y) || !pred.is_valid(x, y) || !gt.is_valid(x, y)) continue;
      g.push_back(std::log(pred.at(x, y) + alpha) - std::log(gt.at(x, y) + alpha));
    }
  }
  double mean = 0.0;
  for (double v : g) mean += v;
  mean /= static_cast<double>(g.size());
  double var = 0.0;
  for (double v : g) var += (v - mean) * (v - mean);
  var /= static_cast<double>(g.size());
  return 10.0 * std::sqrt(var + beta * mean * mean);
}

/// Brute-force multi-scale gradient loss: explicit pooling then an explicit
/// double sum of forward-difference discrepancies.
inline double oracle_grad_loss(const df::DepthMap& pred, const df::DepthMap& gt,
                               const df::Mask& mask, int num_scales) {
  struct Level {
    std::vector<double> p, g;
    std::vector<int> valid;
    int w, h;
    double pv(int x, int y) const { return p[static_cast<std::size_t>(y) * w + x]; }
    double gv(int x, int y) const { return g[static_cast<std::size_t>(y) * w + x]; }
    int vv(int x, int y) const { return valid[static_cast<std::size_t>(y) * w + x]; }
  };
  Level level;
  level.w = gt.width();
  level.h = gt.height();
  for (int y = 0; y < level.h; ++y) {
    for (int x = 0; x < level.w; ++x) {
      level.p.push_back(pred.at(x, y));
      level.g.push_back(gt.at(x, y));
      level.valid.push_back((mask.at(x, y) && pred.is_valid(x, y) && gt.is_valid(x, y)) ? 1 : 0);
    }
  }
  const double norm = static_cast<double>(gt.size());
  double total = 0.0;
  for (int s = 1; s <= num_scales; ++s) {
    if (s > 1) {
      Level next;
      next.w = level.w / 2;
      next.h = level.h / 2;
      if (next.w < 1 || next.h < 1) break;
      for (int y = 0; y < next.h; ++y) {
        for (int x = 0; x < next.w; ++x) {
          const double p = (level.pv(2 * x, 2 * y) + level.pv(2 * x + 1, 2 * y) +
                            level.pv(2 * x, 2 * y + 1) + level.pv(2 * x + 1, 2 * y + 1)) /
                           4.0;
          const double g = (level.gv(2 * x, 2 * y) + level.gv(2 * x + 1, 2 * y) +
                            level.gv(2 * x, 2 * y + 1) + level.gv(2 * x + 1, 2 * y + 1)) /
                           4.0;
          const int v = level.vv(2 * x, 2 * y) && level.vv(2 * x + 1, 2 * y) &&
                        level.vv(2 * x, 2 * y + 1) && level.vv(2 * x + 1, 2 * y + 1);
          next.p.push_back(p);
          next.g.push_back(g);
          next.valid.push_back(v);
        }
      }
      level = next;
    }
    for (int y = 0; y < level.h; ++y) {
      for (int x = 0; x < level.w; ++x) {
        if (!level.vv(x, y)) continue;
        if (x + 1 < level.w && level.vv(x + 1, y)) {
          total += std::abs((level.pv(x + 1, y) - level.pv(x, y)) -
                            (level.gv(x + 1, y) - level.gv(x, y)));
        }
        if (y + 1 < level.h && level.vv(x, y + 1)) {
          total += std::abs((level.pv(x, y + 1) - level.pv(x, y)) -
                            (level.gv(x, y + 1) - level.gv(x, y)));
        }
      }
    }
  }
  return total / norm;
}

/// Explicit 2x2 normal-equation solve via the closed-form matrix inverse.
inline std::pair<double, double> oracle_affine_fit(const std::vector<double>& r,
                                                   const std::vector<double>& m) {
  double n = 0.0, sr = 0.0, sm = 0.0, srr = 0.0, srm = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    n += 1.0;
    sr += r[i];
    sm += m[i];
    srr += r[i] * r[i];
    srm += r[i] * m[i];
  }
  // [srr sr; sr n] [scale; shift] = [srm; sm]
  const double det = srr * n - sr * sr;
  const double scale = (n * srm - sr * sm) / det;
  const double shift = (srr * sm - sr * srm) / det;
  return {scale, shift};
}

/// Literal sum-modified-Laplacian with box window, clamp-to-edge.
inline df::Image oracle_sml(const df::Image& frame, int window) {
  const int w = frame.width;
  const int h = frame.height;
  auto px = [&](int x, int y) {
    return frame.at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1));
  };
  df::Image out(w, h);
  const int half = window / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      for (int dy = -half; dy <= half; ++dy) {
        for (int dx = -half; dx <= half; ++dx) {
          const int cx = std::clamp(x + dx, 0, w - 1);
          const int cy = std::clamp(y + dy, 0, h - 1);
          const double ml =
              std::abs(2.0 * px(cx, cy) - px(cx - 1, cy) - px(cx + 1, cy)) +
              std::abs(2.0 * px(cx, cy) - px(cx, cy - 1) - px(cx, cy + 1));
          sum += ml;
        }
      }
      out.at(x, y) = sum;
    }
  }
  return out;
}

/// Literal disc-membership gather blur with a fixed radius everywhere.
inline df::Image oracle_disc_blur(const df::Image& image, double radius) {
  const int w = image.width;
  const int h = image.height;
  df::Image out(w, h);
  const int extent = static_cast<int>(std::ceil(radius));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (radius < 0.5) {
        out.at(x, y) = image.at(x, y);
        continue;
      }
      double sum = 0.0;
      long count = 0;
      for (int dy = -extent; dy <= extent; ++dy) {
        for (int dx = -extent; dx <= extent; ++dx) {
          if (static_cast<double>(dx) * dx + static_cast<double>(dy) * dy > radius * radius) {
            continue;
          }
          sum += image.at(std::clamp(x + dx, 0, w - 1), std::clamp(y + dy, 0, h - 1));
          ++count;
        }
      }
      out.at(x, y) = sum / static_cast<double>(count);
    }
  }
  return out;
}

}  // namespace testsupport
