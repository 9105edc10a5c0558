#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "depthfuse/core.hpp"
#include "depthfuse/dff.hpp"

namespace depthfuse {

/// The two-parameter map from relative to metric depth:
/// metric = scale * relative + shift.
struct AffineScale {
  double scale = 1.0;
  double shift = 0.0;
};

/// Per-pixel multiplicative correction between the globally scaled map and the
/// DFF map. Valid entries are finite and strictly positive.
struct ScaleMap {
  Grid<double> values;
  Mask valid;

  ScaleMap() = default;
  ScaleMap(Grid<double> v, Mask m) : values(std::move(v)), valid(std::move(m)) {
    if (!values.same_size(valid)) throw ParamError("scale map: mask dimensions differ");
  }
  int width() const { return values.width; }
  int height() const { return values.height; }
};

struct RansacConfig {
  int iterations = 200;
  int sample_size = 50;
  double inlier_threshold = 0.05;  // meters, absolute residual
  std::uint64_t seed = 0;
};

inline void validate_ransac(const RansacConfig& cfg) {
  if (cfg.iterations < 1) throw ParamError("ransac: iterations must be >= 1");
  if (cfg.sample_size < 2) throw ParamError("ransac: sample size must be >= 2");
  if (!(cfg.inlier_threshold > 0.0)) throw ParamError("ransac: inlier threshold must be positive");
}

namespace detail {

struct FitAccumulator {
  double n = 0.0, sr = 0.0, sm = 0.0, srr = 0.0, srm = 0.0;
  double r_min = std::numeric_limits<double>::infinity();
  double r_max = -std::numeric_limits<double>::infinity();
  std::size_t count = 0;

  void add(double r, double m, double w = 1.0) {
    n += w;
    sr += w * r;
    sm += w * m;
    srr += w * r * r;
    srm += w * r * m;
    r_min = std::min(r_min, r);
    r_max = std::max(r_max, r);
    ++count;
  }

  AffineScale solve() const {
    if (count < 2 || !(r_max > r_min)) {
      throw DataError("degenerate fit: need at least 2 pixels with non-constant relative depth");
    }
    const double denom = n * srr - sr * sr;
    if (!(denom > 0.0) || !std::isfinite(denom)) {
      throw DataError("degenerate fit: singular normal equations");
    }
    AffineScale t;
    t.scale = (n * srm - sr * sm) / denom;
    t.shift = (sm - t.scale * sr) / n;
    return t;
  }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Closed-form least-squares (scale, shift) minimizing the masked sum of
/// squares, accumulated in doubles in fixed row-major order. An optional
/// confidence map weights each pixel by (1 - uncertainty); by default all
/// valid pixels weigh equally.
inline AffineScale fit_global_ls(const DepthMap& relative, const DepthMap& metric,
                                 const Mask& mask,
                                 const UncertaintyMap* confidence = nullptr) {
  if (!relative.same_size(metric) || !relative.values.same_size(mask)) {
    throw ParamError("fit_global_ls: dimension mismatch");
  }
  if (confidence && !relative.values.same_size(*confidence)) {
    throw ParamError("fit_global_ls: confidence map dimension mismatch");
  }
  detail::FitAccumulator acc;
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (!mask.data[i] || !relative.valid.data[i] || !metric.valid.data[i]) continue;
    const double w = confidence ? std::max(0.0, 1.0 - confidence->data[i]) : 1.0;
    if (w <= 0.0) continue;
    acc.add(relative.values.data[i], metric.values.data[i], w);
  }
  return acc.solve();
}

/// Seeded RANSAC around the least-squares fit: each iteration draws a sample
/// without replacement, fits it, and scores inliers by absolute metric
/// residual over every masked pixel. The best consensus set is refit with
/// least squares. Iteration i derives its generator from (seed, i), so the
/// result depends only on the inputs and the seed.
inline AffineScale fit_global_ransac(const DepthMap& relative, const DepthMap& metric,
                                     const Mask& mask, const RansacConfig& cfg) {
  if (!relative.same_size(metric) || !relative.values.same_size(mask)) {
    throw ParamError("fit_global_ransac: dimension mismatch");
  }
  validate_ransac(cfg);

  std::vector<std::uint32_t> indices;
  indices.reserve(mask.data.size());
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (mask.data[i] && relative.valid.data[i] && metric.valid.data[i]) {
      indices.push_back(static_cast<std::uint32_t>(i));
    }
  }
  const std::size_t n = indices.size();
  if (n < 2) throw DataError("degenerate fit: fewer than 2 usable pixels");
  const std::size_t sample_size = static_cast<std::size_t>(cfg.sample_size);
  if (sample_size > n) {
    throw ParamError("ransac: sample size exceeds usable pixel count");
  }

  const double* rel = relative.values.data.data();
  const double* met = metric.values.data.data();

  AffineScale best;
  std::size_t best_inliers = 0;
  bool found = false;
  std::vector<std::uint32_t> scratch = indices;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    std::mt19937_64 rng(detail::splitmix64(cfg.seed ^ (0x9E3779B97F4A7C15ULL *
                                                       (static_cast<std::uint64_t>(iter) + 1))));
    // Partial Fisher-Yates; swaps are undone afterwards so the scratch array
    // stays in index order between iterations.
    std::vector<std::pair<std::size_t, std::size_t>> swaps;
    swaps.reserve(sample_size);
    for (std::size_t j = 0; j < sample_size && j < n - 1; ++j) {
      const std::size_t u = j + static_cast<std::size_t>(rng() % (n - j));
      std::swap(scratch[j], scratch[u]);
      swaps.emplace_back(j, u);
    }

    detail::FitAccumulator acc;
    for (std::size_t j = 0; j < sample_size; ++j) {
      const std::uint32_t idx = scratch[j];
      acc.add(rel[idx], met[idx]);
    }
    for (auto it = swaps.rbegin(); it != swaps.rend(); ++it) {
      std::swap(scratch[it->first], scratch[it->second]);
    }

    AffineScale candidate;
    try {
      candidate = acc.solve();
    } catch (const DataError&) {
      continue;  // constant sample, try the next draw
    }

    std::size_t inliers = 0;
    for (std::uint32_t idx : indices) {
      const double residual = std::abs(met[idx] - (candidate.scale * rel[idx] + candidate.shift));
      if (residual <= cfg.inlier_threshold) ++inliers;
    }
    if (inliers > best_inliers) {
      best_inliers = inliers;
      best = candidate;
      found = true;
    }
  }

  if (!found || best_inliers < 2) {
    throw DataError("ransac consensus failure: no iteration produced 2 or more inliers");
  }

  detail::FitAccumulator refit;
  for (std::uint32_t idx : indices) {
    const double residual = std::abs(met[idx] - (best.scale * rel[idx] + best.shift));
    if (residual <= cfg.inlier_threshold) refit.add(rel[idx], met[idx]);
  }
  try {
    return refit.solve();
  } catch (const DataError&) {
    return best;  // consensus set was constant in r; keep the sample fit
  }
}

/// metric = scale * relative + shift per valid pixel. Non-positive results are
/// marked invalid rather than clamped so they cannot leak into metrics.
inline DepthMap apply_affine(const DepthMap& relative, const AffineScale& t) {
  if (!std::isfinite(t.scale) || !std::isfinite(t.shift) || t.scale == 0.0) {
    throw ParamError("apply_affine: transform must be finite with nonzero scale");
  }
  Grid<double> out(relative.width(), relative.height());
  Mask valid(relative.width(), relative.height(), 0);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (relative.valid.data[i]) {
      const double v = t.scale * relative.values.data[i] + t.shift;
      out.data[i] = v;
      valid.data[i] = depth_value_ok(DepthUnit::Meters, v) ? 1 : 0;
    } else {
      out.data[i] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return DepthMap(std::move(out), std::move(valid), DepthUnit::Meters);
}

/// Pixel-wise division of the globally scaled map by the DFF map. Pixels where
/// the DFF depth vanishes (or either side is invalid) are masked out.
inline ScaleMap dense_scale_map(const DepthMap& global_scaled, const DepthMap& dff,
                                const Mask& mask) {
  if (!global_scaled.same_size(dff) || !global_scaled.values.same_size(mask)) {
    throw ParamError("dense_scale_map: dimension mismatch");
  }
  constexpr double kMinDepth = 1e-6;
  Grid<double> out(global_scaled.width(), global_scaled.height(), 1.0);
  Mask valid(global_scaled.width(), global_scaled.height(), 0);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (!mask.data[i] || !global_scaled.valid.data[i] || !dff.valid.data[i]) continue;
    const double d = dff.values.data[i];
    if (d < kMinDepth) continue;
    const double s = global_scaled.values.data[i] / d;
    if (std::isfinite(s) && s > 0.0) {
      out.data[i] = s;
      valid.data[i] = 1;
    }
  }
  return ScaleMap(std::move(out), std::move(valid));
}

/// Settings for the deterministic scale-map refiner.
struct RefineParams {
  double sigma_spatial = 8.0;  // pixels
  double sigma_guide = 0.1;    // log-depth units
  int iterations = 3;
  double max_scale = 4.0;      // output clamped to [1/max_scale, max_scale]
  bool use_uncertainty = true;
  int radius = 0;  // window radius in pixels; 0 derives ceil(2 * sigma_spatial)
};

/// Edge-aware smoothing of the raw scale map in the log domain. Each pass
/// replaces log(scale) with a weighted neighborhood mean whose weights combine
/// a spatial Gaussian, a similarity Gaussian on the guide's log depth, and the
/// DFF confidence (1 - uncertainty). Pixels without usable neighborhood weight
/// fall back to 1.0 and stay masked; everything else is clamped to
/// [1/max_scale, max_scale]. Disabling use_uncertainty fixes the confidence
/// weight at 1, which is the uncertainty-ablation configuration.
inline ScaleMap refine_scale_map(const ScaleMap& raw, const UncertaintyMap& uncertainty,
                                 const DepthMap& guide, const RefineParams& params) {
  const int w = raw.width();
  const int h = raw.height();
  if (!raw.values.same_size(uncertainty) || !raw.values.same_size(guide.values)) {
    throw ParamError("refine_scale_map: dimension mismatch");
  }
  if (!(params.sigma_spatial > 0.0) || !(params.sigma_guide > 0.0)) {
    throw ParamError("refine_scale_map: sigmas must be positive");
  }
  if (!(params.max_scale >= 1.0)) throw ParamError("refine_scale_map: max_scale must be >= 1");
  if (params.iterations < 0) throw ParamError("refine_scale_map: iterations must be >= 0");
  const int radius =
      params.radius > 0 ? params.radius : static_cast<int>(std::ceil(2.0 * params.sigma_spatial));
  constexpr double kMinWeight = 1e-6;
  const double lo = 1.0 / params.max_scale;
  const double hi = params.max_scale;

  // Precomputed pieces that never change across passes.
  std::vector<double> spatial(static_cast<std::size_t>(2 * radius + 1) * (2 * radius + 1));
  const double inv_2ss = 1.0 / (2.0 * params.sigma_spatial * params.sigma_spatial);
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const std::size_t k = static_cast<std::size_t>(dy + radius) * (2 * radius + 1) + (dx + radius);
      spatial[k] = std::exp(-(dx * dx + dy * dy) * inv_2ss);
    }
  }
  Grid<double> log_guide(w, h, 0.0);
  for (std::size_t i = 0; i < log_guide.data.size(); ++i) {
    if (guide.valid.data[i] && guide.values.data[i] > 0.0) {
      log_guide.data[i] = std::log(guide.values.data[i]);
    }
  }
  Grid<double> confidence(w, h, 1.0);
  if (params.use_uncertainty) {
    for (std::size_t i = 0; i < confidence.data.size(); ++i) {
      confidence.data[i] = std::clamp(1.0 - uncertainty.data[i], 0.0, 1.0);
    }
  }

  Grid<double> cur_log(w, h, 0.0);
  Mask cur_valid(w, h, 0);
  for (std::size_t i = 0; i < cur_log.data.size(); ++i) {
    if (raw.valid.data[i] && raw.values.data[i] > 0.0) {
      cur_log.data[i] = std::log(std::clamp(raw.values.data[i], lo, hi));
      cur_valid.data[i] = 1;
    }
  }

  const double inv_2sg = 1.0 / (2.0 * params.sigma_guide * params.sigma_guide);
  for (int pass = 0; pass < params.iterations; ++pass) {
    Grid<double> next_log(w, h, 0.0);
    Mask next_valid(w, h, 0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!guide.valid.at(x, y)) {
          // No guide depth: carry the input through untouched.
          next_log.at(x, y) = cur_log.at(x, y);
          next_valid.at(x, y) = cur_valid.at(x, y);
          continue;
        }
        const double g0 = log_guide.at(x, y);
        double weight_sum = 0.0;
        double value_sum = 0.0;
        const int y_lo = std::max(0, y - radius);
        const int y_hi = std::min(h - 1, y + radius);
        const int x_lo = std::max(0, x - radius);
        const int x_hi = std::min(w - 1, x + radius);
        for (int yy = y_lo; yy <= y_hi; ++yy) {
          for (int xx = x_lo; xx <= x_hi; ++xx) {
            if (!cur_valid.at(xx, yy) || !guide.valid.at(xx, yy)) continue;
            const double dg = log_guide.at(xx, yy) - g0;
            const std::size_t k = static_cast<std::size_t>(yy - y + radius) * (2 * radius + 1) +
                                  (xx - x + radius);
            const double wgt = spatial[k] * std::exp(-dg * dg * inv_2sg) * confidence.at(xx, yy);
            weight_sum += wgt;
            value_sum += wgt * cur_log.at(xx, yy);
          }
        }
        if (weight_sum >= kMinWeight) {
          next_log.at(x, y) = value_sum / weight_sum;
          next_valid.at(x, y) = 1;
        } else {
          next_log.at(x, y) = 0.0;  // scale 1.0 fallback, kept masked
          next_valid.at(x, y) = 0;
        }
      }
    }
    cur_log = std::move(next_log);
    cur_valid = std::move(next_valid);
  }

  Grid<double> out(w, h, 1.0);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = std::clamp(std::exp(cur_log.data[i]), lo, hi);
  }
  return ScaleMap(std::move(out), std::move(cur_valid));
}

/// final depth = globally scaled depth / refined scale, the inverse of the
/// division that built the dense scale map. An unrefined map therefore
/// reproduces the DFF depth and an all-ones map reproduces the global map.
inline DepthMap apply_scale_map(const DepthMap& global_scaled, const ScaleMap& refined) {
  if (!global_scaled.values.same_size(refined.values)) {
    throw ParamError("apply_scale_map: dimension mismatch");
  }
  Grid<double> out(global_scaled.width(), global_scaled.height());
  Mask valid(global_scaled.width(), global_scaled.height(), 0);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (global_scaled.valid.data[i] && refined.valid.data[i] && refined.values.data[i] > 0.0) {
      const double v = global_scaled.values.data[i] / refined.values.data[i];
      out.data[i] = v;
      valid.data[i] = depth_value_ok(DepthUnit::Meters, v) ? 1 : 0;
    } else {
      out.data[i] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return DepthMap(std::move(out), std::move(valid), DepthUnit::Meters);
}

}  // namespace depthfuse
