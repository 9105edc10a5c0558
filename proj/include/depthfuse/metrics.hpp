#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "depthfuse/core.hpp"

namespace depthfuse {

struct LossParams {
  double alpha = 1e-7;      // log-safety constant
  double beta = 0.15;       // weight on the squared mean of log residuals
  double grad_weight = 0.5; // gradient-loss coefficient in the total loss
  int num_scales = 4;       // pyramid levels for the gradient loss

  void validate() const {
    if (!(alpha > 0.0)) throw ParamError("loss params: alpha must be positive");
    if (!(beta >= 0.0)) throw ParamError("loss params: beta must be >= 0");
    if (num_scales < 1) throw ParamError("loss params: num_scales must be >= 1");
  }
};

struct MetricsReport {
  double mse = 0.0;
  double rmse = 0.0;
  double absrel = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  std::size_t pixel_count = 0;
};

namespace detail {

/// Pixels entering evaluation: selected by the mask and valid in both maps.
inline Mask effective_mask(const DepthMap& pred, const DepthMap& gt, const Mask& mask,
                           const char* op) {
  if (!pred.same_size(gt) || !pred.values.same_size(mask)) {
    throw ParamError(std::string(op) + ": dimension mismatch");
  }
  Mask out(mask.width, mask.height, 0);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = (mask.data[i] && pred.valid.data[i] && gt.valid.data[i]) ? 1 : 0;
  }
  return out;
}

}  // namespace detail

/// MSE, RMSE, AbsRel and the delta accuracies over the masked pixels.
/// delta_i is the fraction with max(pred/gt, gt/pred) < 1.25^i.
inline MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt, const Mask& mask) {
  const Mask eff = detail::effective_mask(pred, gt, mask, "compute_metrics");
  double sq = 0.0, rel = 0.0;
  std::size_t m = 0, n1 = 0, n2 = 0, n3 = 0;
  for (std::size_t i = 0; i < eff.data.size(); ++i) {
    if (!eff.data[i]) continue;
    const double d = gt.values.data[i];
    const double p = pred.values.data[i];
    if (!(d > 0.0) || !(p > 0.0)) {
      throw DataError("compute_metrics: non-positive depth under the evaluation mask");
    }
    const double err = d - p;
    sq += err * err;
    rel += std::abs(err) / d;
    const double ratio = std::max(p / d, d / p);
    if (ratio < 1.25) ++n1;
    if (ratio < 1.25 * 1.25) ++n2;
    if (ratio < 1.25 * 1.25 * 1.25) ++n3;
    ++m;
  }
  if (m == 0) throw DataError("compute_metrics: empty evaluation mask");

  MetricsReport report;
  report.pixel_count = m;
  report.mse = sq / static_cast<double>(m);
  report.rmse = std::sqrt(report.mse);
  report.absrel = rel / static_cast<double>(m);
  report.delta1 = static_cast<double>(n1) / static_cast<double>(m);
  report.delta2 = static_cast<double>(n2) / static_cast<double>(m);
  report.delta3 = static_cast<double>(n3) / static_cast<double>(m);
  return report;
}

/// Scale-invariant log loss: with g = log(pred + alpha) - log(gt + alpha) over
/// the mask, returns 10 * sqrt(var(g) + beta * mean(g)^2). The variance is the
/// population variance over the masked pixel count.
inline double silog_loss(const DepthMap& pred, const DepthMap& gt, const Mask& mask,
                         const LossParams& params = {}) {
  params.validate();
  const Mask eff = detail::effective_mask(pred, gt, mask, "silog_loss");
  std::vector<double> g;
  g.reserve(eff.data.size());
  for (std::size_t i = 0; i < eff.data.size(); ++i) {
    if (!eff.data[i]) continue;
    const double d = gt.values.data[i];
    const double p = pred.values.data[i];
    if (!(d > 0.0) || !(p > 0.0)) {
      throw DataError("silog_loss: non-positive depth under the evaluation mask");
    }
    g.push_back(std::log(p + params.alpha) - std::log(d + params.alpha));
  }
  if (g.empty()) throw DataError("silog_loss: empty evaluation mask");

  const double m = static_cast<double>(g.size());
  double sum = 0.0;
  for (double v : g) sum += v;
  const double mean = sum / m;
  double var_sum = 0.0;
  for (double v : g) var_sum += (v - mean) * (v - mean);
  const double var = var_sum / m;
  return 10.0 * std::sqrt(var + params.beta * mean * mean);
}

namespace detail {

struct PyramidLevel {
  Grid<double> pred;
  Grid<double> gt;
  Mask valid;
};

/// 2x2 mean pooling with floor on odd dimensions; a pooled pixel is valid only
/// if all four contributors are.
inline PyramidLevel downsample(const PyramidLevel& level) {
  const int w = level.pred.width / 2;
  const int h = level.pred.height / 2;
  PyramidLevel out{Grid<double>(w, h), Grid<double>(w, h), Mask(w, h, 0)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int sx = 2 * x;
      const int sy = 2 * y;
      double ps = 0.0, gs = 0.0;
      bool ok = true;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          ok = ok && level.valid.at(sx + dx, sy + dy);
          ps += level.pred.at(sx + dx, sy + dy);
          gs += level.gt.at(sx + dx, sy + dy);
        }
      }
      out.pred.at(x, y) = ps / 4.0;
      out.gt.at(x, y) = gs / 4.0;
      out.valid.at(x, y) = ok ? 1 : 0;
    }
  }
  return out;
}

}  // namespace detail

/// Multi-scale gradient loss: the absolute difference of forward x and y
/// differences, summed over every scale of a 2x2 mean pyramid and divided by
/// the full-resolution pixel count. Difference stencils that touch an invalid
/// pixel are skipped.
inline double grad_loss(const DepthMap& pred, const DepthMap& gt, const Mask& mask,
                        const LossParams& params = {}) {
  params.validate();
  const Mask eff = detail::effective_mask(pred, gt, mask, "grad_loss");
  if (count_valid(eff) == 0) throw DataError("grad_loss: empty evaluation mask");

  detail::PyramidLevel level{pred.values, gt.values, eff};
  const double norm = static_cast<double>(pred.size());
  double total = 0.0;
  for (int s = 1; s <= params.num_scales; ++s) {
    if (s > 1) {
      if (level.pred.width < 2 || level.pred.height < 2) break;
      level = detail::downsample(level);
    }
    const int w = level.pred.width;
    const int h = level.pred.height;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!level.valid.at(x, y)) continue;
        if (x + 1 < w && level.valid.at(x + 1, y)) {
          const double dp = level.pred.at(x + 1, y) - level.pred.at(x, y);
          const double dg = level.gt.at(x + 1, y) - level.gt.at(x, y);
          total += std::abs(dp - dg);
        }
        if (y + 1 < h && level.valid.at(x, y + 1)) {
          const double dp = level.pred.at(x, y + 1) - level.pred.at(x, y);
          const double dg = level.gt.at(x, y + 1) - level.gt.at(x, y);
          total += std::abs(dp - dg);
        }
      }
    }
  }
  return total / norm;
}

/// total = silog + grad_weight * grad.
inline double total_loss(const DepthMap& pred, const DepthMap& gt, const Mask& mask,
                         const LossParams& params = {}) {
  return silog_loss(pred, gt, mask, params) + params.grad_weight * grad_loss(pred, gt, mask, params);
}

}  // namespace depthfuse
