#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "depthfuse/core.hpp"

namespace depthfuse {

/// Per-pixel DFF confidence complement in [0, 1]; 0 = fully confident,
/// 1 = no focus evidence at all.
using UncertaintyMap = Grid<double>;

/// Per-pixel sharpness response for every stack slice.
struct FocusVolume {
  std::vector<Image> responses;   // one slice per frame, same order
  std::vector<double> distances;  // meters, ascending, one per slice

  int slices() const { return static_cast<int>(responses.size()); }
  int width() const { return responses.empty() ? 0 : responses.front().width; }
  int height() const { return responses.empty() ? 0 : responses.front().height; }
};

/// Sum-modified-Laplacian sharpness, box-summed over an odd window.
/// Borders clamp to the edge for both the Laplacian stencil and the window.
inline Image focus_measure(const Image& frame, int window) {
  if (window < 3 || window % 2 == 0) {
    throw ParamError("focus_measure: window must be odd and >= 3");
  }
  const int w = frame.width;
  const int h = frame.height;

  Image ml(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double c = frame.at(x, y);
      const double horiz = 2.0 * c - frame.at_clamped(x - 1, y) - frame.at_clamped(x + 1, y);
      const double vert = 2.0 * c - frame.at_clamped(x, y - 1) - frame.at_clamped(x, y + 1);
      ml.at(x, y) = std::abs(horiz) + std::abs(vert);
    }
  }

  const int half = window / 2;
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      for (int dy = -half; dy <= half; ++dy) {
        for (int dx = -half; dx <= half; ++dx) {
          sum += ml.at_clamped(x + dx, y + dy);
        }
      }
      out.at(x, y) = sum;
    }
  }
  return out;
}

inline FocusVolume build_focus_volume(const FocalStack& stack, int window) {
  if (stack.frames.empty()) throw ParamError("build_focus_volume: empty stack");
  FocusVolume volume;
  volume.responses.reserve(stack.frames.size());
  for (const Image& frame : stack.frames) {
    volume.responses.push_back(focus_measure(frame, window));
  }
  volume.distances = stack.focus_distances;
  return volume;
}

/// Picks each pixel's sharpest slice (ties break to the lowest index) and maps
/// it to a focus distance. With interpolation, an interior peak is replaced by
/// the parabola vertex over its index neighborhood, mapped piecewise-linearly
/// to distance and clamped to the neighboring distances. Uncertainty is one
/// minus the peak-to-mean contrast of the response column.
inline std::pair<DepthMap, UncertaintyMap> dff_depth(const FocusVolume& volume,
                                                     bool interpolate) {
  const int k_count = volume.slices();
  if (k_count < 1) throw ParamError("dff_depth: empty focus volume");
  if (volume.distances.size() != volume.responses.size()) {
    throw ParamError("dff_depth: slice/distance count mismatch");
  }
  const int w = volume.width();
  const int h = volume.height();
  constexpr double kEps = 1e-8;

  Grid<double> depth(w, h);
  Mask valid(w, h, 1);
  UncertaintyMap uncertainty(w, h);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int best = 0;
      double peak = volume.responses[0].at(x, y);
      double sum = peak;
      for (int k = 1; k < k_count; ++k) {
        const double r = volume.responses[k].at(x, y);
        sum += r;
        if (r > peak) {
          peak = r;
          best = k;
        }
      }

      double d = volume.distances[best];
      if (interpolate && best > 0 && best < k_count - 1) {
        const double rm = volume.responses[best - 1].at(x, y);
        const double r0 = volume.responses[best].at(x, y);
        const double rp = volume.responses[best + 1].at(x, y);
        const double denom = rm + rp - 2.0 * r0;
        if (denom != 0.0) {
          const double offset = (rm - rp) / (2.0 * denom);
          if (offset >= 0.0) {
            d += offset * (volume.distances[best + 1] - volume.distances[best]);
          } else {
            d += offset * (volume.distances[best] - volume.distances[best - 1]);
          }
          d = std::clamp(d, volume.distances[best - 1], volume.distances[best + 1]);
        }
      }
      depth.at(x, y) = d;

      if (peak <= 0.0) {
        uncertainty.at(x, y) = 1.0;
      } else {
        const double mean = sum / k_count;
        uncertainty.at(x, y) = std::clamp(1.0 - (peak - mean) / (peak + kEps), 0.0, 1.0);
      }
    }
  }
  return {DepthMap(std::move(depth), std::move(valid), DepthUnit::Meters),
          std::move(uncertainty)};
}

}  // namespace depthfuse
