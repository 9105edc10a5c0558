#pragma once

#include <cmath>
#include <vector>

#include "depthfuse/core.hpp"

namespace depthfuse {

/// Circle of confusion of one pixel: physical diameter on the sensor plus the
/// clamped pixel radius actually used for rendering.
struct BlurSpec {
  double coc_diameter_m = 0.0;
  double radius_px = 0.0;
};

enum class FocusSpacing { UniformDepth, UniformDiopter };

struct FocusSchedule {
  std::vector<double> distances;  // meters, strictly increasing
  FocusSpacing spacing = FocusSpacing::UniformDiopter;
};

/// Thin-lens blur disc for a scene point at s2 when the lens focuses at s1:
///   c = (|s2 - s1| / s2) * f^2 / (N * (s1 - f))
/// The pixel radius divides the diameter by twice the pixel pitch and clamps.
inline BlurSpec coc_diameter(double s1, double s2, const ThinLensCamera& cam) {
  validate_camera(cam);
  if (!(s1 > cam.focal_length_m)) {
    throw ParamError("coc_diameter: focus distance must exceed the focal length");
  }
  if (!(s2 > 0.0)) throw ParamError("coc_diameter: scene depth must be positive");
  const double f = cam.focal_length_m;
  const double c = (std::abs(s2 - s1) / s2) * f * f / (cam.f_number * (s1 - f));
  const double radius = std::min(c / (2.0 * cam.pixel_pitch_m), cam.max_blur_radius_px);
  return BlurSpec{c, radius};
}

/// Focus distances over [d_min, d_max]. Diopter spacing places them uniformly
/// in 1/d, which equalizes the blur step between adjacent frames; endpoints
/// are pinned exactly.
inline FocusSchedule make_focus_schedule(double d_min, double d_max, int count,
                                         FocusSpacing spacing) {
  if (!(d_min > 0.0) || !(d_min < d_max)) {
    throw ParamError("focus schedule: need 0 < d_min < d_max");
  }
  if (count < 1) throw ParamError("focus schedule: count must be at least 1");

  FocusSchedule schedule;
  schedule.spacing = spacing;
  schedule.distances.reserve(static_cast<std::size_t>(count));
  if (count == 1) {
    schedule.distances.push_back(d_min);
    return schedule;
  }
  for (int i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) / (count - 1);
    double d;
    if (spacing == FocusSpacing::UniformDepth) {
      d = d_min + t * (d_max - d_min);
    } else {
      const double q = (1.0 / d_min) + t * ((1.0 / d_max) - (1.0 / d_min));
      d = 1.0 / q;
    }
    schedule.distances.push_back(d);
  }
  schedule.distances.front() = d_min;
  schedule.distances.back() = d_max;
  return schedule;
}

namespace detail {

/// Largest |dx| with dx^2 + dy^2 <= r^2, corrected for sqrt rounding.
inline int disc_row_extent(double radius_sq, int dy) {
  const double rem = radius_sq - static_cast<double>(dy) * dy;
  if (rem < 0.0) return -1;
  int k = static_cast<int>(std::floor(std::sqrt(rem)));
  while (static_cast<double>(k + 1) * (k + 1) <= rem) ++k;
  while (k > 0 && static_cast<double>(k) * k > rem) --k;
  return k;
}

}  // namespace detail

/// Gather-style defocus: each output pixel is the mean of the input pixels in
/// a disc around it whose radius comes from the pixel's own ground-truth
/// depth. Sub-half-pixel radii copy the input unchanged; borders clamp to the
/// edge. Blur keyed on the target pixel leaks slightly across depth
/// discontinuities; that is the accepted cost of the gather formulation.
inline Image render_defocus_frame(const Image& image, const DepthMap& gt_depth,
                                  const ThinLensCamera& cam, double s1) {
  if (!image.same_size(gt_depth.values)) {
    throw ParamError("render_defocus_frame: image and depth dimensions differ");
  }
  validate_camera(cam);
  if (!(s1 > cam.focal_length_m)) {
    throw ParamError("render_defocus_frame: focus distance must exceed the focal length");
  }

  const double f = cam.focal_length_m;
  const double coc_scale = f * f / (cam.f_number * (s1 - f));
  const int w = image.width;
  const int h = image.height;
  Image out(w, h);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!gt_depth.is_valid(x, y)) {
        throw ParamError("render_defocus_frame: invalid depth at pixel (" + std::to_string(x) +
                         ", " + std::to_string(y) + ")");
      }
      const double s2 = gt_depth.at(x, y);
      const double c = (std::abs(s2 - s1) / s2) * coc_scale;
      const double radius =
          std::min(c / (2.0 * cam.pixel_pitch_m), cam.max_blur_radius_px);
      if (radius < 0.5) {
        out.at(x, y) = image.at(x, y);
        continue;
      }
      const double radius_sq = radius * radius;
      const int extent = static_cast<int>(radius);
      double sum = 0.0;
      long count = 0;
      for (int dy = -extent; dy <= extent; ++dy) {
        const int dx_max = detail::disc_row_extent(radius_sq, dy);
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -dx_max; dx <= dx_max; ++dx) {
          sum += image.at(std::clamp(x + dx, 0, w - 1), yy);
        }
        count += 2 * static_cast<long>(dx_max) + 1;
      }
      out.at(x, y) = sum / static_cast<double>(count);
    }
  }
  return out;
}

/// One defocused frame per schedule distance, ascending.
inline FocalStack synthesize_focal_stack(const Image& image, const DepthMap& gt_depth,
                                         const ThinLensCamera& cam,
                                         const FocusSchedule& schedule) {
  if (schedule.distances.empty()) throw ParamError("synthesize_focal_stack: empty schedule");
  std::vector<Image> frames;
  frames.reserve(schedule.distances.size());
  for (double s1 : schedule.distances) {
    frames.push_back(render_defocus_frame(image, gt_depth, cam, s1));
  }
  return make_focal_stack(std::move(frames), schedule.distances);
}

}  // namespace depthfuse
