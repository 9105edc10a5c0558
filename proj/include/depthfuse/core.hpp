#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace depthfuse {

// Invalid parameters / configuration. Mapped to CLI exit code 1.
struct ParamError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Unreadable or malformed data. Mapped to CLI exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major 2-D grid, origin at the top-left pixel.
template <typename T>
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int w, int h, T fill = T{})
      : width(w), height(h), data(check_dims(w, h), fill) {}
  Grid(int w, int h, std::vector<T> values)
      : width(w), height(h), data(std::move(values)) {
    if (data.size() != check_dims(w, h)) {
      throw ParamError("grid: expected " + std::to_string(check_dims(w, h)) +
                       " values, got " + std::to_string(data.size()));
    }
  }

  std::size_t size() const { return data.size(); }
  template <typename U>
  bool same_size(const Grid<U>& other) const {
    return width == other.width && height == other.height;
  }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width + x;
  }
  T& at(int x, int y) { return data[index(x, y)]; }
  const T& at(int x, int y) const { return data[index(x, y)]; }
  /// Clamp-to-edge sampling.
  const T& at_clamped(int x, int y) const {
    return at(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1));
  }

 private:
  static std::size_t check_dims(int w, int h) {
    if (w < 1 || h < 1) throw ParamError("grid dimensions must be at least 1x1");
    return static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  }
};

/// Single-channel intensity image, values expected in [0, 1].
using Image = Grid<double>;

/// Per-pixel validity; nonzero = usable.
using Mask = Grid<std::uint8_t>;

inline std::size_t count_valid(const Mask& mask) {
  std::size_t n = 0;
  for (auto b : mask.data) n += (b != 0);
  return n;
}

inline Mask full_mask(int width, int height) { return Mask(width, height, 1); }

enum class DepthUnit { Meters, Disparity, Dimensionless };

inline const char* to_string(DepthUnit unit) {
  switch (unit) {
    case DepthUnit::Meters: return "meters";
    case DepthUnit::Disparity: return "disparity";
    default: return "dimensionless";
  }
}

/// A value a depth map may hold at a valid pixel: finite always, and strictly
/// positive for physical units.
inline bool depth_value_ok(DepthUnit unit, double v) {
  if (!std::isfinite(v)) return false;
  if (unit == DepthUnit::Meters && v <= 0.0) return false;
  return true;
}

/// Dense per-pixel depth with an explicit validity mask. Invalidity is carried
/// by the mask rather than a sentinel so arithmetic stays branch-free and the
/// pixel count entering metrics is explicit.
struct DepthMap {
  Grid<double> values;
  Mask valid;
  DepthUnit unit = DepthUnit::Meters;

  DepthMap() = default;
  DepthMap(Grid<double> v, Mask m, DepthUnit u)
      : values(std::move(v)), valid(std::move(m)), unit(u) {
    if (!values.same_size(valid)) throw ParamError("depth map: mask dimensions differ from values");
  }

  int width() const { return values.width; }
  int height() const { return values.height; }
  std::size_t size() const { return values.size(); }
  bool same_size(const DepthMap& other) const { return values.same_size(other.values); }
  double at(int x, int y) const { return values.at(x, y); }
  bool is_valid(int x, int y) const { return valid.at(x, y) != 0; }
};

/// Builds a depth map, marking every entry that cannot be a legal value for
/// `unit` (non-finite, or non-positive meters) as invalid.
inline DepthMap make_depth_map(int width, int height, std::vector<double> values,
                               DepthUnit unit = DepthUnit::Meters) {
  const std::size_t expected = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (width >= 1 && height >= 1 && values.size() != expected) {
    throw ParamError("depth map: expected " + std::to_string(expected) + " values, got " +
                     std::to_string(values.size()));
  }
  Grid<double> grid(width, height, std::move(values));
  Mask mask(width, height, 0);
  for (std::size_t i = 0; i < grid.data.size(); ++i) {
    mask.data[i] = depth_value_ok(unit, grid.data[i]) ? 1 : 0;
  }
  return DepthMap(std::move(grid), std::move(mask), unit);
}

/// Valid iff map-valid and min_depth <= value <= max_depth.
inline Mask valid_mask(const DepthMap& map, double min_depth, double max_depth) {
  if (!(min_depth < max_depth)) {
    throw ParamError("valid_mask: min_depth must be below max_depth");
  }
  Mask mask(map.width(), map.height(), 0);
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    const double v = map.values.data[i];
    mask.data[i] = (map.valid.data[i] && v >= min_depth && v <= max_depth) ? 1 : 0;
  }
  return mask;
}

namespace detail {

inline DepthMap reciprocal_map(const DepthMap& map, double k, DepthUnit from, DepthUnit to,
                               const char* op) {
  if (map.unit != from) {
    throw ParamError(std::string(op) + ": input map must be in " + to_string(from));
  }
  if (!(k > 0.0)) throw ParamError(std::string(op) + ": conversion constant must be positive");
  Grid<double> out(map.width(), map.height());
  Mask mask(map.width(), map.height(), 0);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (map.valid.data[i]) {
      const double v = k / map.values.data[i];
      out.data[i] = v;
      mask.data[i] = depth_value_ok(to, v) ? 1 : 0;
    } else {
      out.data[i] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return DepthMap(std::move(out), std::move(mask), to);
}

}  // namespace detail

/// disparity = k / depth. The constant k is a caller decision; there is no
/// universally correct default for a given dataset.
inline DepthMap depth_to_disparity(const DepthMap& map, double k) {
  return detail::reciprocal_map(map, k, DepthUnit::Meters, DepthUnit::Disparity,
                                "depth_to_disparity");
}

/// depth = k / disparity; inverse of depth_to_disparity for the same k.
inline DepthMap disparity_to_depth(const DepthMap& map, double k) {
  return detail::reciprocal_map(map, k, DepthUnit::Disparity, DepthUnit::Meters,
                                "disparity_to_depth");
}

/// Thin-lens optics that drive circle-of-confusion synthesis. The blur radius
/// clamp keeps the per-pixel gather cost bounded.
struct ThinLensCamera {
  double focal_length_m = 0.0068;
  double f_number = 1.85;
  double pixel_pitch_m = 1.2e-6;
  double max_blur_radius_px = 25.0;
};

inline void validate_camera(const ThinLensCamera& cam) {
  if (!(cam.focal_length_m > 0.0)) throw ParamError("camera: focal length must be positive");
  if (!(cam.f_number > 0.0)) throw ParamError("camera: f-number must be positive");
  if (!(cam.pixel_pitch_m > 0.0)) throw ParamError("camera: pixel pitch must be positive");
  if (!(cam.max_blur_radius_px >= 0.0)) throw ParamError("camera: blur radius clamp must be >= 0");
}

/// Same-size intensity frames ordered by strictly increasing focus distance.
struct FocalStack {
  std::vector<Image> frames;
  std::vector<double> focus_distances;

  int width() const { return frames.empty() ? 0 : frames.front().width; }
  int height() const { return frames.empty() ? 0 : frames.front().height; }
  std::size_t size() const { return frames.size(); }
};

inline FocalStack make_focal_stack(std::vector<Image> frames, std::vector<double> distances) {
  if (frames.empty()) throw ParamError("focal stack: needs at least one frame");
  if (frames.size() != distances.size()) {
    throw ParamError("focal stack: " + std::to_string(frames.size()) + " frames but " +
                     std::to_string(distances.size()) + " focus distances");
  }
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!frames[i].same_size(frames.front())) {
      throw ParamError("focal stack: frame " + std::to_string(i) + " dimensions differ");
    }
    for (double v : frames[i].data) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ParamError("focal stack: frame " + std::to_string(i) +
                         " has intensity outside [0, 1]");
      }
    }
  }
  for (std::size_t i = 0; i < distances.size(); ++i) {
    if (!(distances[i] > 0.0)) throw ParamError("focal stack: focus distances must be positive");
    if (i > 0 && !(distances[i] > distances[i - 1])) {
      throw ParamError("focal stack: focus distances must be strictly increasing");
    }
  }
  FocalStack stack;
  stack.frames = std::move(frames);
  stack.focus_distances = std::move(distances);
  return stack;
}

}  // namespace depthfuse
