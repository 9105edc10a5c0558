#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "depthfuse/core.hpp"
#include "depthfuse/dff.hpp"
#include "depthfuse/fusion.hpp"
#include "depthfuse/io.hpp"
#include "depthfuse/metrics.hpp"
#include "depthfuse/optics.hpp"

namespace depthfuse {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr int kSchemaVersion = 1;

/// Every image in a batch failed. Mapped to CLI exit code 3.
struct AllImagesFailedError : DataError {
  using DataError::DataError;
};

enum class FitMethod { LeastSquares, Ransac };

struct ScheduleConfig {
  double min_m = 0.5;
  double max_m = 5.0;
  int count = 5;
  FocusSpacing spacing = FocusSpacing::UniformDiopter;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output_dir = "out";

  // Inputs. Relative depth is always consumed from files; metric DFF either
  // comes from precomputed maps, from real stacks, or from synthesis.
  std::string rgb_dir;
  std::string gt_depth_dir;
  std::string relative_depth_dir;
  std::string stack_dir;
  std::string dff_depth_dir;
  std::string dff_uncertainty_dir;
  std::string gt_format = "png16";  // "png16" or "pfm"
  double gt_scale_mm_per_unit = 1.0;

  ThinLensCamera camera;
  ScheduleConfig schedule;
  int dff_window = 7;
  bool dff_interpolate = true;

  FitMethod fit_method = FitMethod::LeastSquares;
  RansacConfig ransac;
  bool fit_weighted = false;  // weight the LS fit by DFF confidence

  bool refine_enabled = true;
  RefineParams refine;

  double eval_min_depth = 1e-3;
  double eval_max_depth = 10.0;  // 10 m cap; pass 2.0 for the close-range preset
  bool save_maps = false;
};

// ---------------------------------------------------------------------------
// Config <-> JSON
// ---------------------------------------------------------------------------

inline json config_to_json(const PipelineConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["output_dir"] = c.output_dir;
  j["inputs"] = {{"rgb_dir", c.rgb_dir},
                 {"gt_depth_dir", c.gt_depth_dir},
                 {"relative_depth_dir", c.relative_depth_dir},
                 {"stack_dir", c.stack_dir},
                 {"dff_depth_dir", c.dff_depth_dir},
                 {"dff_uncertainty_dir", c.dff_uncertainty_dir},
                 {"gt_format", c.gt_format},
                 {"gt_scale_mm_per_unit", c.gt_scale_mm_per_unit}};
  j["camera"] = {{"focal_length_m", c.camera.focal_length_m},
                 {"f_number", c.camera.f_number},
                 {"pixel_pitch_m", c.camera.pixel_pitch_m},
                 {"max_blur_radius_px", c.camera.max_blur_radius_px}};
  j["focus_schedule"] = {
      {"min_m", c.schedule.min_m},
      {"max_m", c.schedule.max_m},
      {"count", c.schedule.count},
      {"spacing",
       c.schedule.spacing == FocusSpacing::UniformDepth ? "uniform_depth" : "uniform_diopter"}};
  j["dff"] = {{"window", c.dff_window}, {"interpolate", c.dff_interpolate}};
  j["fit"] = {{"method", c.fit_method == FitMethod::Ransac ? "ransac" : "ls"},
              {"weighted", c.fit_weighted},
              {"ransac",
               {{"iterations", c.ransac.iterations},
                {"sample_size", c.ransac.sample_size},
                {"inlier_threshold_m", c.ransac.inlier_threshold}}}};
  j["refine"] = {{"enabled", c.refine_enabled},
                 {"use_uncertainty", c.refine.use_uncertainty},
                 {"sigma_spatial_px", c.refine.sigma_spatial},
                 {"sigma_guide_log", c.refine.sigma_guide},
                 {"iterations", c.refine.iterations},
                 {"max_scale", c.refine.max_scale},
                 {"radius_px", c.refine.radius}};
  j["eval"] = {{"min_depth_m", c.eval_min_depth}, {"max_depth_m", c.eval_max_depth}};
  j["save_maps"] = c.save_maps;
  return j;
}

inline PipelineConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ParamError("config: expected a JSON object");
  const int version = j.value("schema_version", -1);
  if (version != kSchemaVersion) {
    throw ParamError("config: unsupported schema_version " + std::to_string(version));
  }
  PipelineConfig c;
  c.seed = j.value("seed", std::uint64_t{0});
  c.threads = j.value("threads", 1);
  c.output_dir = j.value("output_dir", std::string("out"));
  if (j.contains("inputs")) {
    const json& in = j.at("inputs");
    c.rgb_dir = in.value("rgb_dir", std::string());
    c.gt_depth_dir = in.value("gt_depth_dir", std::string());
    c.relative_depth_dir = in.value("relative_depth_dir", std::string());
    c.stack_dir = in.value("stack_dir", std::string());
    c.dff_depth_dir = in.value("dff_depth_dir", std::string());
    c.dff_uncertainty_dir = in.value("dff_uncertainty_dir", std::string());
    c.gt_format = in.value("gt_format", std::string("png16"));
    c.gt_scale_mm_per_unit = in.value("gt_scale_mm_per_unit", 1.0);
  }
  if (j.contains("camera")) {
    const json& cam = j.at("camera");
    c.camera.focal_length_m = cam.value("focal_length_m", c.camera.focal_length_m);
    c.camera.f_number = cam.value("f_number", c.camera.f_number);
    c.camera.pixel_pitch_m = cam.value("pixel_pitch_m", c.camera.pixel_pitch_m);
    c.camera.max_blur_radius_px = cam.value("max_blur_radius_px", c.camera.max_blur_radius_px);
  }
  if (j.contains("focus_schedule")) {
    const json& s = j.at("focus_schedule");
    c.schedule.min_m = s.value("min_m", c.schedule.min_m);
    c.schedule.max_m = s.value("max_m", c.schedule.max_m);
    c.schedule.count = s.value("count", c.schedule.count);
    const std::string spacing = s.value("spacing", std::string("uniform_diopter"));
    if (spacing == "uniform_depth") {
      c.schedule.spacing = FocusSpacing::UniformDepth;
    } else if (spacing == "uniform_diopter") {
      c.schedule.spacing = FocusSpacing::UniformDiopter;
    } else {
      throw ParamError("config: unknown focus spacing '" + spacing + "'");
    }
  }
  if (j.contains("dff")) {
    c.dff_window = j.at("dff").value("window", c.dff_window);
    c.dff_interpolate = j.at("dff").value("interpolate", c.dff_interpolate);
  }
  if (j.contains("fit")) {
    const json& f = j.at("fit");
    const std::string method = f.value("method", std::string("ls"));
    if (method == "ls") {
      c.fit_method = FitMethod::LeastSquares;
    } else if (method == "ransac") {
      c.fit_method = FitMethod::Ransac;
    } else {
      throw ParamError("config: unknown fit method '" + method + "'");
    }
    c.fit_weighted = f.value("weighted", false);
    if (f.contains("ransac")) {
      const json& r = f.at("ransac");
      c.ransac.iterations = r.value("iterations", c.ransac.iterations);
      c.ransac.sample_size = r.value("sample_size", c.ransac.sample_size);
      c.ransac.inlier_threshold = r.value("inlier_threshold_m", c.ransac.inlier_threshold);
    }
  }
  if (j.contains("refine")) {
    const json& r = j.at("refine");
    c.refine_enabled = r.value("enabled", true);
    c.refine.use_uncertainty = r.value("use_uncertainty", true);
    c.refine.sigma_spatial = r.value("sigma_spatial_px", c.refine.sigma_spatial);
    c.refine.sigma_guide = r.value("sigma_guide_log", c.refine.sigma_guide);
    c.refine.iterations = r.value("iterations", c.refine.iterations);
    c.refine.max_scale = r.value("max_scale", c.refine.max_scale);
    c.refine.radius = r.value("radius_px", c.refine.radius);
  }
  if (j.contains("eval")) {
    c.eval_min_depth = j.at("eval").value("min_depth_m", c.eval_min_depth);
    c.eval_max_depth = j.at("eval").value("max_depth_m", c.eval_max_depth);
  }
  c.save_maps = j.value("save_maps", false);
  return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParamError("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParamError("config: " + path + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Focal-stack directories and the focus-distances sidecar
// ---------------------------------------------------------------------------

inline void write_distances_json(const std::vector<double>& distances, const std::string& path) {
  json j;
  j["distances"] = distances;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(path + ": cannot open for writing");
  out << j.dump(2) << "\n";
}

inline std::vector<double> read_distances_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open for reading");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  if (!j.contains("distances") || !j.at("distances").is_array()) {
    throw DataError(path + ": missing 'distances' array");
  }
  std::vector<double> distances;
  for (const json& v : j.at("distances")) {
    if (!v.is_number()) throw DataError(path + ": non-numeric focus distance");
    distances.push_back(v.get<double>());
  }
  return distances;
}

inline void save_focal_stack_dir(const FocalStack& stack, const std::string& dir) {
  fs::create_directories(dir);
  char name[32];
  for (std::size_t i = 0; i < stack.frames.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%03zu.png", i);
    write_png8(stack.frames[i], (fs::path(dir) / name).string());
  }
  write_distances_json(stack.focus_distances, (fs::path(dir) / "distances.json").string());
}

inline FocalStack load_focal_stack_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir + ": not a focal-stack directory");
  std::vector<std::string> frame_paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      frame_paths.push_back(entry.path().string());
    }
  }
  std::sort(frame_paths.begin(), frame_paths.end());
  if (frame_paths.empty()) throw DataError(dir + ": no PNG frames found");
  std::vector<Image> frames;
  frames.reserve(frame_paths.size());
  for (const std::string& p : frame_paths) frames.push_back(read_png8(p));
  std::vector<double> distances = read_distances_json((fs::path(dir) / "distances.json").string());
  return make_focal_stack(std::move(frames), std::move(distances));
}

// ---------------------------------------------------------------------------
// Per-image pipeline and the batch runner
// ---------------------------------------------------------------------------

struct ImageResult {
  std::string name;
  bool ok = false;
  std::string error;
  AffineScale fit;
  MetricsReport metrics_dff;
  MetricsReport metrics_global;
  MetricsReport metrics_refined;
  double synth_ms = 0.0;
  double dff_ms = 0.0;
  double fit_ms = 0.0;
  double refine_ms = 0.0;
  double total_ms = 0.0;
};

/// Arithmetic means over the images that succeeded.
struct AggregateMetrics {
  double mse = 0.0, rmse = 0.0, absrel = 0.0;
  double delta1 = 0.0, delta2 = 0.0, delta3 = 0.0;
  std::size_t images = 0;
};

struct RunReport {
  PipelineConfig config;
  std::vector<ImageResult> images;
  AggregateMetrics agg_dff;
  AggregateMetrics agg_global;
  AggregateMetrics agg_refined;
  double total_ms = 0.0;
};

namespace detail {

inline std::uint64_t image_seed(std::uint64_t seed, std::size_t index) {
  return splitmix64(seed ^ (0xD1B54A32D192ED03ULL * (static_cast<std::uint64_t>(index) + 1)));
}

inline double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

inline std::vector<std::string> list_stems(const std::string& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw DataError(dir + ": not a directory");
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ext) {
      stems.push_back(entry.path().stem().string());
    }
  }
  std::sort(stems.begin(), stems.end());
  return stems;
}

inline DepthMap load_gt_depth(const PipelineConfig& cfg, const std::string& stem) {
  const fs::path dir(cfg.gt_depth_dir);
  if (cfg.gt_format == "pfm") return read_pfm((dir / (stem + ".pfm")).string(), DepthUnit::Meters);
  if (cfg.gt_format == "png16") {
    return read_png16((dir / (stem + ".png")).string(), cfg.gt_scale_mm_per_unit);
  }
  throw ParamError("config: unknown gt_format '" + cfg.gt_format + "'");
}

inline UncertaintyMap clamp_uncertainty(Grid<double> grid) {
  for (double& v : grid.data) {
    v = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 1.0;
  }
  return grid;
}

}  // namespace detail

/// Runs one image through synthesize -> DFF -> fit -> refine -> evaluate.
/// `image_index` feeds the per-image RANSAC seed derivation.
inline ImageResult process_image(const PipelineConfig& cfg, const std::string& stem,
                                 std::size_t image_index) {
  ImageResult result;
  result.name = stem;
  const auto t_start = std::chrono::steady_clock::now();

  const DepthMap relative =
      read_pfm((fs::path(cfg.relative_depth_dir) / (stem + ".pfm")).string(),
               DepthUnit::Dimensionless);
  const DepthMap gt = detail::load_gt_depth(cfg, stem);
  if (!relative.same_size(gt)) {
    throw DataError(stem + ": relative depth is " + std::to_string(relative.width()) + "x" +
                    std::to_string(relative.height()) + " but ground truth is " +
                    std::to_string(gt.width()) + "x" + std::to_string(gt.height()));
  }

  // Metric branch: precomputed maps, real stacks, or synthesized stacks.
  DepthMap dff_map;
  UncertaintyMap uncertainty;
  if (!cfg.dff_depth_dir.empty()) {
    dff_map = read_pfm((fs::path(cfg.dff_depth_dir) / (stem + ".pfm")).string(),
                       DepthUnit::Meters);
    if (!cfg.dff_uncertainty_dir.empty()) {
      uncertainty = detail::clamp_uncertainty(
          read_pfm_grid((fs::path(cfg.dff_uncertainty_dir) / (stem + ".pfm")).string()));
    } else {
      uncertainty = UncertaintyMap(dff_map.width(), dff_map.height(), 0.0);
    }
  } else {
    FocalStack stack;
    const auto t_synth = std::chrono::steady_clock::now();
    if (!cfg.stack_dir.empty()) {
      stack = load_focal_stack_dir((fs::path(cfg.stack_dir) / stem).string());
    } else {
      if (cfg.rgb_dir.empty()) {
        throw ParamError("config: need rgb_dir (or stack_dir / dff_depth_dir) to obtain a stack");
      }
      const Image rgb = read_png8((fs::path(cfg.rgb_dir) / (stem + ".png")).string());
      const FocusSchedule schedule = make_focus_schedule(
          cfg.schedule.min_m, cfg.schedule.max_m, cfg.schedule.count, cfg.schedule.spacing);
      stack = synthesize_focal_stack(rgb, gt, cfg.camera, schedule);
    }
    result.synth_ms = detail::elapsed_ms(t_synth);

    const auto t_dff = std::chrono::steady_clock::now();
    const FocusVolume volume = build_focus_volume(stack, cfg.dff_window);
    auto dff_out = dff_depth(volume, cfg.dff_interpolate);
    dff_map = std::move(dff_out.first);
    uncertainty = std::move(dff_out.second);
    result.dff_ms = detail::elapsed_ms(t_dff);
  }
  if (!dff_map.same_size(gt)) {
    throw DataError(stem + ": DFF depth dimensions differ from ground truth");
  }

  // Global affine alignment of relative depth against the DFF metric branch.
  const auto t_fit = std::chrono::steady_clock::now();
  const Mask fit_mask = full_mask(relative.width(), relative.height());
  if (cfg.fit_method == FitMethod::Ransac) {
    RansacConfig ransac = cfg.ransac;
    ransac.seed = detail::image_seed(cfg.seed, image_index);
    result.fit = fit_global_ransac(relative, dff_map, fit_mask, ransac);
  } else {
    result.fit = fit_global_ls(relative, dff_map, fit_mask,
                               cfg.fit_weighted ? &uncertainty : nullptr);
  }
  result.fit_ms = detail::elapsed_ms(t_fit);
  const DepthMap global_scaled = apply_affine(relative, result.fit);

  // Refinement: dense scale map, edge-aware smoothing, application.
  DepthMap final_map = global_scaled;
  ScaleMap refined;
  const auto t_refine = std::chrono::steady_clock::now();
  if (cfg.refine_enabled) {
    const ScaleMap raw =
        dense_scale_map(global_scaled, dff_map, full_mask(gt.width(), gt.height()));
    refined = refine_scale_map(raw, uncertainty, global_scaled, cfg.refine);
    final_map = apply_scale_map(global_scaled, refined);
  }
  result.refine_ms = detail::elapsed_ms(t_refine);

  const Mask eval_mask = valid_mask(gt, cfg.eval_min_depth, cfg.eval_max_depth);
  result.metrics_dff = compute_metrics(dff_map, gt, eval_mask);
  result.metrics_global = compute_metrics(global_scaled, gt, eval_mask);
  result.metrics_refined = compute_metrics(final_map, gt, eval_mask);

  if (cfg.save_maps) {
    const fs::path maps_dir = fs::path(cfg.output_dir) / "maps";
    fs::create_directories(maps_dir);
    write_pfm(dff_map, (maps_dir / (stem + "_dff.pfm")).string());
    write_pfm_grid(uncertainty, nullptr, (maps_dir / (stem + "_uncertainty.pfm")).string());
    write_pfm(global_scaled, (maps_dir / (stem + "_global.pfm")).string());
    write_pfm(final_map, (maps_dir / (stem + "_refined.pfm")).string());
    if (cfg.refine_enabled) {
      write_pfm_grid(refined.values, &refined.valid, (maps_dir / (stem + "_scale.pfm")).string());
    }
  }

  result.total_ms = detail::elapsed_ms(t_start);
  result.ok = true;
  return result;
}

namespace detail {

inline void accumulate(AggregateMetrics& agg, const MetricsReport& m) {
  agg.mse += m.mse;
  agg.rmse += m.rmse;
  agg.absrel += m.absrel;
  agg.delta1 += m.delta1;
  agg.delta2 += m.delta2;
  agg.delta3 += m.delta3;
  ++agg.images;
}

inline void finalize(AggregateMetrics& agg) {
  if (agg.images == 0) return;
  const double n = static_cast<double>(agg.images);
  agg.mse /= n;
  agg.rmse /= n;
  agg.absrel /= n;
  agg.delta1 /= n;
  agg.delta2 /= n;
  agg.delta3 /= n;
}

}  // namespace detail

/// Runs the full pipeline over every image found in the relative-depth
/// directory. Per-image failures are recorded and skipped; the run only fails
/// when every image fails. Results are assembled in input order, so the
/// report does not depend on the worker count.
inline RunReport run_pipeline(const PipelineConfig& cfg) {
  if (cfg.relative_depth_dir.empty()) throw ParamError("config: relative_depth_dir is required");
  if (cfg.gt_depth_dir.empty()) throw ParamError("config: gt_depth_dir is required");
  if (!(cfg.eval_min_depth < cfg.eval_max_depth)) {
    throw ParamError("config: eval depth caps must satisfy min < max");
  }
  const auto t_start = std::chrono::steady_clock::now();
  const std::vector<std::string> stems =
      detail::list_stems(cfg.relative_depth_dir, ".pfm");
  if (stems.empty()) {
    throw DataError(cfg.relative_depth_dir + ": no input images (*.pfm) found");
  }

  RunReport report;
  report.config = cfg;
  report.images.resize(stems.size());

  const int threads = std::max(1, cfg.threads);
  auto worker_body = [&](std::size_t i) {
    try {
      report.images[i] = process_image(cfg, stems[i], i);
    } catch (const std::exception& e) {
      report.images[i] = ImageResult{};
      report.images[i].name = stems[i];
      report.images[i].ok = false;
      report.images[i].error = e.what();
    }
  };
  if (threads == 1 || stems.size() == 1) {
    for (std::size_t i = 0; i < stems.size(); ++i) worker_body(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t n_workers = std::min<std::size_t>(threads, stems.size());
    pool.reserve(n_workers);
    for (std::size_t t = 0; t < n_workers; ++t) {
      pool.emplace_back([&]() {
        for (std::size_t i = next.fetch_add(1); i < stems.size(); i = next.fetch_add(1)) {
          worker_body(i);
        }
      });
    }
    for (std::thread& t : pool) t.join();
  }

  for (const ImageResult& r : report.images) {
    if (!r.ok) continue;
    detail::accumulate(report.agg_dff, r.metrics_dff);
    detail::accumulate(report.agg_global, r.metrics_global);
    detail::accumulate(report.agg_refined, r.metrics_refined);
  }
  detail::finalize(report.agg_dff);
  detail::finalize(report.agg_global);
  detail::finalize(report.agg_refined);
  if (report.agg_dff.images == 0) {
    throw AllImagesFailedError("pipeline: every image failed; first error: " +
                               (report.images.empty() ? std::string("none")
                                                      : report.images.front().error));
  }
  report.total_ms = detail::elapsed_ms(t_start);
  return report;
}

// ---------------------------------------------------------------------------
// Report serialization. report.json must serialize byte-identically for
// identical (config, seed) runs, so wall-clock timings go to timings.json.
// ---------------------------------------------------------------------------

inline json metrics_to_json(const MetricsReport& m) {
  return json{{"mse", m.mse},       {"rmse", m.rmse},     {"absrel", m.absrel},
              {"delta1", m.delta1}, {"delta2", m.delta2}, {"delta3", m.delta3},
              {"pixels", m.pixel_count}};
}

inline json aggregate_to_json(const AggregateMetrics& a) {
  return json{{"mse", a.mse},       {"rmse", a.rmse},     {"absrel", a.absrel},
              {"delta1", a.delta1}, {"delta2", a.delta2}, {"delta3", a.delta3},
              {"images", a.images}};
}

inline json report_to_json(const RunReport& report) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "pipeline_report";
  // The worker count cannot change the numbers, so it is not part of the
  // echoed configuration; reports from different --threads settings compare
  // byte-identical.
  json cfg_echo = config_to_json(report.config);
  cfg_echo.erase("threads");
  j["config"] = std::move(cfg_echo);
  j["images"] = json::array();
  for (const ImageResult& r : report.images) {
    json img;
    img["name"] = r.name;
    img["ok"] = r.ok;
    if (r.ok) {
      img["fit"] = {{"scale", r.fit.scale}, {"shift", r.fit.shift}};
      img["metrics"] = {{"dff", metrics_to_json(r.metrics_dff)},
                        {"global", metrics_to_json(r.metrics_global)},
                        {"refined", metrics_to_json(r.metrics_refined)}};
    } else {
      img["error"] = r.error;
    }
    j["images"].push_back(std::move(img));
  }
  j["aggregate"] = {{"dff", aggregate_to_json(report.agg_dff)},
                    {"global", aggregate_to_json(report.agg_global)},
                    {"refined", aggregate_to_json(report.agg_refined)}};
  return j;
}

inline json timings_to_json(const RunReport& report) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "pipeline_timings";
  j["images"] = json::array();
  for (const ImageResult& r : report.images) {
    if (!r.ok) continue;
    j["images"].push_back(json{{"name", r.name},
                               {"synth_ms", r.synth_ms},
                               {"dff_ms", r.dff_ms},
                               {"fit_ms", r.fit_ms},
                               {"refine_ms", r.refine_ms},
                               {"total_ms", r.total_ms}});
  }
  j["total_ms"] = report.total_ms;
  return j;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw DataError(path + ": cannot open for writing");
  out << text;
  if (!out) throw DataError(path + ": write failed");
}

inline void write_run_report(const RunReport& report, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "report.json").string(), report_to_json(report).dump(2) + "\n");
  write_text_file((fs::path(out_dir) / "timings.json").string(),
                  timings_to_json(report).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Ablation driver
// ---------------------------------------------------------------------------

enum class AblationAxis { StackSize, Uncertainty, FitMethod, Refinement };

inline AblationAxis ablation_axis_from_string(const std::string& name) {
  if (name == "stack_size") return AblationAxis::StackSize;
  if (name == "uncertainty") return AblationAxis::Uncertainty;
  if (name == "fit_method") return AblationAxis::FitMethod;
  if (name == "refinement") return AblationAxis::Refinement;
  throw ParamError("ablate: unknown axis '" + name +
                   "' (expected stack_size, uncertainty, fit_method or refinement)");
}

struct AblationRow {
  std::string label;
  RunReport report;
};

struct AblationReport {
  std::string axis;
  std::vector<AblationRow> rows;
};

/// Runs the pipeline once per axis value, holding everything else fixed.
inline AblationReport ablate(const PipelineConfig& base, AblationAxis axis) {
  AblationReport out;
  auto run_variant = [&](const std::string& label, PipelineConfig cfg) {
    out.rows.push_back(AblationRow{label, run_pipeline(cfg)});
  };
  switch (axis) {
    case AblationAxis::StackSize: {
      out.axis = "stack_size";
      for (int count : {5, 10}) {
        PipelineConfig cfg = base;
        cfg.schedule.count = count;
        run_variant("stack_size=" + std::to_string(count), cfg);
      }
      break;
    }
    case AblationAxis::Uncertainty: {
      out.axis = "uncertainty";
      for (bool on : {true, false}) {
        PipelineConfig cfg = base;
        cfg.refine.use_uncertainty = on;
        run_variant(on ? "uncertainty=on" : "uncertainty=off", cfg);
      }
      break;
    }
    case AblationAxis::FitMethod: {
      out.axis = "fit_method";
      for (FitMethod method : {FitMethod::LeastSquares, FitMethod::Ransac}) {
        PipelineConfig cfg = base;
        cfg.fit_method = method;
        run_variant(method == FitMethod::Ransac ? "fit=ransac" : "fit=ls", cfg);
      }
      break;
    }
    case AblationAxis::Refinement: {
      out.axis = "refinement";
      for (bool on : {true, false}) {
        PipelineConfig cfg = base;
        cfg.refine_enabled = on;
        run_variant(on ? "refinement=on" : "refinement=off", cfg);
      }
      break;
    }
  }
  return out;
}

inline json ablation_to_json(const AblationReport& report) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "ablation_report";
  j["axis"] = report.axis;
  j["rows"] = json::array();
  for (const AblationRow& row : report.rows) {
    json r;
    r["label"] = row.label;
    r["aggregate"] = {{"dff", aggregate_to_json(row.report.agg_dff)},
                      {"global", aggregate_to_json(row.report.agg_global)},
                      {"refined", aggregate_to_json(row.report.agg_refined)}};
    json per_image = json::array();
    for (const ImageResult& img : row.report.images) {
      if (!img.ok) continue;
      per_image.push_back(json{{"name", img.name},
                               {"global_rmse", img.metrics_global.rmse},
                               {"refined_rmse", img.metrics_refined.rmse}});
    }
    r["images"] = std::move(per_image);
    j["rows"].push_back(std::move(r));
  }
  return j;
}

// ---------------------------------------------------------------------------
// Global-scaling bench
// ---------------------------------------------------------------------------

struct BenchMethod {
  std::string label;
  FitMethod method = FitMethod::LeastSquares;
  RansacConfig ransac;
};

inline std::vector<BenchMethod> default_bench_methods() {
  std::vector<BenchMethod> methods;
  methods.push_back(BenchMethod{"ls", FitMethod::LeastSquares, {}});
  methods.push_back(BenchMethod{"ransac_60_5", FitMethod::Ransac, RansacConfig{60, 5, 0.05, 0}});
  methods.push_back(
      BenchMethod{"ransac_100_20", FitMethod::Ransac, RansacConfig{100, 20, 0.05, 0}});
  methods.push_back(
      BenchMethod{"ransac_200_50", FitMethod::Ransac, RansacConfig{200, 50, 0.05, 0}});
  return methods;
}

struct BenchRow {
  std::string method;
  int height = 0;
  int width = 0;
  double median_ms = 0.0;
  double scale_error = 0.0;  // |fitted - true| / |true|
  double shift_error = 0.0;  // absolute, meters
  double map_rmse = 0.0;     // fitted map vs true affine map
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::uint64_t seed = 0;
  int repeats = 0;
};

/// Times each fit method on synthetic affine-plus-noise data, one row per
/// (size, method). Runs strictly sequentially; noise_sigma 0 produces exact
/// affine data.
inline BenchReport bench_global_scaling(const std::vector<std::pair<int, int>>& sizes,
                                        const std::vector<BenchMethod>& methods, int repeats,
                                        std::uint64_t seed, double noise_sigma = 0.01) {
  if (repeats < 3) throw ParamError("bench: repeats must be >= 3");
  if (sizes.empty()) throw ParamError("bench: need at least one size");
  BenchReport report;
  report.seed = seed;
  report.repeats = repeats;

  for (std::size_t si = 0; si < sizes.size(); ++si) {
    const int h = sizes[si].first;
    const int w = sizes[si].second;
    if (h < 2 || w < 2) throw ParamError("bench: sizes must be at least 2x2");

    std::mt19937_64 rng(detail::splitmix64(seed ^ (0xA24BAED4963EE407ULL * (si + 1))));
    std::uniform_real_distribution<double> rel_dist(0.1, 5.0);
    std::uniform_real_distribution<double> scale_dist(0.5, 4.0);
    std::uniform_real_distribution<double> shift_dist(0.1, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    const double true_scale = scale_dist(rng);
    const double true_shift = shift_dist(rng);
    const std::size_t pixels = static_cast<std::size_t>(w) * h;
    std::vector<double> rel_values(pixels);
    std::vector<double> met_values(pixels);
    for (std::size_t i = 0; i < pixels; ++i) {
      rel_values[i] = rel_dist(rng);
      met_values[i] = true_scale * rel_values[i] + true_shift +
                      (noise_sigma > 0.0 ? noise_sigma * noise(rng) : 0.0);
    }
    const DepthMap relative = make_depth_map(w, h, rel_values, DepthUnit::Dimensionless);
    const DepthMap metric = make_depth_map(w, h, met_values, DepthUnit::Meters);
    const Mask mask = full_mask(w, h);

    for (const BenchMethod& method : methods) {
      AffineScale fit;
      std::vector<double> times;
      times.reserve(static_cast<std::size_t>(repeats));
      for (int rep = -1; rep < repeats; ++rep) {  // rep -1 is an untimed warmup
        const auto t0 = std::chrono::steady_clock::now();
        if (method.method == FitMethod::Ransac) {
          RansacConfig cfg = method.ransac;
          cfg.seed = seed;
          fit = fit_global_ransac(relative, metric, mask, cfg);
        } else {
          fit = fit_global_ls(relative, metric, mask);
        }
        if (rep >= 0) times.push_back(detail::elapsed_ms(t0));
      }
      std::sort(times.begin(), times.end());
      const double median = times[times.size() / 2];

      double sq = 0.0;
      for (std::size_t i = 0; i < pixels; ++i) {
        const double err =
            (fit.scale * rel_values[i] + fit.shift) - (true_scale * rel_values[i] + true_shift);
        sq += err * err;
      }
      BenchRow row;
      row.method = method.label;
      row.height = h;
      row.width = w;
      row.median_ms = median;
      row.scale_error = std::abs(fit.scale - true_scale) / std::abs(true_scale);
      row.shift_error = std::abs(fit.shift - true_shift);
      row.map_rmse = std::sqrt(sq / static_cast<double>(pixels));
      report.rows.push_back(row);
    }
  }
  return report;
}

inline json bench_to_json(const BenchReport& report) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "bench_report";
  j["seed"] = report.seed;
  j["repeats"] = report.repeats;
  j["rows"] = json::array();
  for (const BenchRow& row : report.rows) {
    j["rows"].push_back(json{{"method", row.method},
                             {"height", row.height},
                             {"width", row.width},
                             {"median_ms", row.median_ms},
                             {"scale_error", row.scale_error},
                             {"shift_error_m", row.shift_error},
                             {"map_rmse", row.map_rmse}});
  }
  return j;
}

}  // namespace depthfuse
