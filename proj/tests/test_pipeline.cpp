#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>

#include "depthfuse/pipeline.hpp"
#include "support/test_helpers.hpp"

using namespace depthfuse;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

/// Smooth positive scene depth in roughly [1, 3] meters.
double scene_depth(int x, int y, int w, int h, int variant) {
  const double u = static_cast<double>(x) / w;
  const double v = static_cast<double>(y) / h;
  return 2.0 + 0.8 * std::sin(2.0 * 3.14159265358979 * (u + 0.13 * variant)) *
                   std::cos(3.14159265358979 * v);
}

/// Writes a dataset of `count` scenes with ground truth (PNG16), relative
/// depth (PFM) and a precomputed DFF branch (depth + uncertainty PFMs).
PipelineConfig write_dataset(const testsupport::TempDir& tmp, int count, int w, int h,
                             double corrupt_fraction = 0.0) {
  namespace fs = std::filesystem;
  const fs::path root = tmp.path;
  fs::create_directories(root / "gt");
  fs::create_directories(root / "rel");
  fs::create_directories(root / "dff");
  fs::create_directories(root / "unc");

  const double true_scale = 2.0, true_shift = 0.5;
  for (int s = 0; s < count; ++s) {
    const std::size_t pixels = static_cast<std::size_t>(w) * h;
    std::vector<double> gt(pixels), rel(pixels), dff(pixels), unc(pixels, 0.05);
    testsupport::PortableRng rng(1000 + static_cast<std::uint64_t>(s));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        gt[i] = scene_depth(x, y, w, h, s);
        // Relative input carries a smooth model error on top of the affine.
        const double wobble =
            0.02 * std::sin(5.0 * x / static_cast<double>(w) + s) *
            std::cos(4.0 * y / static_cast<double>(h));
        rel[i] = (gt[i] - true_shift) / true_scale + wobble;
        dff[i] = gt[i];
        if (corrupt_fraction > 0.0 && rng.uniform(0.0, 1.0) < corrupt_fraction) {
          dff[i] = gt[i] * rng.uniform(1.6, 2.4);
          unc[i] = 0.98;
        }
      }
    }
    const std::string name = "scene" + std::to_string(s);
    write_png16(make_depth_map(w, h, gt), (root / "gt" / (name + ".png")).string(), 0.1);
    write_pfm(make_depth_map(w, h, rel, DepthUnit::Dimensionless),
              (root / "rel" / (name + ".pfm")).string());
    write_pfm(make_depth_map(w, h, dff), (root / "dff" / (name + ".pfm")).string());
    Grid<double> unc_grid(w, h);
    unc_grid.data = unc;
    write_pfm_grid(unc_grid, nullptr, (root / "unc" / (name + ".pfm")).string());
  }

  PipelineConfig cfg;
  cfg.gt_depth_dir = (root / "gt").string();
  cfg.gt_scale_mm_per_unit = 0.1;
  cfg.relative_depth_dir = (root / "rel").string();
  cfg.dff_depth_dir = (root / "dff").string();
  cfg.dff_uncertainty_dir = (root / "unc").string();
  cfg.output_dir = (root / "out").string();
  cfg.eval_min_depth = 0.001;
  cfg.eval_max_depth = 10.0;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("config JSON round trips exactly") {
  PipelineConfig cfg;
  cfg.seed = 99;
  cfg.threads = 4;
  cfg.rgb_dir = "/data/rgb";
  cfg.fit_method = FitMethod::Ransac;
  cfg.ransac.iterations = 123;
  cfg.refine.sigma_guide = 0.2;
  cfg.schedule.spacing = FocusSpacing::UniformDepth;
  cfg.eval_max_depth = 2.0;
  const json j1 = config_to_json(cfg);
  const PipelineConfig back = config_from_json(j1);
  const json j2 = config_to_json(back);
  REQUIRE(j1.dump() == j2.dump());
}

TEST_CASE("config parsing validates schema and enums") {
  json j = config_to_json(PipelineConfig{});
  j["schema_version"] = 999;
  REQUIRE_THROWS_AS(config_from_json(j), ParamError);
  j = config_to_json(PipelineConfig{});
  j["fit"]["method"] = "banana";
  REQUIRE_THROWS_AS(config_from_json(j), ParamError);
  j = config_to_json(PipelineConfig{});
  j["focus_schedule"]["spacing"] = "banana";
  REQUIRE_THROWS_AS(config_from_json(j), ParamError);
}

TEST_CASE("pipeline refines toward the dff branch on the corruption suite") {
  testsupport::TempDir tmp("pipe_basic");
  const PipelineConfig cfg = write_dataset(tmp, 2, 48, 36, 0.2);
  const RunReport report = run_pipeline(cfg);
  REQUIRE(report.images.size() == 2);
  for (const ImageResult& img : report.images) {
    REQUIRE(img.ok);
    REQUIRE(img.metrics_refined.rmse < img.metrics_global.rmse);
  }
  REQUIRE(report.agg_refined.images == 2);
}

TEST_CASE("report aggregates are the arithmetic mean of the per-image metrics") {
  testsupport::TempDir tmp("pipe_agg");
  const PipelineConfig cfg = write_dataset(tmp, 3, 24, 18);
  const RunReport report = run_pipeline(cfg);
  double mse = 0.0, rmse = 0.0, absrel = 0.0, d1 = 0.0;
  for (const ImageResult& img : report.images) {
    mse += img.metrics_refined.mse;
    rmse += img.metrics_refined.rmse;
    absrel += img.metrics_refined.absrel;
    d1 += img.metrics_refined.delta1;
  }
  const double n = static_cast<double>(report.images.size());
  REQUIRE_THAT(report.agg_refined.mse, WithinAbs(mse / n, 1e-12));
  REQUIRE_THAT(report.agg_refined.rmse, WithinAbs(rmse / n, 1e-12));
  REQUIRE_THAT(report.agg_refined.absrel, WithinAbs(absrel / n, 1e-12));
  REQUIRE_THAT(report.agg_refined.delta1, WithinAbs(d1 / n, 1e-12));
}

TEST_CASE("identical configs produce byte-identical reports across thread counts") {
  testsupport::TempDir tmp("pipe_det");
  PipelineConfig cfg = write_dataset(tmp, 3, 24, 18, 0.1);
  cfg.fit_method = FitMethod::Ransac;
  cfg.ransac.iterations = 40;
  cfg.ransac.sample_size = 30;

  cfg.threads = 1;
  const std::string a = report_to_json(run_pipeline(cfg)).dump(2);
  const std::string b = report_to_json(run_pipeline(cfg)).dump(2);
  cfg.threads = 4;
  const std::string c = report_to_json(run_pipeline(cfg)).dump(2);
  REQUIRE(a == b);
  REQUIRE(a == c);
}

TEST_CASE("the synthesized-stack path is deterministic end to end") {
  namespace fs = std::filesystem;
  testsupport::TempDir tmp("pipe_synth");
  const int w = 20, h = 14;
  fs::create_directories(tmp.path / "gt");
  fs::create_directories(tmp.path / "rel");
  fs::create_directories(tmp.path / "rgb");
  for (int s = 0; s < 2; ++s) {
    std::vector<double> gt(static_cast<std::size_t>(w) * h), rel(gt.size());
    Image rgb(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        gt[i] = scene_depth(x, y, w, h, s);
        rel[i] = (gt[i] - 0.2) / 1.5;
        rgb.at(x, y) = testsupport::hash_texture(x, y, 17 + s);
      }
    }
    const std::string name = "img" + std::to_string(s);
    write_png16(make_depth_map(w, h, gt), tmp.str("gt/" + name + ".png"), 0.1);
    write_pfm(make_depth_map(w, h, rel, DepthUnit::Dimensionless),
              tmp.str("rel/" + name + ".pfm"));
    write_png8(rgb, tmp.str("rgb/" + name + ".png"));
  }
  PipelineConfig cfg;
  cfg.gt_depth_dir = tmp.str("gt");
  cfg.gt_scale_mm_per_unit = 0.1;
  cfg.relative_depth_dir = tmp.str("rel");
  cfg.rgb_dir = tmp.str("rgb");
  cfg.output_dir = tmp.str("out");
  cfg.schedule = ScheduleConfig{1.0, 3.0, 3, FocusSpacing::UniformDiopter};
  cfg.refine.radius = 6;
  const std::string a = report_to_json(run_pipeline(cfg)).dump(2);
  const std::string b = report_to_json(run_pipeline(cfg)).dump(2);
  REQUIRE(a == b);
}

TEST_CASE("an exact-affine relative input on a two-plane scene closes the loop") {
  // Both plane depths sit in the focus schedule, and the relative input is an
  // exact affine image of the ground truth; the refined stage must not end up
  // worse than the quantization error of the metric branch.
  namespace fs = std::filesystem;
  testsupport::TempDir tmp("pipe_planes");
  const int w = 96, h = 48;
  fs::create_directories(tmp.path / "gt");
  fs::create_directories(tmp.path / "rel");
  fs::create_directories(tmp.path / "rgb");
  std::vector<double> gt(static_cast<std::size_t>(w) * h), rel(gt.size());
  Image rgb(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      gt[i] = x < w / 2 ? 1.0 : 2.0;
      rel[i] = 0.5 * gt[i] + 0.1;
      rgb.at(x, y) = testsupport::hash_texture(x, y, 777) > 0.5 ? 1.0 : 0.0;
    }
  }
  write_png16(make_depth_map(w, h, gt), tmp.str("gt/planes.png"), 0.1);
  write_pfm(make_depth_map(w, h, rel, DepthUnit::Dimensionless), tmp.str("rel/planes.pfm"));
  write_png8(rgb, tmp.str("rgb/planes.png"));

  PipelineConfig cfg;
  cfg.gt_depth_dir = tmp.str("gt");
  cfg.gt_scale_mm_per_unit = 0.1;
  cfg.relative_depth_dir = tmp.str("rel");
  cfg.rgb_dir = tmp.str("rgb");
  cfg.output_dir = tmp.str("out");
  cfg.camera.focal_length_m = 0.01;
  cfg.camera.f_number = 0.8;
  cfg.camera.pixel_pitch_m = 1.2e-6;
  cfg.camera.max_blur_radius_px = 12.0;
  cfg.schedule = ScheduleConfig{0.5, 4.0, 15, FocusSpacing::UniformDiopter};
  cfg.dff_interpolate = false;
  const RunReport report = run_pipeline(cfg);
  REQUIRE(report.images.size() == 1);
  const ImageResult& img = report.images[0];
  REQUIRE(img.ok);
  REQUIRE(img.metrics_refined.rmse <= img.metrics_dff.rmse);
  // The affine fit against the DFF branch lands close to the planted inverse.
  REQUIRE_THAT(img.fit.scale, WithinRel(2.0, 0.05));
  REQUIRE_THAT(img.fit.shift, WithinAbs(-0.2, 0.05));
}

TEST_CASE("per-image failures are isolated") {
  testsupport::TempDir tmp("pipe_fail");
  PipelineConfig cfg = write_dataset(tmp, 3, 16, 12);
  {
    std::ofstream corrupt(tmp.str("rel/scene1.pfm"), std::ios::trunc | std::ios::binary);
    corrupt << "not a pfm";
  }
  const RunReport report = run_pipeline(cfg);
  REQUIRE(report.images.size() == 3);
  REQUIRE(report.images[0].ok);
  REQUIRE_FALSE(report.images[1].ok);
  REQUIRE(report.images[1].error.find("scene1") != std::string::npos);
  REQUIRE(report.images[2].ok);
  REQUIRE(report.agg_refined.images == 2);
}

TEST_CASE("the run fails only when every image fails") {
  testsupport::TempDir tmp("pipe_allfail");
  PipelineConfig cfg = write_dataset(tmp, 2, 16, 12);
  for (int s = 0; s < 2; ++s) {
    std::ofstream corrupt(tmp.str("rel/scene" + std::to_string(s) + ".pfm"),
                          std::ios::trunc | std::ios::binary);
    corrupt << "still not a pfm";
  }
  REQUIRE_THROWS_AS(run_pipeline(cfg), AllImagesFailedError);
}

TEST_CASE("an empty input directory is an error with no report") {
  testsupport::TempDir tmp("pipe_empty");
  std::filesystem::create_directories(tmp.path / "rel");
  std::filesystem::create_directories(tmp.path / "gt");
  PipelineConfig cfg;
  cfg.relative_depth_dir = tmp.str("rel");
  cfg.gt_depth_dir = tmp.str("gt");
  cfg.output_dir = tmp.str("out");
  REQUIRE_THROWS_AS(run_pipeline(cfg), DataError);
  REQUIRE_FALSE(std::filesystem::exists(tmp.path / "out" / "report.json"));
}

TEST_CASE("ablation over refinement produces one row per setting") {
  testsupport::TempDir tmp("pipe_ablate");
  const PipelineConfig cfg = write_dataset(tmp, 2, 32, 24, 0.2);
  const AblationReport report = ablate(cfg, AblationAxis::Refinement);
  REQUIRE(report.axis == "refinement");
  REQUIRE(report.rows.size() == 2);
  REQUIRE(report.rows[0].label == "refinement=on");
  REQUIRE(report.rows[1].label == "refinement=off");
  // With refinement off, the refined stage is the globally scaled stage.
  REQUIRE(report.rows[1].report.agg_refined.rmse == report.rows[1].report.agg_global.rmse);
  REQUIRE(report.rows[0].report.agg_refined.rmse < report.rows[1].report.agg_refined.rmse);
}

TEST_CASE("ablation over uncertainty favors the uncertainty-aware variant") {
  testsupport::TempDir tmp("pipe_ablate_unc");
  const PipelineConfig cfg = write_dataset(tmp, 2, 32, 24, 0.2);
  const AblationReport report = ablate(cfg, AblationAxis::Uncertainty);
  REQUIRE(report.rows.size() == 2);
  REQUIRE(report.rows[0].report.agg_refined.rmse <= report.rows[1].report.agg_refined.rmse);
}

TEST_CASE("stack-size and fit-method ablations run on the synthesized path") {
  namespace fs = std::filesystem;
  testsupport::TempDir tmp("pipe_ablate_axes");
  const int w = 20, h = 14;
  fs::create_directories(tmp.path / "gt");
  fs::create_directories(tmp.path / "rel");
  fs::create_directories(tmp.path / "rgb");
  std::vector<double> gt(static_cast<std::size_t>(w) * h), rel(gt.size());
  Image rgb(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      gt[i] = 1.0 + 1.2 * static_cast<double>(x) / w;
      rel[i] = (gt[i] - 0.2) / 1.4;
      rgb.at(x, y) = testsupport::hash_texture(x, y, 55);
    }
  }
  write_png16(make_depth_map(w, h, gt), tmp.str("gt/a.png"), 0.1);
  write_pfm(make_depth_map(w, h, rel, DepthUnit::Dimensionless), tmp.str("rel/a.pfm"));
  write_png8(rgb, tmp.str("rgb/a.png"));
  PipelineConfig cfg;
  cfg.gt_depth_dir = tmp.str("gt");
  cfg.gt_scale_mm_per_unit = 0.1;
  cfg.relative_depth_dir = tmp.str("rel");
  cfg.rgb_dir = tmp.str("rgb");
  cfg.output_dir = tmp.str("out");
  cfg.schedule = ScheduleConfig{0.8, 3.0, 5, FocusSpacing::UniformDiopter};
  cfg.refine.radius = 6;
  cfg.ransac = RansacConfig{30, 20, 0.1, 0};

  const AblationReport sizes = ablate(cfg, AblationAxis::StackSize);
  REQUIRE(sizes.rows.size() == 2);
  REQUIRE(sizes.rows[0].label == "stack_size=5");
  REQUIRE(sizes.rows[1].label == "stack_size=10");
  for (const AblationRow& row : sizes.rows) REQUIRE(row.report.agg_refined.images == 1);

  const AblationReport fits = ablate(cfg, AblationAxis::FitMethod);
  REQUIRE(fits.rows.size() == 2);
  REQUIRE(fits.rows[0].label == "fit=ls");
  REQUIRE(fits.rows[1].label == "fit=ransac");

  REQUIRE_THROWS_AS(ablation_axis_from_string("banana"), ParamError);
}

TEST_CASE("bench reports accurate fits for every method") {
  const std::vector<std::pair<int, int>> sizes{{30, 40}};
  std::vector<BenchMethod> methods;
  methods.push_back(BenchMethod{"ls", FitMethod::LeastSquares, {}});
  methods.push_back(BenchMethod{"ransac_60_5", FitMethod::Ransac, RansacConfig{60, 5, 0.05, 0}});
  const BenchReport noisy = bench_global_scaling(sizes, methods, 3, 11);
  REQUIRE(noisy.rows.size() == 2);
  for (const BenchRow& row : noisy.rows) {
    REQUIRE(row.median_ms >= 0.0);
    REQUIRE(row.map_rmse < 0.01);
  }
  const BenchReport exact = bench_global_scaling(sizes, methods, 3, 11, 0.0);
  for (const BenchRow& row : exact.rows) {
    REQUIRE(row.scale_error < 1e-6);
    REQUIRE(row.shift_error < 1e-6);
    REQUIRE(row.map_rmse < 1e-6);
  }
  REQUIRE_THROWS_AS(bench_global_scaling(sizes, methods, 2, 11), ParamError);
  REQUIRE_THROWS_AS(bench_global_scaling({}, methods, 3, 11), ParamError);
}

TEST_CASE("run reports serialize to the versioned schema") {
  testsupport::TempDir tmp("pipe_report");
  const PipelineConfig cfg = write_dataset(tmp, 1, 16, 12);
  const RunReport report = run_pipeline(cfg);
  write_run_report(report, cfg.output_dir);
  std::ifstream in(tmp.str("out/report.json"));
  json j;
  in >> j;
  REQUIRE(j["schema_version"] == kSchemaVersion);
  REQUIRE(j["kind"] == "pipeline_report");
  REQUIRE(j["images"].size() == 1);
  REQUIRE(j["aggregate"]["refined"].contains("rmse"));
  std::ifstream tin(tmp.str("out/timings.json"));
  json t;
  tin >> t;
  REQUIRE(t["kind"] == "pipeline_timings");
}
