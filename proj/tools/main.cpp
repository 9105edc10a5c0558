#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "depthfuse/core.hpp"
#include "depthfuse/dff.hpp"
#include "depthfuse/fusion.hpp"
#include "depthfuse/io.hpp"
#include "depthfuse/metrics.hpp"
#include "depthfuse/optics.hpp"
#include "depthfuse/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using depthfuse::json;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  bool close_range = false;
};

depthfuse::PipelineConfig resolve_config(const GlobalOptions& opts) {
  depthfuse::PipelineConfig cfg;
  if (!opts.config_path.empty()) cfg = depthfuse::load_pipeline_config(opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.out) cfg.output_dir = *opts.out;
  if (opts.threads) cfg.threads = *opts.threads;
  if (opts.close_range) cfg.eval_max_depth = 2.0;
  return cfg;
}

std::string stage_dir(const depthfuse::PipelineConfig& cfg, const std::string& configured,
                      const char* fallback) {
  if (!configured.empty()) return configured;
  return (fs::path(cfg.output_dir) / fallback).string();
}

/// Applies `fn` to every stem, isolating per-image failures. Throws when every
/// image fails; returns the number that succeeded.
template <typename Fn>
std::size_t for_each_image(const std::vector<std::string>& stems, Fn&& fn) {
  if (stems.empty()) throw depthfuse::DataError("no input images found");
  std::size_t ok = 0;
  std::string first_error;
  for (std::size_t i = 0; i < stems.size(); ++i) {
    try {
      fn(stems[i], i);
      ++ok;
    } catch (const std::exception& e) {
      if (first_error.empty()) first_error = e.what();
      std::cerr << "warning: " << stems[i] << " failed: " << e.what() << "\n";
    }
  }
  if (ok == 0) {
    throw depthfuse::AllImagesFailedError("every image failed; first error: " + first_error);
  }
  return ok;
}

int cmd_synth(const depthfuse::PipelineConfig& cfg) {
  if (cfg.rgb_dir.empty() || cfg.gt_depth_dir.empty()) {
    throw depthfuse::ParamError("synth: config needs inputs.rgb_dir and inputs.gt_depth_dir");
  }
  const auto stems = depthfuse::detail::list_stems(cfg.rgb_dir, ".png");
  const auto schedule = depthfuse::make_focus_schedule(cfg.schedule.min_m, cfg.schedule.max_m,
                                                       cfg.schedule.count, cfg.schedule.spacing);
  const fs::path stacks_dir = fs::path(cfg.output_dir) / "stacks";
  const std::size_t ok = for_each_image(stems, [&](const std::string& stem, std::size_t) {
    const auto rgb = depthfuse::read_png8((fs::path(cfg.rgb_dir) / (stem + ".png")).string());
    const auto gt = depthfuse::detail::load_gt_depth(cfg, stem);
    const auto stack = depthfuse::synthesize_focal_stack(rgb, gt, cfg.camera, schedule);
    depthfuse::save_focal_stack_dir(stack, (stacks_dir / stem).string());
  });
  std::cout << "synth: wrote " << ok << " stacks of " << schedule.distances.size()
            << " frames to " << stacks_dir.string() << "\n";
  return 0;
}

int cmd_dff(const depthfuse::PipelineConfig& cfg) {
  const std::string stacks = stage_dir(cfg, cfg.stack_dir, "stacks");
  if (!fs::is_directory(stacks)) {
    throw depthfuse::DataError(stacks + ": not a directory (run synth or set inputs.stack_dir)");
  }
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(stacks)) {
    if (entry.is_directory()) stems.push_back(entry.path().filename().string());
  }
  std::sort(stems.begin(), stems.end());
  const fs::path depth_dir = fs::path(cfg.output_dir) / "dff";
  const fs::path unc_dir = fs::path(cfg.output_dir) / "uncertainty";
  fs::create_directories(depth_dir);
  fs::create_directories(unc_dir);
  const std::size_t ok = for_each_image(stems, [&](const std::string& stem, std::size_t) {
    const auto stack = depthfuse::load_focal_stack_dir((fs::path(stacks) / stem).string());
    const auto volume = depthfuse::build_focus_volume(stack, cfg.dff_window);
    auto result = depthfuse::dff_depth(volume, cfg.dff_interpolate);
    depthfuse::write_pfm(result.first, (depth_dir / (stem + ".pfm")).string());
    depthfuse::write_pfm_grid(result.second, nullptr, (unc_dir / (stem + ".pfm")).string());
  });
  std::cout << "dff: wrote " << ok << " depth/uncertainty pairs to " << depth_dir.string()
            << " and " << unc_dir.string() << "\n";
  return 0;
}

int cmd_fuse(const depthfuse::PipelineConfig& cfg) {
  if (cfg.relative_depth_dir.empty()) {
    throw depthfuse::ParamError("fuse: config needs inputs.relative_depth_dir");
  }
  const std::string dff_dir = stage_dir(cfg, cfg.dff_depth_dir, "dff");
  const auto stems = depthfuse::detail::list_stems(cfg.relative_depth_dir, ".pfm");
  const fs::path global_dir = fs::path(cfg.output_dir) / "global";
  fs::create_directories(global_dir);
  const std::size_t ok = for_each_image(stems, [&](const std::string& stem, std::size_t index) {
    const auto relative = depthfuse::read_pfm(
        (fs::path(cfg.relative_depth_dir) / (stem + ".pfm")).string(),
        depthfuse::DepthUnit::Dimensionless);
    const auto dff = depthfuse::read_pfm((fs::path(dff_dir) / (stem + ".pfm")).string(),
                                         depthfuse::DepthUnit::Meters);
    const auto mask = depthfuse::full_mask(relative.width(), relative.height());
    depthfuse::AffineScale fit;
    if (cfg.fit_method == depthfuse::FitMethod::Ransac) {
      depthfuse::RansacConfig ransac = cfg.ransac;
      ransac.seed = depthfuse::detail::image_seed(cfg.seed, index);
      fit = depthfuse::fit_global_ransac(relative, dff, mask, ransac);
    } else {
      fit = depthfuse::fit_global_ls(relative, dff, mask);
    }
    const auto global_map = depthfuse::apply_affine(relative, fit);
    depthfuse::write_pfm(global_map, (global_dir / (stem + ".pfm")).string());
    json meta{{"scale", fit.scale}, {"shift", fit.shift}};
    depthfuse::write_text_file((global_dir / (stem + "_affine.json")).string(),
                               meta.dump(2) + "\n");
  });
  std::cout << "fuse: wrote " << ok << " globally scaled maps to " << global_dir.string() << "\n";
  return 0;
}

int cmd_refine(const depthfuse::PipelineConfig& cfg) {
  const std::string global_in = (fs::path(cfg.output_dir) / "global").string();
  const std::string dff_dir = stage_dir(cfg, cfg.dff_depth_dir, "dff");
  const std::string unc_dir = stage_dir(cfg, cfg.dff_uncertainty_dir, "uncertainty");
  const auto stems = depthfuse::detail::list_stems(global_in, ".pfm");
  const fs::path refined_dir = fs::path(cfg.output_dir) / "refined";
  fs::create_directories(refined_dir);
  const std::size_t ok = for_each_image(stems, [&](const std::string& stem, std::size_t) {
    const auto global_map = depthfuse::read_pfm((fs::path(global_in) / (stem + ".pfm")).string(),
                                                depthfuse::DepthUnit::Meters);
    const auto dff = depthfuse::read_pfm((fs::path(dff_dir) / (stem + ".pfm")).string(),
                                         depthfuse::DepthUnit::Meters);
    depthfuse::UncertaintyMap uncertainty(global_map.width(), global_map.height(), 0.0);
    const fs::path unc_path = fs::path(unc_dir) / (stem + ".pfm");
    if (fs::exists(unc_path)) {
      uncertainty =
          depthfuse::detail::clamp_uncertainty(depthfuse::read_pfm_grid(unc_path.string()));
    }
    const auto mask = depthfuse::full_mask(global_map.width(), global_map.height());
    const auto raw = depthfuse::dense_scale_map(global_map, dff, mask);
    const auto refined = depthfuse::refine_scale_map(raw, uncertainty, global_map, cfg.refine);
    const auto final_map = depthfuse::apply_scale_map(global_map, refined);
    depthfuse::write_pfm(final_map, (refined_dir / (stem + ".pfm")).string());
    depthfuse::write_pfm_grid(refined.values, &refined.valid,
                              (refined_dir / (stem + "_scale.pfm")).string());
  });
  std::cout << "refine: wrote " << ok << " refined maps to " << refined_dir.string() << "\n";
  return 0;
}

int cmd_eval(const depthfuse::PipelineConfig& cfg, const std::string& pred_dir) {
  if (cfg.gt_depth_dir.empty()) throw depthfuse::ParamError("eval: config needs inputs.gt_depth_dir");
  const auto stems = depthfuse::detail::list_stems(pred_dir, ".pfm");
  std::vector<std::string> filtered;
  for (const std::string& stem : stems) {
    if (stem.size() >= 6 && stem.rfind("_scale") == stem.size() - 6) continue;
    filtered.push_back(stem);
  }
  json images = json::array();
  depthfuse::AggregateMetrics agg;
  const std::size_t ok = for_each_image(filtered, [&](const std::string& stem, std::size_t) {
    const auto pred = depthfuse::read_pfm((fs::path(pred_dir) / (stem + ".pfm")).string(),
                                          depthfuse::DepthUnit::Meters);
    const auto gt = depthfuse::detail::load_gt_depth(cfg, stem);
    const auto mask = depthfuse::valid_mask(gt, cfg.eval_min_depth, cfg.eval_max_depth);
    const auto metrics = depthfuse::compute_metrics(pred, gt, mask);
    images.push_back(json{{"name", stem}, {"metrics", depthfuse::metrics_to_json(metrics)}});
    depthfuse::detail::accumulate(agg, metrics);
  });
  depthfuse::detail::finalize(agg);
  json out{{"schema_version", depthfuse::kSchemaVersion},
           {"kind", "eval_report"},
           {"pred_dir", pred_dir},
           {"images", images},
           {"aggregate", depthfuse::aggregate_to_json(agg)}};
  fs::create_directories(cfg.output_dir);
  const std::string path = (fs::path(cfg.output_dir) / "eval.json").string();
  depthfuse::write_text_file(path, out.dump(2) + "\n");
  std::cout << "eval: " << ok << " images, aggregate rmse " << agg.rmse << ", absrel "
            << agg.absrel << " -> " << path << "\n";
  return 0;
}

int cmd_pipeline(const depthfuse::PipelineConfig& cfg) {
  const auto report = depthfuse::run_pipeline(cfg);
  depthfuse::write_run_report(report, cfg.output_dir);
  std::cout << "pipeline: " << report.agg_refined.images << "/" << report.images.size()
            << " images succeeded\n";
  auto line = [](const char* stage, const depthfuse::AggregateMetrics& a) {
    std::cout << "  " << std::left << std::setw(8) << stage << " rmse " << std::setw(12) << a.rmse
              << " absrel " << std::setw(12) << a.absrel << " d1 " << a.delta1 << "\n";
  };
  line("dff", report.agg_dff);
  line("global", report.agg_global);
  line("refined", report.agg_refined);
  std::cout << "report: " << (fs::path(cfg.output_dir) / "report.json").string() << "\n";
  return 0;
}

int cmd_ablate(const depthfuse::PipelineConfig& cfg, const std::string& axis_name) {
  const auto axis = depthfuse::ablation_axis_from_string(axis_name);
  const auto report = depthfuse::ablate(cfg, axis);
  fs::create_directories(cfg.output_dir);
  const std::string path =
      (fs::path(cfg.output_dir) / ("ablate_" + report.axis + ".json")).string();
  depthfuse::write_text_file(path, depthfuse::ablation_to_json(report).dump(2) + "\n");
  for (const auto& row : report.rows) {
    std::cout << std::left << std::setw(18) << row.label << " rmse(refined) "
              << row.report.agg_refined.rmse << " rmse(global) " << row.report.agg_global.rmse
              << "\n";
  }
  std::cout << "ablation report: " << path << "\n";
  return 0;
}

std::vector<std::pair<int, int>> parse_sizes(const std::string& text) {
  std::vector<std::pair<int, int>> sizes;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto sep = item.find('x');
    if (sep == std::string::npos) {
      throw depthfuse::ParamError("bench: size '" + item + "' is not HxW");
    }
    try {
      sizes.emplace_back(std::stoi(item.substr(0, sep)), std::stoi(item.substr(sep + 1)));
    } catch (const std::exception&) {
      throw depthfuse::ParamError("bench: size '" + item + "' is not HxW");
    }
  }
  return sizes;
}

int cmd_bench(const depthfuse::PipelineConfig& cfg, const std::string& sizes_text, int repeats) {
  const auto sizes = parse_sizes(sizes_text);
  const auto report =
      depthfuse::bench_global_scaling(sizes, depthfuse::default_bench_methods(), repeats, cfg.seed);
  fs::create_directories(cfg.output_dir);
  const std::string path = (fs::path(cfg.output_dir) / "bench.json").string();
  depthfuse::write_text_file(path, depthfuse::bench_to_json(report).dump(2) + "\n");
  std::cout << std::left << std::setw(16) << "method" << std::setw(12) << "size" << std::setw(14)
            << "median_ms" << std::setw(14) << "scale_err" << "map_rmse\n";
  for (const auto& row : report.rows) {
    std::cout << std::left << std::setw(16) << row.method << std::setw(12)
              << (std::to_string(row.height) + "x" + std::to_string(row.width)) << std::setw(14)
              << row.median_ms << std::setw(14) << row.scale_error << row.map_rmse << "\n";
  }
  std::cout << "bench report: " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"depthfuse: metric depth from focal stacks fused with relative depth priors"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions opts;
  app.add_option("--config", opts.config_path, "Pipeline configuration JSON file");
  app.add_option("--seed", opts.seed, "Override the configured seed");
  app.add_option("--out", opts.out, "Override the configured output directory");
  app.add_option("--threads", opts.threads, "Override the configured worker count");
  app.add_flag("--close-range", opts.close_range, "Evaluate with a 2 m depth cap");

  std::string eval_pred_dir;
  std::string ablate_axis;
  std::string bench_sizes = "383x552";
  int bench_repeats = 5;

  auto* synth = app.add_subcommand("synth", "Synthesize focal stacks from RGB + ground truth");
  auto* dff = app.add_subcommand("dff", "Depth from focus over stacks");
  auto* fuse = app.add_subcommand("fuse", "Fit and apply the global scale/shift");
  auto* refine = app.add_subcommand("refine", "Refine and apply the dense scale map");
  auto* eval = app.add_subcommand("eval", "Evaluate predicted maps against ground truth");
  eval->add_option("--pred", eval_pred_dir, "Directory of predicted depth PFMs")->required();
  auto* pipeline = app.add_subcommand("pipeline", "Run the full pipeline end to end");
  auto* ablate = app.add_subcommand("ablate", "Run the pipeline across one ablation axis");
  ablate->add_option("--axis", ablate_axis, "stack_size | uncertainty | fit_method | refinement")
      ->required();
  auto* bench = app.add_subcommand("bench", "Time the global-scaling methods");
  bench->add_option("--sizes", bench_sizes, "Comma-separated HxW sizes (default 383x552)");
  bench->add_option("--repeats", bench_repeats, "Timed repeats per method (>= 3)");

  try {
    app.parse(argc, argv);
    const depthfuse::PipelineConfig cfg = resolve_config(opts);
    if (*synth) return cmd_synth(cfg);
    if (*dff) return cmd_dff(cfg);
    if (*fuse) return cmd_fuse(cfg);
    if (*refine) return cmd_refine(cfg);
    if (*eval) return cmd_eval(cfg, eval_pred_dir);
    if (*pipeline) return cmd_pipeline(cfg);
    if (*ablate) return cmd_ablate(cfg, ablate_axis);
    if (*bench) return cmd_bench(cfg, bench_sizes, bench_repeats);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const depthfuse::AllImagesFailedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const depthfuse::ParamError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const depthfuse::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
