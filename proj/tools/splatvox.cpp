// Command-line front end: one subcommand per pipeline stage or utility.
//
// Exit codes: 0 success, 1 domain error (bad data, failed stage), 2 usage
// error (unknown flag or subcommand, malformed argument).

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "splatvox/config.hpp"
#include "splatvox/metrics.hpp"
#include "splatvox/sampler.hpp"
#include "splatvox/synthetic.hpp"

using namespace splatvox;

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
  int threads = 0;
};

void add_common(CLI::App* app, Common& c, bool with_config) {
  app->add_option("--seed", c.seed, "Seed for every random draw")->default_val(0);
  if (with_config) app->add_option("--config", c.config, "JSON configuration file");
  app->add_option("--out", c.out, "Output path (JSON report goes to stdout when omitted)");
  app->add_option("--threads", c.threads, "Worker thread cap (0 = hardware concurrency)")
      ->default_val(0)
      ->check(CLI::NonNegativeNumber);
}

// JSON has no infinity; PSNR of identical images is reported as "inf".
json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

void emit_json(const json& j, const std::string& out) {
  const std::string text = j.dump(2) + "\n";
  if (out.empty())
    std::cout << text;
  else
    write_text_file(out, text);
}

std::vector<Image> bundle_images(const CaptureBundle& b) {
  std::vector<Image> out;
  for (const auto& v : b.views) out.push_back(v.image);
  return out;
}

GaussianSet lift_bundle(const CaptureBundle& b) {
  std::vector<DepthMap> depths;
  std::vector<AttributeMaps> attrs;
  for (const auto& v : b.views) {
    depths.push_back(v.depth);
    attrs.push_back(v.attrs);
  }
  return lift_views(b.cameras, depths, attrs);
}

FitConfig fit_config_from(const std::string& path) {
  if (path.empty()) return FitConfig{};
  const json j = read_json_file(path);
  try {
    return parse_fit_config(j, "fit");
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_render(const fs::path& dir, const std::string& stem, const RenderBuffers& r) {
  write_png(dir / (stem + ".png"), r.image());
  Tensor d;
  d.shape = {static_cast<std::size_t>(r.height), static_cast<std::size_t>(r.width)};
  d.data.assign(r.depth.begin(), r.depth.end());
  write_tensor(dir / (stem + "_depth.f32"), d);
  d.data.assign(r.alpha.begin(), r.alpha.end());
  write_tensor(dir / (stem + "_alpha.f32"), d);
}

std::string view_stem(std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%03zu", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Subcommands.

struct SynthArgs {
  SyntheticSpec spec;
  std::string layout = "shell";
};

int run_synth(const Common& c, SynthArgs a) {
  if (c.out.empty()) throw ConfigError("synth: --out is required");
  a.spec.seed = c.seed;
  a.spec.layout = a.layout == "volume" ? SceneLayout::Volume : SceneLayout::Shell;
  const SyntheticScene s = generate_synthetic(a.spec);
  save_bundle(s.bundle, c.out);
  save_gaussians_ply(s.gaussians, fs::path(c.out) / "gt.ply");
  json report = {{"bundle", c.out},
                 {"views", s.bundle.views.size()},
                 {"gaussians", s.gaussians.size()},
                 {"standard_epsilon", standard_voxel_size(a.spec)}};
  std::cout << report.dump(2) << "\n";
  return 0;
}

int run_lift(const Common& c, const std::string& bundle) {
  if (c.out.empty()) throw ConfigError("lift: --out is required");
  const GaussianSet g = lift_bundle(load_bundle(bundle));
  save_gaussians_ply(g, c.out);
  std::cout << json({{"gaussians", g.size()}}).dump(2) << "\n";
  return 0;
}

int run_voxelize(const Common& c, const std::string& scene, double epsilon) {
  if (c.out.empty()) throw ConfigError("voxelize: --out is required");
  const GaussianSet g = load_gaussians_ply(scene);
  const GaussianSet v = voxelize(g, epsilon);
  save_gaussians_ply(v, c.out);
  json report = {{"input", g.size()},
                 {"output", v.size()},
                 {"removed_fraction", 1.0 - static_cast<double>(v.size()) / static_cast<double>(g.size())}};
  std::cout << report.dump(2) << "\n";
  return 0;
}

int run_render(const Common& c, const std::string& scene, const std::string& cameras, std::vector<double> bg) {
  if (c.out.empty()) throw ConfigError("render: --out is required");
  const GaussianSet g = load_gaussians_ply(scene);
  const std::vector<Camera> cams = read_trajectory(cameras);
  RenderOptions opt;
  opt.background = Eigen::Vector3d(bg[0], bg[1], bg[2]);
  fs::create_directories(c.out);
  for (std::size_t v = 0; v < cams.size(); ++v) write_render(c.out, view_stem(v), render(g, cams[v], opt));
  std::cout << json({{"views", cams.size()}}).dump(2) << "\n";
  return 0;
}

int run_fit(const Common& c, const std::string& scene, const std::string& bundle, int steps) {
  if (c.out.empty()) throw ConfigError("fit: --out is required");
  FitConfig cfg = fit_config_from(c.config);
  if (steps >= 0) cfg.steps = steps;
  const GaussianSet g = load_gaussians_ply(scene);
  const CaptureBundle b = load_bundle(bundle);
  const fs::path out(c.out);
  fs::create_directories(out);
  const FitCheckpoint checkpoint = [&](int step, const GaussianSet& gs, std::span<const Camera> cams) {
    const fs::path dir = out / "checkpoints" / ("step_" + std::to_string(step));
    fs::create_directories(dir);
    save_gaussians_ply(gs, dir / "scene.ply");
    write_trajectory((dir / "cameras.txt").string(), cams);
  };
  const FitResult r = post_optimize(g, b.cameras, bundle_images(b), cfg, checkpoint);
  save_gaussians_ply(r.gaussians, out / "scene.ply");
  write_trajectory((out / "cameras.txt").string(), r.cameras);
  std::ofstream trace(out / "trace.csv");
  write_trace_csv(trace, r.trace);
  json report = {{"gaussians", r.gaussians.size()},
                 {"initial_loss", r.trace.front().total},
                 {"final_loss", r.trace.back().total}};
  std::cout << report.dump(2) << "\n";
  return 0;
}

// Compares same-named PNG images (and, where both sides have them, .f32
// depth maps and cameras.txt) between two directories.
int run_eval(const Common& c, const std::string& pred, const std::string& gt) {
  for (const auto& d : {pred, gt})
    if (!fs::is_directory(d)) throw IoError("eval: directory not found: " + d);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(gt))
    if (e.path().extension() == ".png") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  json report = json::object();
  json per_image = json::array();
  double psnr_sum = 0.0, ssim_sum = 0.0;
  std::size_t n = 0;
  for (const auto& name : names) {
    const fs::path p = fs::path(pred) / name;
    if (!fs::exists(p)) continue;
    const Image a = read_png(p), b = read_png(fs::path(gt) / name);
    const double ps = psnr(a, b), ss = ssim(a, b);
    per_image.push_back({{"name", name}, {"psnr", number_or_inf(ps)}, {"ssim", ss}});
    psnr_sum += ps;
    ssim_sum += ss;
    ++n;
  }
  if (n == 0) throw UndefinedMetricError("eval: no image names shared by " + pred + " and " + gt);
  report["images"] = n;
  report["psnr"] = number_or_inf(psnr_sum / static_cast<double>(n));
  report["ssim"] = ssim_sum / static_cast<double>(n);
  report["per_image"] = per_image;

  // Depth maps: every *.f32 in gt with a counterpart in pred; gt > 0 is valid.
  std::vector<double> dp, dg;
  for (const auto& e : fs::directory_iterator(gt)) {
    if (e.path().extension() != ".f32") continue;
    const fs::path p = fs::path(pred) / e.path().filename();
    if (!fs::exists(p)) continue;
    const Tensor tg = read_tensor(e.path()), tp = read_tensor(p);
    if (tg.shape != tp.shape) throw DimensionError("eval: depth shapes differ for " + e.path().filename().string());
    for (std::size_t i = 0; i < tg.data.size(); ++i)
      if (tg.data[i] > 0.0f && tp.data[i] > 0.0f) {
        dg.push_back(tg.data[i]);
        dp.push_back(tp.data[i]);
      }
  }
  if (!dg.empty()) {
    const std::vector<std::uint8_t> mask(dg.size(), 1);
    report["depth_absrel"] = depth_absrel(dp, dg, mask);
    report["depth_delta1"] = depth_delta1(dp, dg, mask);
  }
  const fs::path pc = fs::path(pred) / "cameras.txt", gc = fs::path(gt) / "cameras.txt";
  if (fs::exists(pc) && fs::exists(gc)) {
    const auto cp = read_trajectory(pc.string()), cg = read_trajectory(gc.string());
    const auto rep = pose_auc(align_eval_robust(cp, cg), cg);
    json auc = json::object();
    for (const auto& [tau, v] : rep.auc_at) auc["auc@" + std::to_string(static_cast<int>(tau))] = v;
    report["pose"] = auc;
  }
  emit_json(report, c.out);
  return 0;
}

int run_align(const Common& c, const std::string& pred, const std::string& gt, const std::string& mode) {
  const auto cp = read_trajectory(pred), cg = read_trajectory(gt);
  if (mode == "test-time") {
    // pred = joint prediction, gt = context-only prediction (leading views).
    const double s = align_test_time_scale(cg, cp);
    emit_json({{"scale", s}}, c.out);
    return 0;
  }
  const auto aligned = align_eval_robust(cp, cg);
  if (c.out.empty()) {
    for (const auto& cam : aligned) std::cout << format_camera_line(cam) << "\n";
  } else {
    write_trajectory(c.out, aligned);
  }
  return 0;
}

struct SampleArgs {
  std::string strategy = "object_random";
  std::string split;
  int total = -1;
  std::string cameras;
  int count = 1;
  int min_gap = 0, max_gap = 0;
  double threshold = std::numeric_limits<double>::infinity();
};

int run_sample(const Common& c, const SampleArgs& a) {
  std::vector<Camera> cams;
  if (!a.cameras.empty()) cams = read_trajectory(a.cameras);
  const int total = a.total >= 0 ? a.total : static_cast<int>(cams.size());
  std::ostringstream os;
  if (!a.split.empty()) {
    const auto s = split_eval(total, a.split == "dense" ? SplitMode::Dense : SplitMode::Sparse);
    for (int i : s.context) os << "context " << i << "\n";
    for (int i : s.target) os << "target " << i << "\n";
  } else {
    SamplingSpec spec;
    spec.strategy = a.strategy == "sequential_gap"  ? SamplingStrategy::SequentialGap
                    : a.strategy == "pose_distance" ? SamplingStrategy::PoseDistance
                                                    : SamplingStrategy::ObjectRandom;
    spec.count = a.count;
    spec.min_gap = a.min_gap;
    spec.max_gap = a.max_gap;
    spec.distance_threshold = a.threshold;
    spec.seed = c.seed;
    for (int i : sample_views(spec, total, cams)) os << i << "\n";
  }
  if (c.out.empty())
    std::cout << os.str();
  else
    write_text_file(c.out, os.str());
  return 0;
}

int run_count_report(const Common& c, const std::string& bundle, std::vector<int> views, double epsilon) {
  const CaptureBundle b = load_bundle(bundle);
  const auto rows = count_report(b, views, epsilon);
  std::ostringstream os;
  write_count_csv(os, rows);
  if (c.out.empty())
    std::cout << os.str();
  else
    write_text_file(c.out, os.str());
  std::cerr << (is_sublinear(rows) ? "sublinear: yes\n" : "sublinear: no\n");
  return 0;
}

int run_reconstruct(const Common& c, const std::string& bundle_flag) {
  RunConfig rc;
  if (!c.config.empty()) rc = load_run_config(c.config);
  if (!bundle_flag.empty()) rc.bundle = bundle_flag;
  if (!c.out.empty()) rc.out = c.out;
  if (rc.bundle.empty()) throw ConfigError("reconstruct: no bundle (set \"bundle\" in the config or pass --bundle)");
  const CaptureBundle b = load_bundle(rc.bundle);
  const ReconstructResult r = reconstruct(b, rc.pipeline);

  json per_view = json::array();
  double psnr_sum = 0.0;
  for (std::size_t v = 0; v < b.views.size(); ++v) {
    const double p = psnr(r.renders[v].image(), b.views[v].image);
    psnr_sum += p;
    per_view.push_back({{"view", v}, {"psnr", number_or_inf(p)}});
  }
  json metrics = {{"lifted", r.lifted_count},
                  {"gaussians", r.gaussians.size()},
                  {"removed_fraction", 1.0 - static_cast<double>(r.gaussians.size()) / static_cast<double>(r.lifted_count)},
                  {"psnr", number_or_inf(psnr_sum / static_cast<double>(b.views.size()))},
                  {"per_view", per_view},
                  {"losses",
                   {{"rgb", r.losses.rgb},
                    {"geometry", r.losses.geometry},
                    {"pose", r.losses.pose},
                    {"depth_distill", r.losses.depth_distill},
                    {"total", r.losses.total},
                    {"mask_coverage", r.losses.mask_coverage},
                    {"empty_mask", r.losses.empty_mask}}}};
  if (r.fit) metrics["fit"] = {{"steps", r.fit->trace.size() - 1}, {"final_loss", r.fit->trace.back().total}};

  if (rc.out.empty()) {
    std::cout << metrics.dump(2) << "\n";
    return 0;
  }
  const fs::path out(rc.out);
  fs::create_directories(out / "renders");
  save_gaussians_ply(r.gaussians, out / "scene.ply");
  write_trajectory((out / "cameras.txt").string(), r.cameras);
  for (std::size_t v = 0; v < r.renders.size(); ++v) write_render(out / "renders", view_stem(v), r.renders[v]);
  if (r.fit) {
    std::ofstream trace(out / "trace.csv");
    write_trace_csv(trace, r.fit->trace);
  }
  write_text_file(out / "config.resolved.json", to_json(rc).dump(2) + "\n");
  write_text_file(out / "metrics.json", metrics.dump(2) + "\n");
  std::cout << metrics.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"splatvox: voxel-merged Gaussian splat reconstruction from per-pixel predictions", "splatvox"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "splatvox 0.1.0");
  Common common;
  std::function<int()> action;

  // synth
  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic capture bundle and its ground-truth scene");
  add_common(s, common, false);
  s->add_option("--views", synth.spec.n_views, "Number of ring views")->default_val(synth.spec.n_views);
  s->add_option("--gaussians", synth.spec.n_gaussians, "Ground-truth Gaussian count")->default_val(synth.spec.n_gaussians);
  s->add_option("--width", synth.spec.width, "Image width")->default_val(synth.spec.width);
  s->add_option("--height", synth.spec.height, "Image height")->default_val(synth.spec.height);
  s->add_option("--sh-degree", synth.spec.sh_degree, "SH degree (0-3)")->default_val(synth.spec.sh_degree);
  s->add_option("--layout", synth.layout, "Scene layout")->check(CLI::IsMember({"shell", "volume"}))->default_val("shell");
  s->add_option("--param-noise", synth.spec.param_noise, "Noise on cameras, depth and attributes")->default_val(0.0);
  s->add_option("--pseudo-pose-noise", synth.spec.pseudo_pose_noise, "Noise on pseudo poses")->default_val(0.0);
  s->add_option("--pseudo-depth-noise", synth.spec.pseudo_depth_noise, "Lognormal sigma on pseudo depth")
      ->default_val(0.0);
  s->callback([&] { action = [&] { return run_synth(common, synth); }; });

  // lift
  std::string lift_bundle_dir;
  auto* l = app.add_subcommand("lift", "Back-project every valid pixel of a bundle into a Gaussian scene (PLY)");
  add_common(l, common, false);
  l->add_option("--bundle", lift_bundle_dir, "Bundle directory")->required();
  l->callback([&] { action = [&] { return run_lift(common, lift_bundle_dir); }; });

  // voxelize
  std::string vox_in;
  double vox_eps = 0.0;
  auto* v = app.add_subcommand("voxelize", "Merge Gaussians sharing a voxel (confidence-weighted)");
  add_common(v, common, false);
  v->add_option("--in", vox_in, "Input PLY")->required();
  v->add_option("--epsilon", vox_eps, "Voxel size")->required();
  v->callback([&] { action = [&] { return run_voxelize(common, vox_in, vox_eps); }; });

  // render
  std::string render_scene, render_cams;
  std::vector<double> render_bg{0.0, 0.0, 0.0};
  auto* r = app.add_subcommand("render", "Render a PLY scene from every camera of a trajectory file");
  add_common(r, common, false);
  r->add_option("--scene", render_scene, "Scene PLY")->required();
  r->add_option("--cameras", render_cams, "Camera trajectory file")->required();
  r->add_option("--background", render_bg, "Background colour r g b")->expected(3)->default_str("0 0 0");
  r->callback([&] { action = [&] { return run_render(common, render_scene, render_cams, render_bg); }; });

  // fit
  std::string fit_scene, fit_bundle;
  int fit_steps = -1;
  auto* f = app.add_subcommand("fit", "Prune, then jointly refine Gaussians and cameras against bundle images");
  add_common(f, common, true);
  f->add_option("--scene", fit_scene, "Initial scene PLY")->required();
  f->add_option("--bundle", fit_bundle, "Bundle providing cameras and target images")->required();
  f->add_option("--steps", fit_steps, "Override the configured step count");
  f->callback([&] { action = [&] { return run_fit(common, fit_scene, fit_bundle, fit_steps); }; });

  // eval
  std::string eval_pred, eval_gt;
  auto* e = app.add_subcommand("eval", "Compare rendered images, depths and cameras against references");
  add_common(e, common, false);
  e->add_option("--pred", eval_pred, "Directory of predictions")->required();
  e->add_option("--gt", eval_gt, "Directory of references")->required();
  e->callback([&] { action = [&] { return run_eval(common, eval_pred, eval_gt); }; });

  // align
  std::string align_pred, align_gt, align_mode = "eval";
  auto* a = app.add_subcommand("align", "Align a predicted trajectory to a reference one");
  add_common(a, common, false);
  a->add_option("--pred", align_pred, "Predicted trajectory (joint prediction in test-time mode)")->required();
  a->add_option("--gt", align_gt, "Reference trajectory (context prediction in test-time mode)")->required();
  a->add_option("--mode", align_mode, "eval: similarity alignment; test-time: scale factor")
      ->check(CLI::IsMember({"eval", "test-time"}))
      ->default_val("eval");
  a->callback([&] { action = [&] { return run_align(common, align_pred, align_gt, align_mode); }; });

  // sample-views
  SampleArgs sample;
  auto* sv = app.add_subcommand("sample-views", "Select training views, printing one index per line");
  add_common(sv, common, false);
  sv->add_option("--strategy", sample.strategy, "Sampling strategy")
      ->check(CLI::IsMember({"object_random", "sequential_gap", "pose_distance"}))
      ->default_val("object_random");
  sv->add_option("--split", sample.split, "Print an evaluation split instead")->check(CLI::IsMember({"dense", "sparse"}));
  sv->add_option("--total", sample.total, "Number of available views");
  sv->add_option("--cameras", sample.cameras, "Trajectory file (required for pose_distance)");
  sv->add_option("--count", sample.count, "Views to select")->default_val(1);
  sv->add_option("--min-gap", sample.min_gap, "Minimum index gap (sequential_gap)")->default_val(0);
  sv->add_option("--max-gap", sample.max_gap, "Maximum index gap (sequential_gap)")->default_val(0);
  sv->add_option("--threshold", sample.threshold, "Camera-centre distance threshold (pose_distance)");
  sv->callback([&] {
    if (sample.total < 0 && sample.cameras.empty()) throw CLI::ValidationError("sample-views", "--total or --cameras is required");
    action = [&] { return run_sample(common, sample); };
  });

  // count-report
  std::string count_bundle;
  std::vector<int> count_views;
  double count_eps = 0.0;
  auto* cr = app.add_subcommand("count-report", "Gaussian count and peak memory versus number of views (CSV)");
  add_common(cr, common, false);
  cr->add_option("--bundle", count_bundle, "Bundle directory")->required();
  cr->add_option("--views", count_views, "Increasing view counts, e.g. 1,2,4,8")->delimiter(',')->required();
  cr->add_option("--epsilon", count_eps, "Voxel size")->required();
  cr->callback([&] { action = [&] { return run_count_report(common, count_bundle, count_views, count_eps); }; });

  // reconstruct
  std::string rec_bundle;
  auto* rc = app.add_subcommand("reconstruct", "Lift, voxelize, optionally fit, render and score a bundle");
  add_common(rc, common, true);
  rc->add_option("--bundle", rec_bundle, "Bundle directory (overrides the config)");
  rc->callback([&] { action = [&] { return run_reconstruct(common, rec_bundle); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  set_max_threads(common.threads);
  try {
    return action();
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
}
