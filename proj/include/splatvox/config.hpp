#pragma once

#include <initializer_list>
#include <optional>
#include <set>
#include <type_traits>
#include <string>

#include "io.hpp"
#include "pipeline.hpp"

namespace splatvox {

/// Everything one `reconstruct` run needs, as stored in a single JSON file.
/// Parsing is strict: unknown keys and wrongly typed values are errors, so a
/// misspelt loss weight cannot silently fall back to its default.
struct RunConfig {
  std::string bundle;  // input bundle directory
  std::string out;     // output directory
  PipelineConfig pipeline;
};

namespace config_detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

inline std::string join(const std::string& where, const char* key) { return where.empty() ? key : where + "." + key; }

template <class T>
void read(const json& j, const std::string& where, const char* key, T& dst) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  const std::string path = join(where, key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
    if constexpr (std::is_unsigned_v<T>)
      if (v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(path + ": expected a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(path + ": expected a number");
  } else {
    if (!v.is_string()) throw ConfigError(path + ": expected a string");
  }
  dst = v.get<T>();
}

inline void read_vec3(const json& j, const std::string& where, const char* key, Eigen::Vector3d& dst) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number())
    throw ConfigError(join(where, key) + ": expected an array of 3 numbers");
  dst = Eigen::Vector3d(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
}

inline RenderOptions parse_render(const json& j, const std::string& where) {
  // The background is a pipeline-level setting, not a per-render one.
  check_keys(j, where,
             {"tile_size", "near_plane", "cov2d_dilation", "alpha_cutoff", "extent_sigmas",
              "frustum_guard", "min_transmittance"});
  RenderOptions r;
  read(j, where, "tile_size", r.tile_size);
  read(j, where, "near_plane", r.near_plane);
  read(j, where, "cov2d_dilation", r.cov2d_dilation);
  read(j, where, "alpha_cutoff", r.alpha_cutoff);
  read(j, where, "extent_sigmas", r.extent_sigmas);
  read(j, where, "frustum_guard", r.frustum_guard);
  read(j, where, "min_transmittance", r.min_transmittance);
  return r;
}

inline json render_to_json(const RenderOptions& r) {
  return {{"tile_size", r.tile_size},
          {"near_plane", r.near_plane},
          {"cov2d_dilation", r.cov2d_dilation},
          {"alpha_cutoff", r.alpha_cutoff},
          {"extent_sigmas", r.extent_sigmas},
          {"frustum_guard", r.frustum_guard},
          {"min_transmittance", r.min_transmittance}};
}

}  // namespace config_detail

inline LossWeights parse_loss_weights(const json& j, const std::string& where = "weights") {
  using namespace config_detail;
  check_keys(j, where, {"lambda1", "lambda2", "lambda3", "lambda4", "top_quantile", "huber_delta"});
  LossWeights w;
  read(j, where, "lambda1", w.lambda1);
  read(j, where, "lambda2", w.lambda2);
  read(j, where, "lambda3", w.lambda3);
  read(j, where, "lambda4", w.lambda4);
  read(j, where, "top_quantile", w.top_quantile);
  read(j, where, "huber_delta", w.huber_delta);
  w.validate();
  return w;
}

inline json to_json(const LossWeights& w) {
  return {{"lambda1", w.lambda1}, {"lambda2", w.lambda2},           {"lambda3", w.lambda3},
          {"lambda4", w.lambda4}, {"top_quantile", w.top_quantile}, {"huber_delta", w.huber_delta}};
}

inline FitConfig parse_fit_config(const json& j, const std::string& where = "fit") {
  using namespace config_detail;
  check_keys(j, where,
             {"steps", "lr_position", "lr_scale", "lr_rotation", "lr_opacity", "lr_color", "lr_camera",
              "prune_opacity", "ssim_weight", "beta1", "beta2", "adam_eps", "checkpoint_every", "render"});
  FitConfig f;
  read(j, where, "steps", f.steps);
  read(j, where, "lr_position", f.lr_position);
  read(j, where, "lr_scale", f.lr_scale);
  read(j, where, "lr_rotation", f.lr_rotation);
  read(j, where, "lr_opacity", f.lr_opacity);
  read(j, where, "lr_color", f.lr_color);
  read(j, where, "lr_camera", f.lr_camera);
  read(j, where, "prune_opacity", f.prune_opacity);
  read(j, where, "ssim_weight", f.ssim_weight);
  read(j, where, "beta1", f.beta1);
  read(j, where, "beta2", f.beta2);
  read(j, where, "adam_eps", f.adam_eps);
  read(j, where, "checkpoint_every", f.checkpoint_every);
  if (j.contains("render")) f.render = parse_render(j.at("render"), where + ".render");
  f.validate();
  return f;
}

inline json to_json(const FitConfig& f) {
  return {{"steps", f.steps},
          {"lr_position", f.lr_position},
          {"lr_scale", f.lr_scale},
          {"lr_rotation", f.lr_rotation},
          {"lr_opacity", f.lr_opacity},
          {"lr_color", f.lr_color},
          {"lr_camera", f.lr_camera},
          {"prune_opacity", f.prune_opacity},
          {"ssim_weight", f.ssim_weight},
          {"beta1", f.beta1},
          {"beta2", f.beta2},
          {"adam_eps", f.adam_eps},
          {"checkpoint_every", f.checkpoint_every},
          {"render", config_detail::render_to_json(f.render)}};
}

inline RunConfig parse_run_config(const json& j) {
  using namespace config_detail;
  check_keys(j, "config", {"bundle", "out", "epsilon", "weights", "fit", "sh_degree", "background", "seed", "render"});
  RunConfig c;
  read(j, "", "bundle", c.bundle);
  read(j, "", "out", c.out);
  read(j, "", "epsilon", c.pipeline.epsilon);
  if (j.contains("weights")) c.pipeline.weights = parse_loss_weights(j.at("weights"));
  if (j.contains("fit") && !j.at("fit").is_null()) c.pipeline.fit = parse_fit_config(j.at("fit"));
  read(j, "", "sh_degree", c.pipeline.sh_degree);
  read_vec3(j, "", "background", c.pipeline.background);
  read(j, "", "seed", c.pipeline.seed);
  if (j.contains("render")) c.pipeline.render = parse_render(j.at("render"), "render");
  c.pipeline.validate();
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  const json j = read_json_file(path);
  try {
    return parse_run_config(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Fully resolved configuration (every default spelled out).
inline json to_json(const RunConfig& c) {
  const auto& p = c.pipeline;
  json j = {{"bundle", c.bundle},
            {"out", c.out},
            {"epsilon", p.epsilon},
            {"weights", to_json(p.weights)},
            {"fit", p.fit ? to_json(*p.fit) : json(nullptr)},
            {"sh_degree", p.sh_degree},
            {"background", {p.background[0], p.background[1], p.background[2]}},
            {"seed", p.seed},
            {"render", config_detail::render_to_json(p.render)}};
  return j;
}

}  // namespace splatvox
