#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "camera.hpp"
#include "common.hpp"
#include "gaussian.hpp"
#include "maps.hpp"

namespace splatvox {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

// ---------------------------------------------------------------------------
// Raw float32 tensors with a JSON sidecar header at `<path>.json`.

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
};

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline json read_json_file(const fs::path& path) {
  if (!fs::exists(path)) throw ParseError(path.string() + ": file not found");
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_tensor(const fs::path& path, const Tensor& t) {
  if (t.data.size() != t.element_count()) throw DimensionError("write_tensor: data does not match shape");
  json header = {{"dtype", "float32"}, {"shape", t.shape}, {"layout", "row-major"}};
  write_text_file(path.string() + ".json", header.dump() + "\n");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!out) throw IoError("write failed for " + path.string());
}

inline Tensor read_tensor(const fs::path& path) {
  const fs::path header_path = path.string() + ".json";
  if (!fs::exists(path)) throw ParseError(path.string() + ": file not found");
  const json h = read_json_file(header_path);
  Tensor t;
  try {
    if (!h.is_object()) throw ParseError("header is not an object");
    if (h.at("dtype").get<std::string>() != "float32") throw ParseError("dtype must be float32");
    if (h.contains("layout") && h.at("layout").get<std::string>() != "row-major")
      throw ParseError("layout must be row-major");
    t.shape = h.at("shape").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw ParseError(header_path.string() + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(header_path.string() + ": " + e.what());
  }
  const std::size_t n = t.element_count();
  const auto bytes = fs::file_size(path);
  if (bytes != n * sizeof(float))
    throw ParseError(path.string() + ": payload has " + std::to_string(bytes) + " bytes, header implies " +
                     std::to_string(n * sizeof(float)));
  t.data.resize(n);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!in) throw IoError("read failed for " + path.string());
  return t;
}

// ---------------------------------------------------------------------------
// 8-bit PNG. Values are clamped to [0,1] and rounded to k/255; no transfer
// curve is applied, so stored bytes are the display values themselves.

inline std::uint8_t quantize_unit(double v) {
  const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

/// Rounds every value to the nearest representable 8-bit level.
inline Image quantize_image(const Image& im) {
  Image out = im;
  for (double& v : out.data) v = quantize_unit(v) / 255.0;
  return out;
}

inline void write_png(const fs::path& path, const Image& im) {
  if (im.channels != 1 && im.channels != 3) throw DimensionError("write_png: image must have 1 or 3 channels");
  std::vector<std::uint8_t> bytes(im.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize_unit(im.data[i]);
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(im.width);
  img.height = static_cast<png_uint_32>(im.height);
  img.format = im.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, bytes.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

/// Reads any PNG as 3-channel RGB in [0,1].
inline Image read_png(const fs::path& path) {
  if (!fs::exists(path)) throw ParseError(path.string() + ": file not found");
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw ParseError(path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ParseError(path.string() + ": " + img.message);
  }
  Image out(static_cast<int>(img.width), static_cast<int>(img.height), 3);
  for (std::size_t i = 0; i < bytes.size(); ++i) out.data[i] = bytes[i] / 255.0;
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian scenes as binary little-endian PLY, 3DGS property naming.

enum class PlyPrecision { Float32, Float64 };

inline std::vector<std::string> ply_property_names(int sh_degree) {
  std::vector<std::string> names{"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
  const int rest = 3 * (sh_coeff_count(sh_degree) - 1);
  for (int i = 0; i < rest; ++i) names.push_back("f_rest_" + std::to_string(i));
  for (const char* n : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "confidence"})
    names.emplace_back(n);
  return names;
}

namespace ply_detail {

// Row of property values in file order for Gaussian i.
inline void row(const GaussianSet& g, std::size_t i, std::vector<double>& out) {
  out.clear();
  for (int c = 0; c < 3; ++c) out.push_back(g.positions[3 * i + c]);
  out.insert(out.end(), {0.0, 0.0, 0.0});
  const int k = g.coeffs_per_channel();
  const auto sh = g.sh(i);
  for (int c = 0; c < 3; ++c) out.push_back(sh[static_cast<std::size_t>(c * k)]);
  // f_rest is channel-major: all rest coefficients of R, then G, then B.
  for (int c = 0; c < 3; ++c)
    for (int j = 1; j < k; ++j) out.push_back(sh[static_cast<std::size_t>(c * k + j)]);
  out.push_back(g.logit_opacity[i]);
  for (int c = 0; c < 3; ++c) out.push_back(g.log_scale[3 * i + c]);
  for (int c = 0; c < 4; ++c) out.push_back(g.raw_quaternion[4 * i + c]);
  out.push_back(g.confidence[i]);
}

}  // namespace ply_detail

inline void save_gaussians_ply(const GaussianSet& g, const fs::path& path,
                               PlyPrecision precision = PlyPrecision::Float64) {
  if (g.empty()) throw EmptySceneError("save_gaussians_ply: empty Gaussian set");
  if (!g.consistent()) throw DimensionError("save_gaussians_ply: inconsistent buffers");
  const bool f64 = precision == PlyPrecision::Float64;
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\nelement vertex " << g.size() << "\n";
  for (const auto& n : ply_property_names(g.sh_degree)) header << "property " << (f64 ? "double " : "float ") << n << "\n";
  header << "end_header\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << header.str();
  std::vector<double> r;
  std::vector<char> buf;
  for (std::size_t i = 0; i < g.size(); ++i) {
    ply_detail::row(g, i, r);
    for (double v : r) {
      if (f64) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(double));
      } else {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), sizeof(float));
      }
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

inline GaussianSet load_gaussians_ply(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto fail = [&](const std::string& msg) { return ParseError(path.string() + ": " + msg); };
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw fail("missing 'ply' magic");
  std::size_t count = 0;
  bool have_vertex = false, in_vertex = false;
  struct Prop {
    std::string name;
    bool f64;
  };
  std::vector<Prop> props;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian") throw fail("only binary_little_endian PLY is supported");
    } else if (kw == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex";
      if (in_vertex) {
        ls >> count;
        have_vertex = true;
      } else {
        std::size_t other = 0;
        ls >> other;
        if (other != 0) throw fail("unsupported non-empty element '" + name + "'");
      }
    } else if (kw == "property") {
      std::string type, name;
      ls >> type >> name;
      if (!in_vertex) continue;
      if (type == "float" || type == "float32")
        props.push_back({name, false});
      else if (type == "double" || type == "float64")
        props.push_back({name, true});
      else
        throw fail("unsupported property type '" + type + "' for " + name);
    } else if (kw != "comment" && kw != "obj_info" && !kw.empty()) {
      throw fail("unexpected header line '" + line + "'");
    }
  }
  if (!have_vertex) throw fail("no vertex element");

  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < props.size(); ++i) col[props[i].name] = i;
  int rest = 0;
  while (col.count("f_rest_" + std::to_string(rest))) ++rest;
  int degree = -1;
  for (int d = 0; d <= kMaxShDegree; ++d)
    if (3 * (sh_coeff_count(d) - 1) == rest) degree = d;
  if (degree < 0) throw fail("f_rest count " + std::to_string(rest) + " matches no SH degree up to 3");
  for (const char* req : {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
                          "rot_0", "rot_1", "rot_2", "rot_3"})
    if (!col.count(req)) throw fail(std::string("missing property ") + req);

  std::size_t row_bytes = 0;
  for (const auto& p : props) row_bytes += p.f64 ? 8 : 4;
  std::vector<char> raw(row_bytes * count);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw fail("truncated vertex data");

  GaussianSet g(count, degree);
  std::vector<double> vals(props.size());
  const int k = g.coeffs_per_channel();
  for (std::size_t i = 0; i < count; ++i) {
    const char* p = raw.data() + i * row_bytes;
    for (std::size_t j = 0; j < props.size(); ++j) {
      if (props[j].f64) {
        std::memcpy(&vals[j], p, 8);
        p += 8;
      } else {
        float f;
        std::memcpy(&f, p, 4);
        vals[j] = f;
        p += 4;
      }
    }
    auto v = [&](const std::string& n) { return vals[col.at(n)]; };
    g.set_position(i, Eigen::Vector3d(v("x"), v("y"), v("z")));
    auto sh = g.sh(i);
    for (int c = 0; c < 3; ++c) {
      sh[static_cast<std::size_t>(c * k)] = v("f_dc_" + std::to_string(c));
      for (int j = 1; j < k; ++j) sh[static_cast<std::size_t>(c * k + j)] = v("f_rest_" + std::to_string(c * (k - 1) + j - 1));
    }
    g.logit_opacity[i] = v("opacity");
    for (int c = 0; c < 3; ++c) g.log_scale[3 * i + c] = v("scale_" + std::to_string(c));
    for (int c = 0; c < 4; ++c) g.raw_quaternion[4 * i + c] = v("rot_" + std::to_string(c));
    g.confidence[i] = col.count("confidence") ? v("confidence") : 0.0;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Capture bundles.

struct BundleView {
  Image image;
  DepthMap depth;
  AttributeMaps attrs;
  std::optional<DepthMap> pseudo_depth;
};

struct CaptureBundle {
  std::string name = "scene";
  std::string units = "world units";
  std::vector<BundleView> views;
  std::vector<Camera> cameras;  // predicted, used for lifting
  std::optional<std::vector<Camera>> gt_cameras;
  std::optional<std::vector<Camera>> pseudo_cameras;

  int sh_degree() const { return views.empty() ? 1 : views.front().attrs.sh_degree; }

  void validate() const {
    if (views.empty()) throw DimensionError("bundle '" + name + "' has no views");
    if (cameras.size() != views.size()) throw DimensionError("bundle: camera count differs from view count");
    auto check_cams = [&](const std::optional<std::vector<Camera>>& c, const char* what) {
      if (c && c->size() != views.size())
        throw DimensionError(std::string("bundle: ") + what + " camera count differs from view count");
    };
    check_cams(gt_cameras, "ground-truth");
    check_cams(pseudo_cameras, "pseudo");
    for (std::size_t v = 0; v < views.size(); ++v) {
      const auto& bv = views[v];
      const int w = bv.image.width, h = bv.image.height;
      const std::string tag = "bundle view " + std::to_string(v);
      if (bv.image.channels != 3) throw DimensionError(tag + ": image must be RGB");
      if (bv.depth.width != w || bv.depth.height != h || bv.depth.depth.size() != bv.depth.size() ||
          bv.depth.confidence.size() != bv.depth.size() || bv.depth.valid.size() != bv.depth.size())
        throw DimensionError(tag + ": depth map shape differs from image");
      if (bv.attrs.width != w || bv.attrs.height != h || !bv.attrs.consistent())
        throw DimensionError(tag + ": attribute maps shape differs from image");
      if (bv.attrs.sh_degree != views.front().attrs.sh_degree) throw DimensionError(tag + ": SH degree differs");
      if (bv.pseudo_depth && (bv.pseudo_depth->width != w || bv.pseudo_depth->height != h))
        throw DimensionError(tag + ": pseudo depth shape differs from image");
      if (cameras[v].width != w || cameras[v].height != h) throw DimensionError(tag + ": camera size differs from image");
    }
  }
};

namespace bundle_detail {

inline Tensor to_tensor(const std::vector<float>& data, std::vector<std::size_t> shape) {
  Tensor t;
  t.shape = std::move(shape);
  t.data = data;
  return t;
}

inline std::vector<float> expect(const fs::path& path, std::vector<std::size_t> shape) {
  Tensor t = read_tensor(path);
  if (t.shape != shape) {
    std::string want, got;
    for (auto s : shape) want += std::to_string(s) + " ";
    for (auto s : t.shape) got += std::to_string(s) + " ";
    throw ParseError(path.string() + ": shape [" + got + "] expected [" + want + "]");
  }
  return std::move(t.data);
}

inline void save_depth(const fs::path& dir, const std::string& stem, const DepthMap& d) {
  const std::vector<std::size_t> shape{static_cast<std::size_t>(d.height), static_cast<std::size_t>(d.width)};
  std::vector<float> depth(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) depth[i] = d.valid[i] ? d.depth[i] : 0.0f;
  write_tensor(dir / (stem + ".f32"), to_tensor(depth, shape));
  write_tensor(dir / (stem + "_conf.f32"), to_tensor(d.confidence, shape));
}

inline DepthMap load_depth(const fs::path& dir, const std::string& stem, int w, int h) {
  DepthMap d(w, h);
  const std::vector<std::size_t> shape{static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
  d.depth = expect(dir / (stem + ".f32"), shape);
  const fs::path conf = dir / (stem + "_conf.f32");
  if (fs::exists(conf))
    d.confidence = expect(conf, shape);
  else
    d.confidence.assign(d.size(), 1.0f);
  d.refresh_validity();
  return d;
}

}  // namespace bundle_detail

/// Layout:
///   meta.json, cameras.txt, [cameras_gt.txt], [cameras_pseudo.txt]
///   views/<i>/image.png, depth.f32, depth_conf.f32, attr_opacity.f32,
///   attr_rotation.f32, attr_scale.f32, attr_sh.f32, attr_confidence.f32,
///   [pseudo_depth.f32, pseudo_depth_conf.f32]
/// Every .f32 file has a .f32.json header next to it.
inline void save_bundle(const CaptureBundle& b, const fs::path& dir) {
  using namespace bundle_detail;
  b.validate();
  fs::create_directories(dir / "views");
  json meta = {{"name", b.name}, {"units", b.units}, {"n_views", b.views.size()}, {"sh_degree", b.sh_degree()}};
  write_text_file(dir / "meta.json", meta.dump(2) + "\n");
  write_trajectory((dir / "cameras.txt").string(), b.cameras);
  if (b.gt_cameras) write_trajectory((dir / "cameras_gt.txt").string(), *b.gt_cameras);
  if (b.pseudo_cameras) write_trajectory((dir / "cameras_pseudo.txt").string(), *b.pseudo_cameras);
  for (std::size_t v = 0; v < b.views.size(); ++v) {
    const auto& bv = b.views[v];
    const fs::path vd = dir / "views" / std::to_string(v);
    fs::create_directories(vd);
    write_png(vd / "image.png", bv.image);
    save_depth(vd, "depth", bv.depth);
    const auto h = static_cast<std::size_t>(bv.image.height), w = static_cast<std::size_t>(bv.image.width);
    const auto& a = bv.attrs;
    write_tensor(vd / "attr_opacity.f32", to_tensor(a.logit_opacity, {h, w}));
    write_tensor(vd / "attr_rotation.f32", to_tensor(a.raw_quaternion, {h, w, 4}));
    write_tensor(vd / "attr_scale.f32", to_tensor(a.log_scale, {h, w, 3}));
    write_tensor(vd / "attr_sh.f32",
                 to_tensor(a.sh_coeffs, {h, w, 3, static_cast<std::size_t>(sh_coeff_count(a.sh_degree))}));
    write_tensor(vd / "attr_confidence.f32", to_tensor(a.confidence, {h, w}));
    if (bv.pseudo_depth) save_depth(vd, "pseudo_depth", *bv.pseudo_depth);
  }
}

inline CaptureBundle load_bundle(const fs::path& dir) {
  using namespace bundle_detail;
  if (!fs::is_directory(dir)) throw IoError("bundle directory not found: " + dir.string());
  const fs::path meta_path = dir / "meta.json";
  const json meta = read_json_file(meta_path);
  CaptureBundle b;
  std::size_t n_views = 0;
  int degree = 1;
  try {
    b.name = meta.value("name", std::string("scene"));
    b.units = meta.value("units", std::string("world units"));
    n_views = meta.at("n_views").get<std::size_t>();
    degree = meta.value("sh_degree", 1);
  } catch (const json::exception& e) {
    throw ParseError(meta_path.string() + ": " + e.what());
  }
  check_sh_degree(degree);
  if (n_views == 0) throw ParseError(meta_path.string() + ": n_views must be positive");

  const fs::path cams_path = dir / "cameras.txt";
  if (!fs::exists(cams_path)) throw ParseError(cams_path.string() + ": file not found");
  b.cameras = read_trajectory(cams_path.string());
  if (fs::exists(dir / "cameras_gt.txt")) b.gt_cameras = read_trajectory((dir / "cameras_gt.txt").string());
  if (fs::exists(dir / "cameras_pseudo.txt"))
    b.pseudo_cameras = read_trajectory((dir / "cameras_pseudo.txt").string());

  b.views.resize(n_views);
  parallel_for(n_views, [&](std::size_t v) {
    const fs::path vd = dir / "views" / std::to_string(v);
    auto& bv = b.views[v];
    bv.image = read_png(vd / "image.png");
    const int w = bv.image.width, h = bv.image.height;
    const auto hs = static_cast<std::size_t>(h), ws = static_cast<std::size_t>(w);
    bv.depth = load_depth(vd, "depth", w, h);
    AttributeMaps a(w, h, degree);
    a.logit_opacity = expect(vd / "attr_opacity.f32", {hs, ws});
    a.raw_quaternion = expect(vd / "attr_rotation.f32", {hs, ws, 4});
    a.log_scale = expect(vd / "attr_scale.f32", {hs, ws, 3});
    a.sh_coeffs = expect(vd / "attr_sh.f32", {hs, ws, 3, static_cast<std::size_t>(sh_coeff_count(degree))});
    a.confidence = expect(vd / "attr_confidence.f32", {hs, ws});
    bv.attrs = std::move(a);
    if (fs::exists(vd / "pseudo_depth.f32")) bv.pseudo_depth = load_depth(vd, "pseudo_depth", w, h);
  });
  b.validate();
  return b;
}

}  // namespace splatvox
