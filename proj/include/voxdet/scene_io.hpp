#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxdet/scene.hpp"

namespace voxdet {

// On-disk scene bundle, one directory per scene:
//   scene.json    cameras (row-major matrices, meters), boxes, grid, seeds
//   view_XXX.ppm  8-bit binary PPM (P6), lossless
//   depth_XXX.f32 little-endian float32 raster, row-major, distance along ray
//   depth_XXX.dims / occupancy.dims  text sidecar: dimensions
//   occupancy.u8  little-endian 8-bit occupancy, x fastest, then y, then z
// Byte layouts are documented in docs/formats.md.

namespace fs = std::filesystem;

inline void write_ppm(const fs::path& path, const MatXd& image, int width, int height) {
  VOXDET_REQUIRE(image.rows() == static_cast<Eigen::Index>(width) * height && image.cols() == 3,
                 "write_ppm: image shape mismatch");
  std::ofstream out(path, std::ios::binary);
  VOXDET_REQUIRE(out.good(), "write_ppm: cannot open " + path.string());
  out << "P6\n" << width << " " << height << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(width) * 3);
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u)
      for (int c = 0; c < 3; ++c) {
        const double x = std::clamp(image(v * width + u, c), 0.0, 1.0);
        row[static_cast<std::size_t>(u) * 3 + c] =
            static_cast<unsigned char>(std::lround(x * 255.0));
      }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

inline MatXd read_ppm(const fs::path& path, int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  VOXDET_REQUIRE(in.good(), "read_ppm: cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  in >> magic >> width >> height >> maxval;
  VOXDET_REQUIRE(magic == "P6" && maxval == 255, "read_ppm: unsupported format in " + path.string());
  in.get();  // single whitespace after header
  std::vector<unsigned char> buf(static_cast<std::size_t>(width) * height * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  VOXDET_REQUIRE(in.gcount() == static_cast<std::streamsize>(buf.size()),
                 "read_ppm: truncated file " + path.string());
  MatXd image(width * height, 3);
  for (Eigen::Index i = 0; i < image.rows(); ++i)
    for (int c = 0; c < 3; ++c) image(i, c) = buf[static_cast<std::size_t>(i) * 3 + c] / 255.0;
  return image;
}

// Raw little-endian float32 array plus a text sidecar holding the dims.
inline void write_raw_f32(const fs::path& path, const VecXd& data,
                          const std::vector<int>& dims) {
  std::ofstream out(path, std::ios::binary);
  VOXDET_REQUIRE(out.good(), "write_raw_f32: cannot open " + path.string());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const float f = static_cast<float>(data(i));
    out.write(reinterpret_cast<const char*>(&f), sizeof(float));
  }
  std::ofstream side(fs::path(path).replace_extension(".dims"));
  for (std::size_t i = 0; i < dims.size(); ++i) side << dims[i] << (i + 1 < dims.size() ? " " : "\n");
}

inline VecXd read_raw_f32(const fs::path& path, std::vector<int>* dims = nullptr) {
  if (dims) {
    std::ifstream side(fs::path(path).replace_extension(".dims"));
    VOXDET_REQUIRE(side.good(), "read_raw_f32: missing dims sidecar for " + path.string());
    dims->clear();
    int d;
    while (side >> d) dims->push_back(d);
  }
  std::ifstream in(path, std::ios::binary);
  VOXDET_REQUIRE(in.good(), "read_raw_f32: cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = in.tellg();
  in.seekg(0);
  VOXDET_REQUIRE(bytes % 4 == 0, "read_raw_f32: size not a multiple of 4");
  VecXd out(static_cast<Eigen::Index>(bytes) / 4);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    float f;
    in.read(reinterpret_cast<char*>(&f), sizeof(float));
    out(i) = f;
  }
  return out;
}

inline void write_raw_u8(const fs::path& path, const VecXi& data, const std::vector<int>& dims) {
  std::ofstream out(path, std::ios::binary);
  VOXDET_REQUIRE(out.good(), "write_raw_u8: cannot open " + path.string());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const unsigned char b = static_cast<unsigned char>(data(i));
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
  std::ofstream side(fs::path(path).replace_extension(".dims"));
  for (std::size_t i = 0; i < dims.size(); ++i) side << dims[i] << (i + 1 < dims.size() ? " " : "\n");
}

inline VecXi read_raw_u8(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  VOXDET_REQUIRE(in.good(), "read_raw_u8: cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = in.tellg();
  in.seekg(0);
  VecXi out(static_cast<Eigen::Index>(bytes));
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    unsigned char b;
    in.read(reinterpret_cast<char*>(&b), 1);
    out(i) = b;
  }
  return out;
}

namespace detail {
inline nlohmann::json vec3_json(const Vec3d& v) { return {v.x(), v.y(), v.z()}; }
inline Vec3d vec3_from_json(const nlohmann::json& j) { return Vec3d(j[0], j[1], j[2]); }
}  // namespace detail

inline void save_scene_bundle(const fs::path& dir, const SceneBundle& bundle,
                              const GridSpecd& grid) {
  fs::create_directories(dir);
  nlohmann::json j;
  j["seed"] = bundle.spec.seed;
  j["room"] = detail::vec3_json(bundle.spec.room);
  j["n_input_views"] = bundle.n_input_views;
  for (int f = 0; f < 6; ++f) j["wall_albedos"].push_back(detail::vec3_json(bundle.spec.wall_albedos[f]));
  for (const auto& obj : bundle.spec.objects) {
    nlohmann::json o;
    o["center"] = detail::vec3_json(obj.box.center);
    o["size"] = detail::vec3_json(obj.box.size);
    o["label"] = obj.box.label;
    o["albedo"] = detail::vec3_json(obj.albedo);
    j["objects"].push_back(o);
  }
  j["grid"] = {{"nx", grid.nx},
               {"ny", grid.ny},
               {"nz", grid.nz},
               {"origin", detail::vec3_json(grid.origin)},
               {"voxel_size", detail::vec3_json(grid.voxel_size)}};
  char name[64];
  for (std::size_t i = 0; i < bundle.views.size(); ++i) {
    const auto& view = bundle.views[i];
    nlohmann::json cam;
    cam["fx"] = view.intrinsics.fx;
    cam["fy"] = view.intrinsics.fy;
    cam["cx"] = view.intrinsics.cx;
    cam["cy"] = view.intrinsics.cy;
    cam["width"] = view.intrinsics.width;
    cam["height"] = view.intrinsics.height;
    // world-to-camera rotation, row-major
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) cam["rotation"].push_back(view.pose.rotation(r, c));
    cam["translation"] = detail::vec3_json(view.pose.translation);
    std::snprintf(name, sizeof(name), "view_%03zu.ppm", i);
    cam["image"] = name;
    write_ppm(dir / name, view.image, view.intrinsics.width, view.intrinsics.height);
    std::snprintf(name, sizeof(name), "depth_%03zu.f32", i);
    cam["depth"] = name;
    write_raw_f32(dir / name, bundle.depth_maps[i],
                  {view.intrinsics.height, view.intrinsics.width});
    j["cameras"].push_back(cam);
  }
  write_raw_u8(dir / "occupancy.u8", bundle.occupancy, {grid.nx, grid.ny, grid.nz});
  j["occupancy"] = "occupancy.u8";
  std::ofstream out(dir / "scene.json");
  out << j.dump(1) << "\n";
}

inline SceneBundle load_scene_bundle(const fs::path& dir, GridSpecd* grid_out = nullptr) {
  std::ifstream in(dir / "scene.json");
  VOXDET_REQUIRE(in.good(), "load_scene_bundle: missing scene.json in " + dir.string());
  nlohmann::json j = nlohmann::json::parse(in);
  SceneBundle bundle;
  bundle.spec.seed = j["seed"];
  bundle.spec.room = detail::vec3_from_json(j["room"]);
  bundle.n_input_views = j["n_input_views"];
  for (int f = 0; f < 6; ++f) bundle.spec.wall_albedos[f] = detail::vec3_from_json(j["wall_albedos"][f]);
  if (j.contains("objects"))
    for (const auto& o : j["objects"]) {
      SceneObject obj;
      obj.box.center = detail::vec3_from_json(o["center"]);
      obj.box.size = detail::vec3_from_json(o["size"]);
      obj.box.label = o["label"];
      obj.albedo = detail::vec3_from_json(o["albedo"]);
      bundle.spec.objects.push_back(obj);
      bundle.boxes.push_back(obj.box);
    }
  GridSpecd grid;
  grid.nx = j["grid"]["nx"];
  grid.ny = j["grid"]["ny"];
  grid.nz = j["grid"]["nz"];
  grid.origin = detail::vec3_from_json(j["grid"]["origin"]);
  grid.voxel_size = detail::vec3_from_json(j["grid"]["voxel_size"]);
  if (grid_out) *grid_out = grid;
  for (const auto& cam : j["cameras"]) {
    CameraViewd view;
    view.intrinsics.fx = cam["fx"];
    view.intrinsics.fy = cam["fy"];
    view.intrinsics.cx = cam["cx"];
    view.intrinsics.cy = cam["cy"];
    view.intrinsics.width = cam["width"];
    view.intrinsics.height = cam["height"];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) view.pose.rotation(r, c) = cam["rotation"][r * 3 + c];
    view.pose.translation = detail::vec3_from_json(cam["translation"]);
    int w = 0, h = 0;
    view.image = read_ppm(dir / cam["image"].get<std::string>(), w, h);
    VOXDET_REQUIRE(w == view.intrinsics.width && h == view.intrinsics.height,
                   "load_scene_bundle: image size mismatch");
    bundle.views.push_back(std::move(view));
    bundle.depth_maps.push_back(read_raw_f32(dir / cam["depth"].get<std::string>()));
  }
  bundle.occupancy = read_raw_u8(dir / "occupancy.u8");
  return bundle;
}

// Dataset layout: <root>/train/scene_0000, ... and <root>/heldout/scene_0000, ...
inline std::vector<fs::path> list_scene_dirs(const fs::path& root) {
  std::vector<fs::path> dirs;
  if (!fs::exists(root)) return dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "scene.json")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace voxdet
