#include "occfeat/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "occfeat/tensor_io.hpp"

namespace occfeat::data {
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

fs::path file(const fs::path& dir, const std::string& id, const std::string& suffix) {
  return dir / (id + suffix);
}

std::string cam_suffix(std::size_t k, const char* kind) {
  return ".cam" + std::to_string(k) + "." + kind + ".oft";
}

Tensor read_checked(const fs::path& path, const Shape& expected) {
  Tensor t = read_oft(path);
  if (t.dims() != expected) {
    throw FormatError("OFT1 " + path.string() + ": dims " + shape_string(t.dims()) +
                      ", expected " + shape_string(expected));
  }
  return t;
}

}  // namespace

std::string format_rig(const std::vector<geom::CameraModel>& cameras) {
  std::string out;
  char buf[128];
  for (const auto& c : cameras) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g", c.fx, c.fy, c.cx, c.cy);
    out += buf;
    std::snprintf(buf, sizeof buf, " %zu %zu %zu %zu", c.image_width, c.image_height,
                  c.feature_width, c.feature_height);
    out += buf;
    const auto& r = c.ego_to_camera.rotation;
    const auto& t = c.ego_to_camera.translation;
    for (std::size_t row = 0; row < 3; ++row) {
      for (std::size_t col = 0; col < 3; ++col) {
        std::snprintf(buf, sizeof buf, " %.17g", r(row, col));
        out += buf;
      }
      std::snprintf(buf, sizeof buf, " %.17g", t[row]);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::vector<geom::CameraModel> parse_rig(const std::string& text, const std::string& origin) {
  std::vector<geom::CameraModel> cams;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream in(line);
    geom::CameraModel c;
    in >> c.fx >> c.fy >> c.cx >> c.cy >> c.image_width >> c.image_height >> c.feature_width >>
        c.feature_height;
    auto& r = c.ego_to_camera.rotation;
    auto& t = c.ego_to_camera.translation;
    for (std::size_t row = 0; row < 3 && in; ++row) {
      in >> r(row, 0) >> r(row, 1) >> r(row, 2) >> t[row];
    }
    std::string extra;
    if (!in || (in >> extra)) {
      throw std::runtime_error(origin + ": camera line " + std::to_string(cams.size() + 1) +
                               " must have 20 values");
    }
    try {
      c.validate();
    } catch (const std::exception& e) {
      throw std::runtime_error(origin + ": " + e.what());
    }
    cams.push_back(c);
  }
  if (cams.empty()) throw std::runtime_error(origin + ": no cameras");
  return cams;
}

void write_dataset(const std::vector<synth::SceneSample>& samples, const GridSpec& grid,
                   const fs::path& dir) {
  fs::create_directories(dir);
  std::string manifest;
  for (const auto& s : samples) {
    write_oft(file(dir, s.id, ".points.oft"), s.points, Dtype::f64);
    for (std::size_t k = 0; k < s.cameras.size(); ++k) {
      write_oft(file(dir, s.id, cam_suffix(k, "feat")), s.teacher_maps[k], Dtype::f32);
      write_oft(file(dir, s.id, cam_suffix(k, "img")), s.images[k], Dtype::f32);
    }
    write_oft(file(dir, s.id, ".labels.oft"), s.bev_labels, Dtype::f64);
    write_text(file(dir, s.id, ".rig.txt"), format_rig(s.cameras));
    manifest += s.id + "\n";
  }
  write_text(dir / "grid.txt", format_grid(grid));
  write_text(dir / "manifest.txt", manifest);
}

std::vector<std::string> read_manifest(const fs::path& dir) {
  std::istringstream in(read_text(dir / "manifest.txt"));
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

GridSpec read_grid(const fs::path& dir) {
  const auto path = dir / "grid.txt";
  try {
    return parse_grid(read_text(path));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

synth::SceneSample read_sample(const fs::path& dir, const std::string& id, const GridSpec& grid) {
  synth::SceneSample s;
  s.id = id;
  s.points = read_oft(file(dir, id, ".points.oft"));
  if (s.points.ndim() != 2 || s.points.dim(1) != 3) {
    throw FormatError("OFT1 " + file(dir, id, ".points.oft").string() + ": points must be [N,3]");
  }
  const auto rig_path = file(dir, id, ".rig.txt");
  s.cameras = parse_rig(read_text(rig_path), rig_path.string());
  std::size_t dim = 0;
  for (std::size_t k = 0; k < s.cameras.size(); ++k) {
    const auto& c = s.cameras[k];
    const auto feat_path = file(dir, id, cam_suffix(k, "feat"));
    Tensor feat = read_oft(feat_path);
    if (k == 0 && feat.ndim() == 3) dim = feat.dim(0);
    if (feat.dims() != Shape{dim, c.feature_height, c.feature_width}) {
      throw FormatError("OFT1 " + feat_path.string() + ": dims " + shape_string(feat.dims()) +
                        " do not match the camera");
    }
    s.teacher_maps.push_back(std::move(feat));
    s.images.push_back(read_checked(file(dir, id, cam_suffix(k, "img")),
                                    {dim, c.image_height, c.image_width}));
  }
  s.bev_labels = read_checked(file(dir, id, ".labels.oft"), {grid.h_cells, grid.w_cells});
  return s;
}

DatasetFiles read_dataset(const fs::path& dir) {
  DatasetFiles out;
  out.grid = read_grid(dir);
  for (const auto& id : read_manifest(dir)) out.samples.push_back(read_sample(dir, id, out.grid));
  return out;
}

SampleTargets compute_targets(const synth::SceneSample& sample, const GridSpec& grid) {
  SampleTargets t;
  t.occupancy = targets::voxelize(sample.points, grid);
  t.features = targets::build_feature_targets(t.occupancy, grid, sample.cameras, sample.teacher_maps);
  return t;
}

void write_targets(const fs::path& dir, const std::string& id, const SampleTargets& t) {
  write_oft(file(dir, id, ".occ.oft"), t.occupancy.data, Dtype::f64);
  write_oft(file(dir, id, ".ytgt.oft"), t.features.features, Dtype::f64);
  write_oft(file(dir, id, ".ymask.oft"), t.features.valid_mask, Dtype::f64);
}

SampleTargets read_targets(const fs::path& dir, const std::string& id, const GridSpec& grid) {
  const Shape vol{grid.z_cells, grid.h_cells, grid.w_cells};
  for (const char* suffix : {".occ.oft", ".ytgt.oft", ".ymask.oft"}) {
    if (!fs::exists(file(dir, id, suffix))) {
      throw std::runtime_error("missing target file " + file(dir, id, suffix).string() +
                               " (run `targets` first)");
    }
  }
  SampleTargets t;
  t.occupancy.data = read_checked(file(dir, id, ".occ.oft"), vol);
  t.features.valid_mask = read_checked(file(dir, id, ".ymask.oft"), vol);
  t.features.features = read_oft(file(dir, id, ".ytgt.oft"));
  const auto& f = t.features.features;
  if (f.ndim() != 4 || Shape(f.dims().begin() + 1, f.dims().end()) != vol) {
    throw FormatError("OFT1 " + file(dir, id, ".ytgt.oft").string() + ": dims " +
                      shape_string(f.dims()) + " do not match the grid");
  }
  return t;
}

}  // namespace occfeat::data
