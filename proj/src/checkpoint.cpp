#include "occfeat/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "occfeat/tensor_io.hpp"

namespace occfeat {
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

bool is_pretrain_head_parameter(const std::string& name) {
  return name.rfind("unsplat.", 0) == 0 || name.rfind("occ_head.", 0) == 0 ||
         name.rfind("feat_head.", 0) == 0;
}

void save_checkpoint(student::StudentNetwork& net, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& c = net.config();
  std::ostringstream arch;
  arch << "input_channels " << c.input_channels << "\n"
       << "encoder_channels " << c.encoder_channels << "\n"
       << "bev_channels " << c.bev_channels << "\n"
       << "teacher_dim " << c.teacher_dim << "\n"
       << "seg_classes " << c.seg_classes << "\n"
       << "pull_z_cells " << c.pull_z_cells << "\n";
  spit(dir / "student.txt", arch.str());
  spit(dir / "grid.txt", format_grid(c.grid));

  std::string manifest;
  for (auto* p : net.parameters()) {
    manifest += p->name + " " + std::to_string(p->value.ndim());
    for (auto d : p->value.dims()) manifest += " " + std::to_string(d);
    manifest += "\n";
    write_oft(dir / (p->name + ".oft"), p->value, Dtype::f64);
  }
  spit(dir / "manifest.txt", manifest);
}

student::StudentConfig read_student_config(const fs::path& dir) {
  student::StudentConfig c;
  const auto path = dir / "student.txt";
  std::istringstream in(slurp(path));
  std::map<std::string, std::size_t> kv;
  std::string key;
  std::size_t value = 0;
  while (in >> key >> value) kv[key] = value;
  auto get = [&](const char* k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw std::runtime_error(path.string() + ": missing " + k);
    return it->second;
  };
  c.input_channels = get("input_channels");
  c.encoder_channels = get("encoder_channels");
  c.bev_channels = get("bev_channels");
  c.teacher_dim = get("teacher_dim");
  c.seg_classes = get("seg_classes");
  c.pull_z_cells = get("pull_z_cells");
  try {
    c.grid = parse_grid(slurp(dir / "grid.txt"));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error((dir / "grid.txt").string() + ": " + e.what());
  }
  return c;
}

student::StudentNetwork load_checkpoint(const fs::path& dir, bool drop_pretrain_head) {
  const auto config = read_student_config(dir);
  const auto manifest_path = dir / "manifest.txt";
  std::map<std::string, Shape> entries;
  bool has_head = false;
  {
    std::istringstream in(slurp(manifest_path));
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string name;
      std::size_t ndim = 0;
      if (!(ls >> name)) continue;
      if (!(ls >> ndim)) throw std::runtime_error(manifest_path.string() + ": bad line '" + line + "'");
      Shape dims(ndim);
      for (auto& d : dims) {
        if (!(ls >> d)) throw std::runtime_error(manifest_path.string() + ": bad line '" + line + "'");
      }
      has_head = has_head || is_pretrain_head_parameter(name);
      entries[name] = dims;
    }
  }

  student::StudentNetwork net(config, 0, has_head && !drop_pretrain_head);
  for (auto* p : net.parameters()) {
    auto it = entries.find(p->name);
    if (it == entries.end()) {
      throw std::runtime_error(manifest_path.string() + ": missing parameter " + p->name);
    }
    if (it->second != p->value.dims()) {
      throw std::runtime_error(manifest_path.string() + ": " + p->name + " has dims " +
                               shape_string(it->second) + ", network expects " +
                               shape_string(p->value.dims()));
    }
    const auto file = dir / (p->name + ".oft");
    Tensor t = read_oft(file);
    if (t.dims() != p->value.dims()) {
      throw FormatError("OFT1 " + file.string() + ": dims " + shape_string(t.dims()) +
                        " disagree with the manifest");
    }
    p->value = std::move(t);
  }
  return net;
}

}  // namespace occfeat
